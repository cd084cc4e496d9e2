import json

import numpy as np
import pytest

from pabest.belief import CredibleInterval, RateGrid
from pabest.estimator import (
    VALIDATION_PROBE, EstimationResult, EstimatorConfig, disjoint_paths, estimate, validate,
    validation_rates,
)
from pabest.experiments import stream_seeds
from pabest.likelihood import LikelihoodModel
from pabest.probing import GroundTruth, Measurement, ProbeError, SimulatedProber
from pabest.sampling import Strategy, StrategyConfig
from pabest.topology import Topology

SINGLE = Topology.from_link_lists(["a"], {"p": ["a"]})


def config(kind="wci", seed=0, **kw):
    return EstimatorConfig(strategy=StrategyConfig(Strategy(kind), seed=seed), **kw)


def run(t, gt, kind="wci", seed=0, **kw):
    sel, out = stream_seeds(seed)
    cfg = config(kind, sel, **kw)
    return estimate(t, cfg, SimulatedProber(gt, cfg.likelihood, cfg.probe, seed=out))


class FailingProber:
    def __init__(self, after):
        self.left = after

    def measure(self, path, rate, cfg=None):
        if self.left == 0:
            raise ProbeError("receiver went away")
        self.left -= 1
        return Measurement(path, rate, 1, bytes_sent=10)


def test_single_path_ensemble():
    gt = GroundTruth.from_topology(SINGLE, {"a": 50})
    hits = [run(SINGLE, gt, seed=s).paths["p"].interval.contains(50) for s in range(40)]
    assert np.mean(hits) >= 0.85


def test_zero_paths():
    t = Topology((), (), np.zeros((0, 0), dtype=np.int8))
    res = estimate(t, config(), FailingProber(0))
    assert res.converged and res.iterations == 0 and res.paths == {}


def test_cap_respected_exactly(two_path):
    gt = GroundTruth.from_topology(two_path, {"l1": 40, "l2": 70, "l3": 20})
    res = run(two_path, gt, max_iterations=2)
    assert res.iterations == 2 and not res.converged and not res.aborted


def test_cap_below_path_count(two_path):
    with pytest.raises(ValueError):
        estimate(two_path, config(max_iterations=1), FailingProber(5))


@pytest.mark.parametrize("kind", [s.value for s in Strategy])
def test_bookkeeping(two_path, kind):
    gt = GroundTruth.from_topology(two_path, {"l1": 40, "l2": 70, "l3": 20})
    res = run(two_path, gt, kind=kind, seed=2)
    assert res.converged
    assert len(res.log) == res.iterations == sum(r.measurements for r in res.paths.values())
    assert all(r.interval.size <= 10 for r in res.paths.values())
    grid = RateGrid().rates
    assert all(m.rate in grid for m in res.log)
    assert sum(r.bytes_sent for r in res.paths.values()) == 75_000 * res.iterations


def test_seq_finishes_paths_in_order(two_path):
    gt = GroundTruth.from_topology(two_path, {"l1": 40, "l2": 70, "l3": 20})
    res = run(two_path, gt, kind="seq")
    order = [m.path for m in res.log]
    assert order == sorted(order)


def test_reproducible(two_path):
    gt = GroundTruth.from_topology(two_path, {"l1": 40, "l2": 70, "l3": 20})
    assert run(two_path, gt, seed=9).to_json() == run(two_path, gt, seed=9).to_json()


def test_prober_failure_returns_partial(two_path):
    res = estimate(two_path, config(), FailingProber(3))
    assert res.aborted and not res.converged and res.iterations == 3
    assert "went away" in res.error
    assert set(res.paths) == {"p1", "p2"}


def test_result_serialization(two_path):
    gt = GroundTruth.from_topology(two_path, {"l1": 40, "l2": 70, "l3": 20})
    res = run(two_path, gt)
    again = EstimationResult.from_dict(json.loads(res.to_json()))
    assert again.to_json() == res.to_json()
    lines = res.summary_csv().splitlines()
    assert lines[0] == "path_id,beta_min,beta_max,measurements,bytes" and len(lines) == 3
    assert res.measurements_csv().count("\n") == res.iterations + 1
    assert "wall_time" not in res.to_dict()


class TestValidation:
    def test_rates_deduplicate(self):
        assert validation_rates(CredibleInterval(20, 20, 0.95), 5) == [
            (("beta_min", "beta_max"), 20), (("beta_min+eps", "beta_max+eps"), 25)]
        assert len(validation_rates(CredibleInterval(20, 30, 0.95), 5)) == 4

    def test_validation_train_size(self):
        assert VALIDATION_PROBE.bytes_per_measurement == 2_400_000

    def test_disjoint_paths(self, two_path):
        assert disjoint_paths(two_path, 4) == ["p1"]

    def test_gamma_bracketed(self):
        t = Topology.from_link_lists(
            ["a", "b", "c", "d"], {"p": ["a"], "q": ["b"], "r": ["c"], "s": ["d"]})
        lo, hi = [], []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            gt = GroundTruth.uniform(t, 1, 100, rng)
            res = run(t, gt, seed=seed)
            rep = validate(t, res, SimulatedProber(gt, LikelihoodModel(), seed=seed + 100), repeats=50)
            lo.append(rep.frequency("beta_min"))
            hi.append(rep.frequency("beta_max+eps"))
        assert np.mean(lo) >= 0.5 > np.mean(hi)

    def test_failures_counted(self, two_path):
        gt = GroundTruth.from_topology(two_path, {"l1": 40, "l2": 70, "l3": 20})
        res = run(two_path, gt)
        rep = validate(two_path, res, FailingProber(0), repeats=2)
        assert all(t.failures == 2 and t.trials == 0 for t in rep.tests)
