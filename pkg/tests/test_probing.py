import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pabest.belief import RateGrid
from pabest.likelihood import LikelihoodModel, success_probability
from pabest.probing import (
    GroundTruth, ProbeConfig, ProbeError, ReceivedPacket, SimulatedProber, VoidTrainError,
    compute_output_rate, decide, simulated_measure,
)
from pabest.topology import Topology

LM = LikelihoodModel()


def train(rate_mbps, n=25, size=1000, arrival_scale=1.0, jitter=None):
    tau = size * 8 / (rate_mbps * 1e6) * 1e9
    dep = [int(round(i * tau)) for i in range(n)]
    if jitter:
        for i, extra in jitter.items():
            dep[i] += extra
    arr = [10_000 + int(round(d * arrival_scale)) for d in dep]
    return [ReceivedPacket(i, d, a) for i, (d, a) in enumerate(zip(dep, arr))], tau


class TestProbeConfig:
    def test_gap(self):
        assert ProbeConfig().inter_packet_gap(8) == pytest.approx(1e-3)

    def test_bytes(self):
        cfg = ProbeConfig()
        assert (cfg.n_trains, cfg.train_length, cfg.packet_size) == (3, 25, 1000)
        assert cfg.bytes_per_measurement == 75_000

    @pytest.mark.parametrize("rate", [0, -5])
    def test_rate_must_be_positive(self, rate):
        with pytest.raises(ValueError):
            ProbeConfig().inter_packet_gap(rate)

    @pytest.mark.parametrize("kw", [{"n_trains": 0}, {"train_length": 1}, {"packet_size": 10},
                                    {"epsilon": 0}, {"slack": -1}])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            ProbeConfig(**kw)


class TestOutputRate:
    def test_identity_channel(self):
        pk, tau = train(40)
        r, n = compute_output_rate(pk, tau, 1000)
        assert r == pytest.approx(40, rel=1e-6) and n == 24

    def test_doubled_gaps(self):
        pk, tau = train(40, arrival_scale=2.0)
        r, _ = compute_output_rate(pk, tau, 1000)
        assert r == pytest.approx(20, rel=1e-6)

    def test_late_departure_excluded(self):
        pk, tau = train(8, n=5)
        # packet 3 leaves 0.5 tau late; its gap is invalid, and the arrival gap
        # pattern is exactly the formula's input
        pk[3] = ReceivedPacket(3, pk[3].departure_ns + 500_000, pk[3].arrival_ns + 500_000)
        pk[4] = ReceivedPacket(4, pk[4].departure_ns + 500_000, pk[4].arrival_ns + 500_000)
        r, n = compute_output_rate(pk, tau, 1000)
        assert n == 3
        gaps = [pk[1].arrival_ns - pk[0].arrival_ns, pk[2].arrival_ns - pk[1].arrival_ns,
                pk[4].arrival_ns - pk[3].arrival_ns]
        assert r == 3 * 8000 / sum(gaps) * 1e3

    def test_loss_excludes_spanning_gap(self):
        pk, tau = train(10, n=6)
        del pk[2]
        r, n = compute_output_rate(pk, tau, 1000)
        assert n == 3 and r == pytest.approx(10, rel=1e-6)

    def test_reordered_input(self):
        pk, tau = train(10, n=6)
        assert compute_output_rate(pk[::-1], tau, 1000) == compute_output_rate(pk, tau, 1000)

    def test_void(self):
        pk, tau = train(10, n=4)
        with pytest.raises(VoidTrainError):
            compute_output_rate(pk[:1], tau, 1000)
        with pytest.raises(VoidTrainError):
            compute_output_rate([pk[0], pk[2]], tau, 1000)

    @given(st.lists(st.integers(0, 3_000_000), min_size=2, max_size=30), st.integers(1, 29))
    def test_more_invalid_never_grows_valid_set(self, delays, extra):
        n = len(delays)
        tau = 1_000_000
        base = np.cumsum([0] + [tau] * (n - 1))
        dep_a = base + np.array(delays)
        dep_b = dep_a.copy()
        dep_b[min(extra, n - 1):] += 5 * tau  # one more late departure
        def valid(dep):
            pk = [ReceivedPacket(i, int(d), int(d) + 7) for i, d in enumerate(dep)]
            try:
                return compute_output_rate(pk, tau, 1000)[1]
            except VoidTrainError:
                return 0
        assert valid(dep_b) <= valid(dep_a)


class TestDecide:
    def test_success(self):
        assert decide(60, [59, 58, 61], 5) == 1

    def test_failure(self):
        assert decide(60, [40, 42, 41], 5) == 0

    def test_empty(self):
        with pytest.raises(ProbeError):
            decide(60, [], 5)

    @given(st.lists(st.floats(0, 200), min_size=1, max_size=7), st.randoms())
    def test_order_invariant(self, rates, rnd):
        shuffled = rates[:]
        rnd.shuffle(shuffled)
        assert decide(50, rates, 5) == decide(50, shuffled, 5)


class TestSimulated:
    gt = GroundTruth({"l": 50.0}, {"p": 50.0})

    def freq(self, rate, n=10_000, seed=0):
        rng = np.random.default_rng(seed)
        return np.mean([simulated_measure(self.gt, "p", rate, LM, rng).z for _ in range(n)])

    def test_at_pab(self):
        assert self.freq(50) == pytest.approx(0.5, abs=0.02)

    def test_far_below(self):
        assert self.freq(-50) == pytest.approx(0.98, abs=0.02)

    def test_far_above(self):
        assert self.freq(150) == pytest.approx(0.02, abs=0.02)

    @given(st.floats(1, 100), st.integers(0, 2**31))
    @settings(max_examples=5, deadline=None)
    def test_matches_model(self, rate, seed):
        assert self.freq(rate, seed=seed) == pytest.approx(success_probability(LM, rate, 50), abs=0.02)

    def test_byte_accounting_and_unknown_path(self):
        m = simulated_measure(self.gt, "p", 10, LM, np.random.default_rng(0))
        assert m.bytes_sent == 75_000
        with pytest.raises(KeyError):
            simulated_measure(self.gt, "q", 10, LM, np.random.default_rng(0))

    def test_prober_is_seeded(self):
        a = SimulatedProber(self.gt, LM, seed=4)
        b = SimulatedProber(self.gt, LM, seed=4)
        assert [a.measure("p", 50).z for _ in range(50)] == [b.measure("p", 50).z for _ in range(50)]


class TestGroundTruth:
    def test_min_over_links(self, two_path):
        gt = GroundTruth.from_topology(two_path, {"l1": 30, "l2": 50, "l3": 10})
        assert gt.paths == {"p1": 30.0, "p2": 10.0}
        assert gt.tight_links(two_path) == {"p1": "l1", "p2": "l3"}

    def test_missing_link(self, two_path):
        with pytest.raises(KeyError):
            GroundTruth.from_topology(two_path, {"l1": 30})

    def test_uniform_on_grid(self, two_path):
        gt = GroundTruth.uniform(two_path, 1, 100, np.random.default_rng(0))
        assert all(v == int(v) and 1 <= v <= 100 for v in gt.links.values())

    def test_load(self, two_path, tmp_path):
        f = tmp_path / "gt.json"
        f.write_text('{"l1": 60, "l2": 30, "l3": 80}')
        assert GroundTruth.load(f, two_path).paths == {"p1": 30.0, "p2": 30.0}
