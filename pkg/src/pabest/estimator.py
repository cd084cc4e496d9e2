"""The estimation loop and post-hoc validation of its intervals."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .belief import CredibleInterval, Pmf, RateGrid, credible_interval
from .graph import BpSchedule, build
from .likelihood import LikelihoodModel
from .probing import Measurement, ProbeConfig, ProbeError, Prober
from .sampling import PathSelector, PathState, Strategy, StrategyConfig, select_rate
from .topology import Topology

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimatorConfig:
    grid: RateGrid = field(default_factory=RateGrid)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    likelihood: LikelihoodModel = field(default_factory=LikelihoodModel)
    bp: BpSchedule = field(default_factory=BpSchedule)
    max_iterations: int = 10000

    @property
    def epsilon(self) -> float:
        return self.probe.epsilon

    @property
    def gamma(self) -> float:
        return self.likelihood.gamma

    @property
    def eta(self) -> float:
        return self.strategy.eta

    @property
    def beta(self) -> float:
        return self.strategy.beta

    def to_dict(self) -> dict:
        s = self.strategy
        return {
            "grid": self.grid.to_dict(),
            "strategy": {"kind": s.kind.value, "seed": s.seed, "beta": s.beta, "eta": s.eta},
            "probe": vars(self.probe).copy(),
            "likelihood": self.likelihood.to_dict(),
            "bp": vars(self.bp).copy(),
            "max_iterations": self.max_iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatorConfig":
        return cls(
            grid=RateGrid.from_dict(d["grid"]),
            strategy=StrategyConfig(**d["strategy"]),
            probe=ProbeConfig(**d["probe"]),
            likelihood=LikelihoodModel.from_dict(d["likelihood"]),
            bp=BpSchedule(**d["bp"]),
            max_iterations=int(d["max_iterations"]),
        )


@dataclass
class PathResult:
    path: str
    interval: CredibleInterval
    marginal: Pmf
    measurements: int = 0
    bytes_sent: int = 0

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "interval": self.interval.to_dict(),
            "measurements": self.measurements,
            "bytes": self.bytes_sent,
            "marginal": self.marginal.mass.tolist(),
        }


@dataclass
class EstimationResult:
    paths: dict[str, PathResult]
    iterations: int
    converged: bool
    log: list[Measurement]
    wall_time: float = 0.0
    aborted: bool = False
    error: str | None = None

    def to_dict(self) -> dict:
        """JSON-ready results. Wall time is left out so that seeded runs compare equal."""
        grid = next(iter(self.paths.values())).marginal.grid.to_dict() if self.paths else None
        return {
            "converged": self.converged,
            "aborted": self.aborted,
            "error": self.error,
            "iterations": self.iterations,
            "grid": grid,
            "paths": [r.to_dict() for r in self.paths.values()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "EstimationResult":
        """Rebuild from :meth:`to_dict` output. The measurement log is not restored."""
        paths = {}
        if d["paths"]:
            grid = RateGrid.from_dict(d["grid"])
            for r in d["paths"]:
                paths[r["path"]] = PathResult(
                    r["path"], CredibleInterval.from_dict(r["interval"]), Pmf(grid, r["marginal"]),
                    int(r["measurements"]), int(r["bytes"]),
                )
        return cls(paths, int(d["iterations"]), bool(d["converged"]), [],
                   aborted=bool(d.get("aborted", False)), error=d.get("error"))

    @classmethod
    def load(cls, path) -> "EstimationResult":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path_id", "beta_min", "beta_max", "measurements", "bytes"])
        for r in self.paths.values():
            w.writerow([r.path, r.interval.lower, r.interval.upper, r.measurements, r.bytes_sent])
        return buf.getvalue()

    def measurements_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "path_id", "rate_mbps", "z", "bytes", "output_rates"])
        for k, m in enumerate(self.log):
            w.writerow([k, m.path, m.rate, m.z, m.bytes_sent, " ".join(f"{r:.6g}" for r in m.output_rates)])
        return buf.getvalue()

    def accuracy(self, truth: dict[str, float]) -> float:
        """Fraction of paths whose true PAB lies inside the final interval."""
        if not self.paths:
            return 1.0
        hits = [r.interval.contains(truth[p]) for p, r in self.paths.items()]
        return float(np.mean(hits))


def _states(graph, paths: list[str], counts: dict[str, int], grid: RateGrid,
            strategy: StrategyConfig) -> list[PathState]:
    out = []
    for p, mass in zip(paths, graph.path_marginals()):
        pmf = Pmf(grid, mass)
        ci = credible_interval(pmf, strategy.eta)
        out.append(PathState.from_marginal(p, pmf, ci, strategy.beta, counts[p]))
    return out


def estimate(t: Topology, cfg: EstimatorConfig, prober: Prober) -> EstimationResult:
    """Probe until every path's credible interval is at most ``beta`` wide.

    Each iteration picks a path with the configured strategy, probes it at
    its posterior median, attaches the outcome to the factor graph and reruns
    belief propagation. Stops early when all paths are satisfied, after
    ``max_iterations`` measurements, or when the prober fails.
    """
    start = time.perf_counter()
    if t.n_paths == 0:
        return EstimationResult({}, 0, True, [], time.perf_counter() - start)
    if cfg.max_iterations < t.n_paths:
        raise ValueError(f"max_iterations ({cfg.max_iterations}) is below the number of paths ({t.n_paths})")

    graph = build(t, cfg.grid, isolate_paths=cfg.strategy.kind is Strategy.SEQ)
    graph.run_bp(cfg.bp)
    paths = t.path_ids
    index = {p: i for i, p in enumerate(paths)}
    counts = dict.fromkeys(paths, 0)
    spent = dict.fromkeys(paths, 0)
    measurements: list[Measurement] = []
    selector = PathSelector(cfg.strategy)
    states = _states(graph, paths, counts, cfg.grid, cfg.strategy)
    aborted, error = False, None

    while len(measurements) < cfg.max_iterations:
        pid = selector.select(states)
        if pid is None:
            break
        rate = select_rate(states[index[pid]].marginal)
        try:
            m = prober.measure(pid, rate)
        except ProbeError as exc:
            log.warning("probe on %s at %.1f Mbps failed: %s", pid, rate, exc)
            aborted, error = True, str(exc)
            break
        measurements.append(m)
        counts[pid] += 1
        spent[pid] += m.bytes_sent
        graph.add_observation(pid, rate, m.z, cfg.likelihood)
        graph.run_bp(cfg.bp)
        states = _states(graph, paths, counts, cfg.grid, cfg.strategy)

    results = {
        s.path: PathResult(s.path, s.interval, s.marginal, counts[s.path], spent[s.path])
        for s in states
    }
    converged = all(s.satisfied for s in states) and not aborted
    return EstimationResult(results, len(measurements), converged, measurements,
                            time.perf_counter() - start, aborted, error)


# -- validation ---------------------------------------------------------------

#: Long single trains used to check the reported intervals.
VALIDATION_PROBE = ProbeConfig(n_trains=1, train_length=2400, packet_size=1000)


@dataclass
class ValidationTest:
    path: str
    labels: tuple[str, ...]
    rate: float
    successes: int = 0
    trials: int = 0
    failures: int = 0

    @property
    def frequency(self) -> float:
        return self.successes / self.trials if self.trials else float("nan")

    def to_dict(self) -> dict:
        return {
            "path": self.path, "labels": list(self.labels), "rate": self.rate,
            "successes": self.successes, "trials": self.trials,
            "failures": self.failures, "frequency": self.frequency,
        }


@dataclass
class ValidationReport:
    tests: list[ValidationTest]

    def frequency(self, label: str) -> float:
        """Pooled empirical success frequency of all tests carrying ``label``."""
        sel = [t for t in self.tests if label in t.labels]
        n = sum(t.trials for t in sel)
        return sum(t.successes for t in sel) / n if n else float("nan")

    def to_dict(self) -> dict:
        return {"tests": [t.to_dict() for t in self.tests]}


def disjoint_paths(t: Topology, limit: int) -> list[str]:
    """Greedily pick up to ``limit`` paths sharing no link, in topology order."""
    used = np.zeros(t.n_links, dtype=bool)
    out = []
    for p, row in zip(t.path_ids, t.matrix.astype(bool)):
        if len(out) == limit:
            break
        if not (used & row).any():
            out.append(p)
            used |= row
    return out


def validation_rates(interval: CredibleInterval, epsilon: float) -> list[tuple[tuple[str, ...], float]]:
    """The four test rates, with coinciding rates merged."""
    named = [
        ("beta_min", interval.lower),
        ("beta_min+eps", interval.lower + epsilon),
        ("beta_max", interval.upper),
        ("beta_max+eps", interval.upper + epsilon),
    ]
    merged: dict[float, list[str]] = {}
    for label, rate in named:
        merged.setdefault(rate, []).append(label)
    return [(tuple(labels), rate) for rate, labels in merged.items()]


def validate(t: Topology, results: EstimationResult, prober: Prober, n_paths: int = 4,
             repeats: int = 1, probe: ProbeConfig = VALIDATION_PROBE) -> ValidationReport:
    """Send test trains at the edges of the reported intervals.

    For each of up to ``n_paths`` link-disjoint paths, probes at
    ``beta_min``, ``beta_min + eps``, ``beta_max`` and ``beta_max + eps``
    (``repeats`` times each) and records how often ``z == 1``. Probe failures
    are counted per test, not raised.
    """
    tests = []
    for p in disjoint_paths(t, n_paths):
        for labels, rate in validation_rates(results.paths[p].interval, probe.epsilon):
            test = ValidationTest(p, labels, rate)
            for _ in range(repeats):
                try:
                    m = prober.measure(p, rate, probe)
                except ProbeError as exc:
                    log.warning("validation probe on %s at %.1f failed: %s", p, rate, exc)
                    test.failures += 1
                    continue
                test.trials += 1
                test.successes += m.z
            tests.append(test)
    return ValidationReport(tests)
