"""Simulation sweeps: strategy comparisons and topology-error robustness.

Replicates are synthetic topologies: ``M`` paths sampled from a base
topology, reduced to logical links, with link PABs drawn uniformly on the
rate grid. Outcomes come from :class:`~pabest.probing.SimulatedProber`, so
the estimator never sees the ground truth directly.
"""

from __future__ import annotations

import csv
import json
import platform
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import __version__
from .estimator import EstimatorConfig, estimate
from .probing import GroundTruth, SimulatedProber
from .sampling import Strategy
from .topology import (
    Path, PerturbationConfig, Topology, jaccard_similarity, perturb, reduce_to_logical,
)


def synthetic_base_topology(n_nodes: int = 400, n_paths: int = 2000, min_hops: int = 7,
                            seed: int = 0) -> Topology:
    """A tree-shaped router topology with paths between end hosts.

    Nodes attach one at a time to an existing node chosen with probability
    proportional to its degree, which yields a few high-degree core routers
    and many leaves. Leaves are end hosts; paths are the unique tree routes
    between random host pairs that are at least ``min_hops`` links long.
    """
    rng = np.random.default_rng(seed)
    parent = np.full(n_nodes, -1)
    depth = np.zeros(n_nodes, dtype=int)
    degree = np.zeros(n_nodes)
    degree[0] = 1.0
    for v in range(1, n_nodes):
        u = int(rng.choice(v, p=degree[:v] / degree[:v].sum()))
        parent[v], depth[v] = u, depth[u] + 1
        degree[u] += 1
        degree[v] = 1.0
    children = np.bincount(parent[1:], minlength=n_nodes)
    hosts = np.flatnonzero(children == 0)

    def route(a, b):
        up_a, up_b = [], []
        while a != b:
            if depth[a] >= depth[b]:
                up_a.append(a)
                a = parent[a]
            else:
                up_b.append(b)
                b = parent[b]
        # Link v connects v to its parent.
        return up_a + up_b[::-1]

    links = [f"e{v}" for v in range(1, n_nodes)]
    seen, rows = set(), []
    attempts = 0
    while len(rows) < n_paths and attempts < 50 * n_paths:
        attempts += 1
        a, b = rng.choice(hosts, size=2, replace=False)
        key = (min(a, b), max(a, b))
        if key in seen:
            continue
        hops = route(a, b)
        if len(hops) < min_hops:
            continue
        seen.add(key)
        rows.append((Path(f"h{a}-h{b}", f"h{a}", f"h{b}"), [f"e{v}" for v in hops]))
    return Topology.from_link_lists(links, rows)


def sample_topology(base: Topology, m: int, rng: np.random.Generator,
                    min_logical_links: int = 3, tries: int = 200) -> Topology:
    """Logical topology over ``m`` random paths of ``base``.

    Subsets in which some path ends up with fewer than ``min_logical_links``
    logical links are redrawn. With ``m`` paths a path can have at most
    ``2**(m-1)`` logical links, so the requirement is capped there.
    """
    if m > base.n_paths:
        raise ValueError(f"base topology has only {base.n_paths} paths")
    min_logical_links = min(min_logical_links, 2 ** (m - 1))
    for _ in range(tries):
        rows = np.sort(rng.choice(base.n_paths, size=m, replace=False))
        sub = Topology(base.links, tuple(base.paths[i] for i in rows), base.matrix[rows])
        t = reduce_to_logical(sub)
        if t.matrix.sum(axis=1).min() >= min_logical_links:
            return t
    raise ValueError(f"no subset of {m} paths with >= {min_logical_links} logical links each")


def shared_tight_fraction(t: Topology, gt: GroundTruth) -> float:
    """Fraction of paths whose tight link is also the tight link of another path."""
    tight = list(gt.tight_links(t).values())
    return float(np.mean([tight.count(l) > 1 for l in tight]))


def tight_links_per_path(t: Topology, gt: GroundTruth) -> float:
    """Distinct tight links in the topology, divided by the number of paths."""
    return len(set(gt.tight_links(t).values())) / t.n_paths


@dataclass
class Replicate:
    index: int
    topology: Topology
    truth: GroundTruth
    seed: int


@dataclass
class SweepSpec:
    """What to simulate.

    ``base`` is the topology paths are drawn from (a generated one when
    ``None``). Each of ``replicates`` topologies per size in ``sizes`` gets
    its own ground truth and seeds.
    """

    sizes: Sequence[int] = (20,)
    replicates: int = 20
    strategies: Sequence[str] = ("wci", "rr-strict")
    te: Sequence[float] = (0.0, 0.9)
    q_flip: float = 0.02
    seed: int = 0
    config: EstimatorConfig = field(default_factory=EstimatorConfig)
    base: Topology | None = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if any(not 0.0 <= te <= 1.0 for te in self.te):
            raise ValueError("te values must lie in [0, 1]")
        self.strategies = tuple(Strategy(s).value for s in self.strategies)

    def manifest(self) -> dict:
        return {
            "sizes": list(self.sizes), "replicates": self.replicates,
            "strategies": list(self.strategies), "te": list(self.te),
            "q_flip": self.q_flip, "seed": self.seed, "config": self.config.to_dict(),
            "base": "file" if self.base is not None else "synthetic",
            "version": __version__, "python": platform.python_version(),
            "numpy": np.__version__,
        }


def make_replicates(spec: SweepSpec, m: int) -> list[Replicate]:
    base = spec.base or synthetic_base_topology(seed=spec.seed)
    grid = spec.config.grid
    root = np.random.SeedSequence([spec.seed, m])
    out = []
    for k, ss in enumerate(root.spawn(spec.replicates)):
        rng = np.random.default_rng(ss)
        t = sample_topology(base, m, rng)
        gt = GroundTruth.uniform(t, grid.b_min, grid.b_max, rng, step=grid.step)
        out.append(Replicate(k, t, gt, int(rng.integers(2**31))))
    return out


def stream_seeds(seed: int, n: int = 2) -> tuple[int, ...]:
    """Independent seeds derived from one: selection, outcomes, then extras.

    Sharing one seed would feed both generators the same uniforms, which
    couples which path is drawn with what its probe returns. The first
    seeds do not depend on ``n``.
    """
    return tuple(int(v) for v in np.random.SeedSequence(seed).generate_state(n))


def _config_for(spec: SweepSpec, strategy: str, seed: int) -> EstimatorConfig:
    cfg = spec.config
    selection_seed = stream_seeds(seed)[0]
    return replace(cfg, strategy=replace(cfg.strategy, kind=Strategy(strategy), seed=selection_seed))


def run_replicate(rep: Replicate, cfg: EstimatorConfig, estimate_on: Topology | None = None) -> dict:
    """Estimate one replicate and score it against its ground truth."""
    outcome_seed = stream_seeds(rep.seed)[1]
    prober = SimulatedProber(rep.truth, cfg.likelihood, cfg.probe, seed=outcome_seed)
    res = estimate(estimate_on or rep.topology, cfg, prober)
    return {
        "replicate": rep.index,
        "paths": rep.topology.n_paths,
        "iterations": res.iterations,
        "measurements_per_path": res.iterations / rep.topology.n_paths,
        "accuracy": res.accuracy(rep.truth.paths),
        "converged": res.converged,
        "shared_tight_fraction": shared_tight_fraction(rep.topology, rep.truth),
        "tight_links_per_path": tight_links_per_path(rep.topology, rep.truth),
        "result": res,
    }


def _aggregate(runs: list[dict], **keys) -> dict:
    return {
        **keys,
        "runs": len(runs),
        "mean_measurements_per_path": float(np.mean([r["measurements_per_path"] for r in runs])),
        "accuracy": float(np.mean([r["accuracy"] for r in runs])),
        "converged": float(np.mean([r["converged"] for r in runs])),
    }


def run_strategy_sweep(spec: SweepSpec) -> tuple[list[dict], list[dict]]:
    """Every strategy on every replicate.

    Returns the aggregate table (one row per strategy and size) and the
    per-run records.
    """
    table, records = [], []
    for m in spec.sizes:
        reps = make_replicates(spec, m)
        for strategy in spec.strategies:
            runs = []
            for rep in reps:
                r = run_replicate(rep, _config_for(spec, strategy, rep.seed))
                r["strategy"] = strategy
                runs.append(r)
            records.extend(runs)
            table.append(_aggregate(runs, strategy=strategy, paths=m))
    return table, records


def run_te_sweep(spec: SweepSpec, strategy: str = "wci") -> tuple[list[dict], list[dict]]:
    """Estimate on perturbed path matrices while outcomes follow the true one.

    Returns one row per ``te`` (mean measurements per path, accuracy, mean
    Jaccard similarity) and the per-run records.
    """
    table, records = [], []
    for m in spec.sizes:
        reps = make_replicates(spec, m)
        for te in spec.te:
            runs = []
            for rep in reps:
                noisy = perturb(rep.topology, PerturbationConfig(te, spec.q_flip, seed=rep.seed))
                r = run_replicate(rep, _config_for(spec, strategy, rep.seed), estimate_on=noisy)
                r["te"] = te
                r["jaccard"] = jaccard_similarity(rep.topology, noisy)
                runs.append(r)
            records.extend(runs)
            row = _aggregate(runs, te=te, paths=m)
            row["jaccard"] = float(np.mean([r["jaccard"] for r in runs]))
            table.append(row)
    return table, records


def write_table(rows: list[dict], path) -> None:
    if not rows:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def write_records(records: list[dict], path) -> None:
    write_table([{k: v for k, v in r.items() if k != "result"} for r in records], path)


def write_manifest(spec: SweepSpec, path, **extra) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({**spec.manifest(), **extra}, fh, indent=1)

