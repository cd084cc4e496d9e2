"""Active sampling: which path to probe next, and at what rate."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .belief import CredibleInterval, Pmf, entropy, median


class Strategy(str, Enum):
    RR = "rr"                 # round robin over unsatisfied paths
    RR_STRICT = "rr-strict"   # round robin over all paths, satisfied or not
    SEQ = "seq"               # one path at a time, to completion
    WE = "we"                 # random, weighted by marginal entropy
    WCI = "wci"               # random, weighted by credible-interval width


@dataclass(frozen=True)
class StrategyConfig:
    kind: Strategy = Strategy.WCI
    seed: int = 0
    beta: float = 10.0
    eta: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "kind", Strategy(self.kind))
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")


@dataclass(frozen=True)
class PathState:
    path: str
    marginal: Pmf
    interval: CredibleInterval
    satisfied: bool
    measurements: int = 0

    @classmethod
    def from_marginal(cls, path: str, marginal: Pmf, interval: CredibleInterval,
                      beta: float, measurements: int = 0) -> "PathState":
        return cls(path, marginal, interval, interval.size <= beta, measurements)


def selection_weights(states: Sequence[PathState], kind: Strategy) -> np.ndarray:
    """Unnormalized WE/WCI selection weights; zero for satisfied paths."""
    if kind is Strategy.WE:
        w = np.array([entropy(s.marginal) for s in states])
    elif kind is Strategy.WCI:
        w = np.array([s.interval.size for s in states])
    else:
        raise ValueError(f"{kind.value} does not draw paths at random")
    w[[s.satisfied for s in states]] = 0.0
    return w


def select_path(states: Sequence[PathState], cfg: StrategyConfig, cursor: int = 0,
                rng: np.random.Generator | None = None) -> int | None:
    """Index of the next path to probe, or ``None`` once every path is satisfied.

    ``cursor`` is the round-robin position (index to try first); ``rng`` is
    required by the randomized strategies.
    """
    open_ = [i for i, s in enumerate(states) if not s.satisfied]
    if not open_:
        return None
    kind = cfg.kind
    n = len(states)
    if kind is Strategy.RR_STRICT:
        return cursor % n
    if kind is Strategy.RR:
        return min(open_, key=lambda i: (i - cursor) % n)
    if kind is Strategy.SEQ:
        return open_[0]
    w = selection_weights(states, kind)
    total = w.sum()
    if not total > 0:
        w = np.zeros(n)
        w[open_] = 1.0
        total = len(open_)
    return int(rng.choice(n, p=w / total))


class PathSelector:
    """Stateful wrapper around :func:`select_path` (RR cursor, seeded draws)."""

    def __init__(self, cfg: StrategyConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.cursor = 0

    def select(self, states: Sequence[PathState]) -> str | None:
        i = select_path(states, self.cfg, self.cursor, self.rng)
        if i is None:
            return None
        self.cursor = i + 1
        return states[i].path


def select_rate(marginal: Pmf) -> float:
    """Probe at the posterior median: both outcomes are then equally likely."""
    return median(marginal)
