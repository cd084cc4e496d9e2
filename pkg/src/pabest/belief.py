"""Discrete beliefs over a rate grid.

Every belief about a link or path PAB is a :class:`Pmf` on a shared
:class:`RateGrid`. The queries here (entropy, median, credible interval,
pointwise product) are all the estimator needs from a posterior.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

#: Slack used when comparing accumulated mass against a target level.
MASS_TOL = 1e-12

#: Floor applied to messages when their product vanishes (numeric underflow).
CONTRADICTION_FLOOR = 1e-6


class InconsistentBeliefError(ValueError):
    """Raised when a product of beliefs has no mass left anywhere."""


@dataclass(frozen=True)
class RateGrid:
    """Evenly spaced rates ``b_min, b_min + step, ..., b_max`` in Mbps."""

    b_min: float = 1.0
    b_max: float = 100.0
    step: float = 1.0

    def __post_init__(self):
        if not self.b_min < self.b_max:
            raise ValueError(f"grid needs b_min < b_max, got [{self.b_min}, {self.b_max}]")
        if not self.step > 0:
            raise ValueError(f"grid step must be positive, got {self.step}")
        n = (self.b_max - self.b_min) / self.step
        if abs(n - round(n)) > 1e-9:
            raise ValueError("b_max - b_min must be an integer multiple of step")

    @property
    def bins(self) -> int:
        return int(round((self.b_max - self.b_min) / self.step)) + 1

    @property
    def rates(self) -> np.ndarray:
        return self.b_min + self.step * np.arange(self.bins)

    def index(self, rate: float) -> int:
        """Index of the grid point nearest to ``rate`` (clipped to the grid)."""
        i = int(round((rate - self.b_min) / self.step))
        return min(max(i, 0), self.bins - 1)

    def snap(self, rate: float) -> float:
        return float(self.rates[self.index(rate)])

    def to_dict(self) -> dict:
        return {"b_min": self.b_min, "b_max": self.b_max, "step": self.step}

    @classmethod
    def from_dict(cls, d: dict) -> "RateGrid":
        return cls(float(d["b_min"]), float(d["b_max"]), float(d["step"]))


@dataclass(frozen=True)
class CredibleInterval:
    lower: float
    upper: float
    level: float

    @property
    def size(self) -> float:
        return self.upper - self.lower

    def contains(self, rate: float) -> bool:
        return self.lower <= rate <= self.upper

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "size": self.size, "level": self.level}

    @classmethod
    def from_dict(cls, d: dict) -> "CredibleInterval":
        return cls(float(d["lower"]), float(d["upper"]), float(d["level"]))


class Pmf:
    """Probability mass function over the points of a :class:`RateGrid`.

    The mass vector is copied, checked and made read-only on construction.
    Use :meth:`from_weights` to build one from unnormalized weights.
    """

    __slots__ = ("grid", "mass")

    def __init__(self, grid: RateGrid, mass: Sequence[float] | np.ndarray):
        m = np.array(mass, dtype=float)
        if m.shape != (grid.bins,):
            raise ValueError(f"mass has shape {m.shape}, grid has {grid.bins} bins")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValueError("mass entries must be finite and non-negative")
        if abs(m.sum() - 1.0) > 1e-9:
            raise ValueError(f"mass sums to {m.sum()!r}, not 1")
        m.setflags(write=False)
        self.grid = grid
        self.mass = m

    @classmethod
    def from_weights(cls, grid: RateGrid, weights) -> "Pmf":
        w = np.asarray(weights, dtype=float)
        total = w.sum()
        if not total > 0:
            raise InconsistentBeliefError("weights carry no mass")
        return cls(grid, w / total)

    @classmethod
    def point(cls, grid: RateGrid, rate: float) -> "Pmf":
        m = np.zeros(grid.bins)
        m[grid.index(rate)] = 1.0
        return cls(grid, m)

    def __repr__(self):
        return f"Pmf(grid={self.grid}, mean={self.mean():.3f})"

    def __eq__(self, other):
        if not isinstance(other, Pmf):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.mass, other.mass)

    __hash__ = None

    def mean(self) -> float:
        return float(self.mass @ self.grid.rates)

    def survival(self) -> np.ndarray:
        """``S[i] = Pr(value >= rates[i])``."""
        return survival(self.mass)

    def to_dict(self) -> dict:
        return {"grid": self.grid.to_dict(), "mass": self.mass.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pmf":
        return cls(RateGrid.from_dict(d["grid"]), d["mass"])


def survival(mass: np.ndarray) -> np.ndarray:
    """Upper-tail sums of ``mass`` along the last axis, inclusive."""
    return np.cumsum(mass[..., ::-1], axis=-1)[..., ::-1]


def uniform(grid: RateGrid) -> Pmf:
    return Pmf(grid, np.full(grid.bins, 1.0 / grid.bins))


def entropy(p: Pmf) -> float:
    """Shannon entropy in nats, with ``0 ln 0 = 0``."""
    m = p.mass[p.mass > 0]
    return float(-(m * np.log(m)).sum())


def median(p: Pmf) -> float:
    """Smallest grid rate whose cumulative mass reaches one half."""
    cdf = np.cumsum(p.mass)
    i = int(np.searchsorted(cdf, 0.5 - MASS_TOL, side="left"))
    return float(p.grid.rates[min(i, p.grid.bins - 1)])


def credible_interval(p: Pmf, eta: float) -> CredibleInterval:
    """Narrowest contiguous grid window holding at least ``eta`` of the mass.

    Ties on width go to the window with the lowest lower bound.
    """
    if not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    k = p.grid.bins
    cdf = np.concatenate(([0.0], np.cumsum(p.mass)))
    # For each start i, the first end j (inclusive) with cdf[j+1] - cdf[i] >= eta.
    targets = cdf[:-1] + eta - MASS_TOL
    ends = np.searchsorted(cdf, targets, side="left") - 1
    feasible = ends < k
    starts = np.arange(k)[feasible]
    ends = ends[feasible]
    widths = ends - starts
    best = int(np.argmin(widths))
    i, j = int(starts[best]), int(ends[best])
    rates = p.grid.rates
    level = float(cdf[j + 1] - cdf[i])
    return CredibleInterval(float(rates[i]), float(rates[j]), level)


def product_normalize(a: Pmf, b: Pmf) -> Pmf:
    """Pointwise product of two beliefs, renormalized.

    Raises :class:`InconsistentBeliefError` when the supports do not overlap.
    """
    if a.grid != b.grid:
        raise ValueError("beliefs live on different grids")
    return Pmf.from_weights(a.grid, a.mass * b.mass)


def floor_normalize(weights: np.ndarray, floor: float = CONTRADICTION_FLOOR) -> np.ndarray:
    """Normalize ``weights`` along the last axis; rows with no mass get floored first."""
    w = np.asarray(weights, dtype=float)
    total = w.sum(axis=-1, keepdims=True)
    bad = ~(total > 0)
    if np.any(bad):
        w = np.where(bad, np.maximum(w, floor), w)
        total = w.sum(axis=-1, keepdims=True)
    return w / total
