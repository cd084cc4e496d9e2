"""Measurement likelihood: a clamped sigmoid in (probe rate - PAB).

``Pr(z=1 | y, r) = clip(logsig(-alpha * (r - y - shift)), kappa, 1 - kappa)``

where ``shift = logit(gamma) / alpha`` moves the curve horizontally so that
it passes through ``gamma`` at ``r == y``.
"""

from __future__ import annotations

import csv
import os
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.special import expit, logit

from .belief import RateGrid


class NonIdentifiableError(ValueError):
    """Training data cannot pin down the model parameters."""


@dataclass(frozen=True)
class LikelihoodModel:
    alpha: float = 0.28
    kappa: float = 0.02
    gamma: float = 0.5

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0 < self.kappa < 0.5:
            raise ValueError(f"kappa must lie in (0, 0.5), got {self.kappa}")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")

    @property
    def gamma_shift(self) -> float:
        return float(logit(self.gamma)) / self.alpha

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "kappa": self.kappa, "gamma": self.gamma}

    @classmethod
    def from_dict(cls, d: dict) -> "LikelihoodModel":
        return cls(float(d["alpha"]), float(d.get("kappa", 0.02)), float(d.get("gamma", 0.5)))


def success_probability(m: LikelihoodModel, r, y):
    """Probability of a successful (z=1) measurement at probe rate ``r``.

    Broadcasts over array arguments.
    """
    u = -m.alpha * (np.asarray(r, dtype=float) - np.asarray(y, dtype=float) - m.gamma_shift)
    p = np.clip(expit(u), m.kappa, 1.0 - m.kappa)
    return float(p) if np.ndim(p) == 0 else p


def likelihood_vector(m: LikelihoodModel, r: float, z: int, grid: RateGrid) -> np.ndarray:
    """Likelihood of outcome ``z`` at rate ``r`` for every candidate PAB on ``grid``.

    Not normalized; this is the message a measurement factor sends to its
    path variable.
    """
    p = success_probability(m, r, grid.rates)
    return p if z else 1.0 - p


@dataclass(frozen=True)
class TrainingSample:
    path_id: str
    rate: float
    frequency: float
    count: int = 1

    def __post_init__(self):
        if not 0.0 <= self.frequency <= 1.0:
            raise ValueError(f"frequency must lie in [0, 1], got {self.frequency}")
        if self.count < 1:
            raise ValueError("count must be at least 1")


def load_training_csv(path) -> list[TrainingSample]:
    """Read ``path_id,rate_mbps,success_count,total_count`` rows."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                n = int(row["total_count"])
                k = int(row["success_count"])
                out.append(TrainingSample(row["path_id"], float(row["rate_mbps"]), k / n, n))
            except (KeyError, ValueError, ZeroDivisionError) as exc:
                raise ValueError(f"{os.fspath(path)}:{lineno}: bad training row ({exc})") from None
    return out


@dataclass(frozen=True)
class FitResult:
    alpha: float
    pab: dict[str, float]
    mse: float


def _crossing(rates: np.ndarray, freq: np.ndarray) -> float:
    """First rate where the empirical frequency drops through 1/2."""
    order = np.argsort(rates)
    r, f = rates[order], freq[order]
    below = np.flatnonzero(f < 0.5)
    if below.size == 0 or below[0] == 0:
        return float(np.mean(r))
    i = below[0]
    f0, f1 = f[i - 1], f[i]
    return float(r[i - 1] + (f0 - 0.5) / (f0 - f1) * (r[i] - r[i - 1]))


def fit(samples: list[TrainingSample], kappa: float = 0.02) -> FitResult:
    """Jointly fit the decay constant and each path's PAB by weighted least squares.

    The curve is the ``gamma = 0.5`` likelihood; residuals are weighted by
    each sample's count.
    """
    by_path: dict[str, list[TrainingSample]] = defaultdict(list)
    for s in samples:
        by_path[s.path_id].append(s)
    if not by_path:
        raise ValueError("no training samples")
    for pid, ss in by_path.items():
        if len({s.rate for s in ss}) < 2:
            raise ValueError(f"path {pid} needs at least two distinct rates")
    freq = np.array([s.frequency for s in samples])
    if np.ptp(freq) == 0:
        raise NonIdentifiableError("all empirical frequencies are identical")

    paths = list(by_path)
    col = {p: i for i, p in enumerate(paths)}
    idx = np.array([col[s.path_id] for s in samples])
    rates = np.array([s.rate for s in samples])
    w = np.sqrt(np.array([s.count for s in samples], dtype=float))
    y0 = np.array([
        _crossing(rates[idx == i], freq[idx == i]) for i in range(len(paths))
    ])

    def residuals(theta):
        a = np.exp(theta[0])
        p = np.clip(expit(-a * (rates - theta[1:][idx])), kappa, 1.0 - kappa)
        return w * (p - freq)

    best = None
    for a0 in (0.05, 0.15, 0.3, 0.6, 1.2):
        sol = least_squares(
            residuals, np.concatenate(([np.log(a0)], y0)),
            method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=5000,
        )
        if best is None or sol.cost < best.cost:
            best = sol
    alpha = float(np.exp(best.x[0]))
    mse = float(2.0 * best.cost / np.sum(w**2))
    return FitResult(alpha, {p: float(best.x[1 + i]) for i, p in enumerate(paths)}, mse)
