"""Binary measurement outcomes from packet trains.

A measurement sends ``n_trains`` trains of ``train_length`` packets at a
constant rate, computes each train's output rate and declares success when
the median output rate is within ``epsilon`` of the input rate.

This module holds the measurement record, the output-rate formula and the
simulated prober; the UDP sender/receiver live in :mod:`pabest.udp`.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .likelihood import LikelihoodModel, success_probability
from .topology import Topology


class ProbeError(RuntimeError):
    """The prober could not produce a measurement."""


class VoidTrainError(ProbeError):
    """A train yielded no usable output rate."""


#: Fixed part of the probe packet: magic, version, train id, seq, total, t_depart, tau.
HEADER_SIZE = 33


@dataclass(frozen=True)
class ProbeConfig:
    n_trains: int = 3
    train_length: int = 25
    packet_size: int = 1000
    epsilon: float = 5.0
    slack: float = 0.1

    def __post_init__(self):
        if self.n_trains < 1:
            raise ValueError("n_trains must be at least 1")
        if self.train_length < 2:
            raise ValueError("train_length must be at least 2")
        if self.packet_size < HEADER_SIZE:
            raise ValueError(f"packet_size must be at least {HEADER_SIZE} bytes")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.slack < 0:
            raise ValueError("slack must be non-negative")

    def inter_packet_gap(self, rate: float) -> float:
        """Seconds between departures for ``rate`` Mbps."""
        if not rate > 0:
            raise ValueError(f"probe rate must be positive, got {rate}")
        return self.packet_size * 8 / (rate * 1e6)

    @property
    def bytes_per_measurement(self) -> int:
        return self.n_trains * self.train_length * self.packet_size


@dataclass(frozen=True)
class Measurement:
    path: str
    rate: float
    z: int
    output_rates: tuple[float, ...] = ()
    valid_counts: tuple[int, ...] = ()
    bytes_sent: int = 0
    timestamp: float | None = None

    def to_dict(self) -> dict:
        return {
            "path": self.path, "rate": self.rate, "z": self.z,
            "output_rates": list(self.output_rates), "valid_counts": list(self.valid_counts),
            "bytes": self.bytes_sent, "timestamp": self.timestamp,
        }


def decide(rate: float, output_rates: Sequence[float], epsilon: float) -> int:
    """``1`` iff the median output rate is at least ``rate - epsilon``."""
    if not output_rates:
        raise ProbeError("no output rates to decide on")
    return int(statistics.median(output_rates) >= rate - epsilon)


@dataclass(frozen=True)
class ReceivedPacket:
    seq: int
    departure_ns: int
    arrival_ns: int


def compute_output_rate(packets: Sequence[ReceivedPacket], tau_ns: float, packet_size: int,
                        slack: float = 0.1) -> tuple[float, int]:
    """Output rate (Mbps) of one train and the number of valid gaps.

    Packet ``i`` counts only if its predecessor ``i - 1`` also arrived and it
    left the sender no later than ``tau * (1 + slack)`` after it. The rate is
    ``|V| * packet_size`` over the sum of the valid arrival gaps.
    """
    pk = sorted(packets, key=lambda p: p.seq)
    if len(pk) < 2:
        raise VoidTrainError(f"only {len(pk)} packet(s) received")
    limit = tau_ns * (1.0 + slack)
    n_valid, span = 0, 0
    for prev, cur in zip(pk, pk[1:]):
        if cur.seq != prev.seq + 1:
            continue
        if cur.departure_ns - prev.departure_ns > limit:
            continue
        n_valid += 1
        span += cur.arrival_ns - prev.arrival_ns
    if n_valid == 0:
        raise VoidTrainError("no valid packets in train")
    if span <= 0:
        raise VoidTrainError("valid packets arrived with no spacing")
    return n_valid * packet_size * 8 / span * 1e3, n_valid


@dataclass
class GroundTruth:
    """True link PABs and the path PABs they imply (minimum over the path)."""

    links: dict[str, float]
    paths: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_topology(cls, t: Topology, link_pab: dict[str, float]) -> "GroundTruth":
        missing = [l for l in t.links if l not in link_pab]
        if missing:
            raise KeyError(f"no ground truth for links: {', '.join(missing)}")
        paths = {p: min(link_pab[l] for l in t.path_links(p)) for p in t.path_ids}
        return cls({l: float(link_pab[l]) for l in t.links}, {p: float(v) for p, v in paths.items()})

    @classmethod
    def uniform(cls, t: Topology, lo: float, hi: float, rng: np.random.Generator,
                step: float | None = 1.0) -> "GroundTruth":
        """Link PABs drawn uniformly on ``[lo, hi]``, on a grid of ``step`` if given."""
        if step:
            values = lo + step * rng.integers(0, int(round((hi - lo) / step)) + 1, size=t.n_links)
        else:
            values = rng.uniform(lo, hi, size=t.n_links)
        return cls.from_topology(t, dict(zip(t.links, values.tolist())))

    @classmethod
    def load(cls, path, t: Topology) -> "GroundTruth":
        with open(path, encoding="utf-8") as fh:
            return cls.from_topology(t, json.load(fh))

    def tight_links(self, t: Topology) -> dict[str, str]:
        """Per path, the link attaining its minimum (first in link order on ties)."""
        out = {}
        for p in t.path_ids:
            ls = t.path_links(p)
            out[p] = min(ls, key=lambda l: self.links[l])
        return out


class Prober(Protocol):
    def measure(self, path: str, rate: float, cfg: ProbeConfig | None = None) -> Measurement: ...


def simulated_measure(gt: GroundTruth, path: str, rate: float, model: LikelihoodModel,
                      rng: np.random.Generator, cfg: ProbeConfig | None = None) -> Measurement:
    """Draw ``z`` from the likelihood model at the path's true PAB."""
    if path not in gt.paths:
        raise KeyError(f"unknown path {path!r}")
    cfg = cfg or ProbeConfig()
    z = int(rng.random() < success_probability(model, rate, gt.paths[path]))
    return Measurement(path, float(rate), z, bytes_sent=cfg.bytes_per_measurement)


class SimulatedProber:
    """Seeded prober whose outcomes follow the likelihood model exactly."""

    def __init__(self, gt: GroundTruth, model: LikelihoodModel, cfg: ProbeConfig | None = None,
                 seed: int | np.random.SeedSequence = 0):
        self.gt = gt
        self.model = model
        self.cfg = cfg or ProbeConfig()
        self.rng = np.random.default_rng(seed)

    def measure(self, path: str, rate: float, cfg: ProbeConfig | None = None) -> Measurement:
        return simulated_measure(self.gt, path, rate, self.model, self.rng, cfg or self.cfg)
