"""Network topologies as binary path matrices.

A :class:`Topology` holds ``M`` paths over ``N`` links and the ``M x N``
incidence matrix ``P`` with ``P[i, j] == 1`` iff link ``j`` lies on path ``i``.

Topology files are plain UTF-8 text::

    # comments start with '#'
    links: l1 l2 l3
    paths:
    p1 h1 h4 : l1 l2
    p2 h2 h4 : l2 l3

Instead of per-path link lists a ``matrix:`` section may give one 0/1 row
per path, in path order (path lines then carry only ``id src dst``).
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Path:
    id: str
    src: str = ""
    dst: str = ""


@dataclass(frozen=True, eq=False)
class Topology:
    links: tuple[str, ...]
    paths: tuple[Path, ...]
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.int8)
        if m.ndim != 2 or m.shape != (len(self.paths), len(self.links)):
            raise TopologyError(
                f"matrix shape {m.shape} does not match {len(self.paths)} paths x {len(self.links)} links"
            )
        if not np.isin(m, (0, 1)).all():
            raise TopologyError("matrix entries must be 0 or 1")
        if len(set(self.links)) != len(self.links):
            raise TopologyError("duplicate link identifiers")
        ids = [p.id for p in self.paths]
        if len(set(ids)) != len(ids):
            raise TopologyError("duplicate path identifiers")
        empty = [self.paths[i].id for i in np.flatnonzero(m.sum(axis=1) == 0)]
        if empty:
            raise TopologyError(f"paths without links: {', '.join(empty)}")
        m.setflags(write=False)
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "paths", tuple(self.paths))
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_link_lists(cls, links: Sequence[str], paths: dict[str, Sequence[str]] | Iterable[tuple]) -> "Topology":
        """Build from ``{path_id: [link ids]}`` or ``(Path, [link ids])`` pairs."""
        items = paths.items() if isinstance(paths, dict) else paths
        col = {l: j for j, l in enumerate(links)}
        rows, plist = [], []
        for p, members in items:
            p = p if isinstance(p, Path) else Path(str(p))
            row = np.zeros(len(links), dtype=np.int8)
            for l in members:
                if l not in col:
                    raise TopologyError(f"path {p.id} references undeclared link {l!r}")
                row[col[l]] = 1
            rows.append(row)
            plist.append(p)
        matrix = np.array(rows, dtype=np.int8).reshape(len(plist), len(links))
        return cls(tuple(links), tuple(plist), matrix)

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    @property
    def path_ids(self) -> list[str]:
        return [p.id for p in self.paths]

    def path_index(self, path_id: str) -> int:
        for i, p in enumerate(self.paths):
            if p.id == path_id:
                return i
        raise KeyError(path_id)

    def path_links(self, path_id: str) -> list[str]:
        row = self.matrix[self.path_index(path_id)]
        return [self.links[j] for j in np.flatnonzero(row)]

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return (
            self.links == other.links
            and self.paths == other.paths
            and np.array_equal(self.matrix, other.matrix)
        )

    __hash__ = None


def _parse_error(lineno: int, msg: str) -> TopologyError:
    return TopologyError(f"line {lineno}: {msg}")


def parse_topology(text: str) -> Topology:
    """Parse the text format described in the module docstring."""
    links: list[str] | None = None
    path_rows: list[tuple[int, Path, list[str] | None]] = []
    matrix_rows: list[tuple[int, list[int]]] = []
    section = None
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, sep, rest = line.partition(":")
        key = head.strip().lower()
        if sep and key in ("links", "paths", "matrix"):
            section = key
            if key == "links":
                if links is not None:
                    raise _parse_error(lineno, "duplicate 'links:' section")
                links = []
            line = rest.strip()
            if not line:
                continue
        if section is None:
            raise _parse_error(lineno, f"content outside a section: {line!r}")
        if section == "links":
            links.extend(line.split())
        elif section == "paths":
            head, sep, rest = line.partition(":")
            fields = head.split()
            if len(fields) not in (1, 3):
                raise _parse_error(lineno, "path line must be 'path_id src dst : link ...'")
            p = Path(fields[0], *("" if f == "-" else f for f in fields[1:]))
            members = rest.split() if sep else None
            if sep and not members:
                raise _parse_error(lineno, f"path {p.id} has no links")
            path_rows.append((lineno, p, members))
        else:
            try:
                row = [int(v) for v in line.replace(",", " ").split()]
            except ValueError:
                raise _parse_error(lineno, f"matrix row is not integer: {line!r}") from None
            matrix_rows.append((lineno, row))

    if links is None:
        raise TopologyError("missing 'links:' section")
    if not path_rows:
        raise TopologyError("missing 'paths:' section")
    col = {}
    for j, l in enumerate(links):
        if l in col:
            raise TopologyError(f"duplicate link identifier {l!r}")
        col[l] = j

    with_lists = [r for r in path_rows if r[2] is not None]
    if matrix_rows:
        if with_lists:
            raise _parse_error(with_lists[0][0], "give either link lists or a matrix, not both")
        if len(matrix_rows) != len(path_rows):
            raise TopologyError(f"matrix has {len(matrix_rows)} rows for {len(path_rows)} paths")
        for lineno, row in matrix_rows:
            if len(row) != len(links):
                raise _parse_error(lineno, f"matrix row has {len(row)} entries, expected {len(links)}")
        matrix = np.array([r for _, r in matrix_rows], dtype=np.int8)
    else:
        if len(with_lists) != len(path_rows):
            raise _parse_error(path_rows[0][0], "paths need link lists when no matrix is given")
        matrix = np.zeros((len(path_rows), len(links)), dtype=np.int8)
        for i, (lineno, p, members) in enumerate(path_rows):
            for l in members:
                if l not in col:
                    raise _parse_error(lineno, f"path {p.id} references undeclared link {l!r}")
                matrix[i, col[l]] = 1
    return Topology(tuple(links), tuple(p for _, p, _ in path_rows), matrix)


def load_topology(source) -> Topology:
    """Load a topology from a file path or an open text stream."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            return parse_topology(fh.read())
    return parse_topology(source.read())


def format_topology(t: Topology) -> str:
    lines = ["links: " + " ".join(t.links), "paths:"]
    for p, row in zip(t.paths, t.matrix):
        members = " ".join(t.links[j] for j in np.flatnonzero(row))
        lines.append(f"{p.id} {p.src or '-'} {p.dst or '-'} : {members}")
    return "\n".join(lines) + "\n"


def save_topology(t: Topology, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_topology(t))


def reduce_to_logical(t: Topology) -> Topology:
    """Merge links traversed by exactly the same set of paths.

    Unused links (all-zero columns) are dropped. A merged link is named by
    joining its members with ``+``; column order follows first appearance.
    """
    groups: dict[bytes, list[int]] = {}
    for j in range(t.n_links):
        col = t.matrix[:, j]
        if not col.any():
            continue
        groups.setdefault(col.tobytes(), []).append(j)
    members = list(groups.values())
    links = tuple("+".join(t.links[j] for j in g) for g in members)
    matrix = np.stack([t.matrix[:, g[0]] for g in members], axis=1)
    return Topology(links, t.paths, matrix)


@dataclass(frozen=True)
class PerturbationConfig:
    te: float
    q_flip: float
    seed: int = 0

    def __post_init__(self):
        for name in ("te", "q_flip"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def perturb(t: Topology, cfg: PerturbationConfig) -> Topology:
    """Simulate topology-extraction errors.

    Each row is corrupted with probability ``te``; every entry of a corrupted
    row flips with probability ``q_flip``. A row left empty gets one random
    entry set so that every path keeps at least one link.
    """
    rng = np.random.default_rng(cfg.seed)
    m = t.matrix.copy()
    n_paths, n_links = m.shape
    corrupted = rng.random(n_paths) < cfg.te
    flips = rng.random((n_paths, n_links)) < cfg.q_flip
    flips &= corrupted[:, None]
    m ^= flips.astype(np.int8)
    for i in np.flatnonzero(m.sum(axis=1) == 0):
        m[i, rng.integers(n_links)] = 1
    return Topology(t.links, t.paths, m)


def suggest_flip_probability(t: Topology, correction: float = 1.0) -> float:
    """``q_flip`` scaled to the mean row density of ``t``.

    With ``correction=1`` a corrupted row sees on average as many flipped
    entries as the mean path length. Sparse matrices (long link lists, short
    paths) give the small values, around 1-3%, typical of traceroute errors.
    """
    density = float(t.matrix.sum(axis=1).mean()) / t.n_links
    return min(1.0, density * correction)


def jaccard_similarity(a: Topology, b: Topology) -> float:
    """``|A & B| / |A | B|`` over the (path, link) incidences of two topologies."""
    if a.links != b.links or [p.id for p in a.paths] != [p.id for p in b.paths]:
        raise TopologyError("topologies must share the same paths and links")
    ea = a.matrix.astype(bool)
    eb = b.matrix.astype(bool)
    union = int((ea | eb).sum())
    if union == 0:
        return 1.0
    return int((ea & eb).sum()) / union
