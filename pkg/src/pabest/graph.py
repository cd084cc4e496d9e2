"""Factor graph over link and path PABs, with sum-product belief propagation.

Variables are the link PABs ``x`` (one per column of the path matrix) and
path PABs ``y`` (one per row). Factors are

* a prior on every link,
* a min-relation ``1{y = min(x_l for l on the path)}`` per path,
* one likelihood leaf per measurement, attached to the measured path.

Min-factor messages are computed in closed form from survival functions, so
a factor over ``n`` links costs ``O(n K)`` rather than ``O(K ** n)``.

Message layout: edges between min factors and links are stored row-major over
the path matrix, so factor ``i`` owns the contiguous edge slice
``edge_start[i]:edge_start[i + 1]``. Likelihood leaves send fixed vectors and
ignore what they receive, so each path keeps only the normalized product of
its leaves (``evidence``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .belief import Pmf, RateGrid, floor_normalize, survival, uniform
from .likelihood import LikelihoodModel, likelihood_vector
from .topology import Topology

_TINY = 1e-300


def _shift_up(a: np.ndarray) -> np.ndarray:
    """``out[..., k] = a[..., k + 1]`` with zero past the top bin."""
    out = np.zeros_like(a)
    out[..., :-1] = a[..., 1:]
    return out


def min_to_path(link_msgs: np.ndarray) -> np.ndarray:
    """Distribution of the minimum of independent variables.

    ``link_msgs`` is ``(..., n, K)``, one normalized pmf per row. Returns
    ``prod S(r) - prod S(r + 1)`` with shape ``(..., K)``.
    """
    link_msgs = np.atleast_2d(link_msgs)
    tail = np.prod(survival(link_msgs), axis=-2)
    return np.maximum(tail - _shift_up(tail), 0.0)


def min_to_links(path_msg: np.ndarray, link_msgs: np.ndarray) -> np.ndarray:
    """Sum-product messages from a min factor to each of its links.

    For target link ``j`` and candidate value ``r``::

        m_j(r) = sum_{y < r} mu(y) Pr(M_j = y) + mu(r) Pr(M_j >= r)

    where ``M_j`` is the minimum of the other links and ``mu`` the path
    message. Leave-one-out survival products use prefix/suffix products.
    ``link_msgs`` is ``(..., n, K)`` and ``path_msg`` ``(..., K)``; rows are
    returned unnormalized.
    """
    link_msgs = np.atleast_2d(link_msgs)
    s = survival(link_msgs)
    prefix = np.ones_like(s)
    np.cumprod(s[..., :-1, :], axis=-2, out=prefix[..., 1:, :])
    suffix = np.ones_like(s)
    np.cumprod(s[..., :0:-1, :], axis=-2, out=suffix[..., -2::-1, :])
    others = prefix * suffix  # Pr(M_j >= r)
    at = np.maximum(others - _shift_up(others), 0.0)  # Pr(M_j == r)
    mu = np.asarray(path_msg)[..., None, :]
    below = np.zeros_like(s)
    np.cumsum((mu * at)[..., :-1], axis=-1, out=below[..., 1:])
    return below + mu * others


def _stack(msgs: list[Pmf]) -> np.ndarray:
    grids = {m.grid for m in msgs}
    if len(grids) != 1:
        raise ValueError("messages live on different grids")
    return np.vstack([m.mass for m in msgs])


def min_message_to_path(link_msgs: list[Pmf]) -> Pmf:
    """Pmf of the minimum of independent links with the given marginals."""
    if not link_msgs:
        raise ValueError("need at least one link message")
    return Pmf.from_weights(link_msgs[0].grid, min_to_path(_stack(link_msgs)))


def min_message_to_link(path_msg: Pmf, other_links: list[Pmf]) -> Pmf:
    """Min-factor message to one link, given the path message and the other links."""
    if not other_links:
        return path_msg
    if any(m.grid != path_msg.grid for m in other_links):
        raise ValueError("messages live on different grids")
    stacked = np.vstack([_stack(other_links), np.full(path_msg.grid.bins, 1.0 / path_msg.grid.bins)])
    # The placeholder row stands in for the target; its own survival is left out.
    return Pmf.from_weights(path_msg.grid, min_to_links(path_msg.mass, stacked)[-1])


@dataclass(frozen=True)
class BpSchedule:
    max_rounds: int = 50
    max_messages_per_edge: int = 5
    convergence_tol: float = 1e-6
    damping: float = 0.0

    def __post_init__(self):
        if self.max_messages_per_edge < 1 or self.max_rounds < 1:
            raise ValueError("schedule needs at least one round")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")


@dataclass
class BpReport:
    converged: bool
    rounds: int
    max_residual: float


@dataclass(frozen=True)
class Observation:
    path: str
    rate: float
    z: int
    vector: np.ndarray = field(repr=False, compare=False)


@dataclass
class _Component:
    factors: np.ndarray
    edges: np.ndarray
    # (factors, widest factor) edge ids; padding points one past the last edge.
    padded: np.ndarray
    mask: np.ndarray
    # Edges grouped by link, for per-link sums of incoming log messages.
    by_link: np.ndarray
    group_start: np.ndarray
    group_of_edge: np.ndarray
    dirty: bool = True


class FactorGraph:
    """Factor graph built from a path matrix; see the module docstring."""

    def __init__(self, topology: Topology, grid: RateGrid, prior: Pmf | None = None):
        if topology.n_paths == 0:
            raise ValueError("topology has no paths")
        self.topology = topology
        self.grid = grid
        k = grid.bins
        prior = prior or uniform(grid)
        if prior.grid != grid:
            raise ValueError("prior lives on a different grid")

        rows, cols = np.nonzero(topology.matrix)
        self.edge_path = rows
        self.edge_link = cols
        counts = topology.matrix.sum(axis=1).astype(int)
        self.edge_start = np.concatenate(([0], np.cumsum(counts)))
        self._path_index = {p.id: i for i, p in enumerate(topology.paths)}
        self._link_index = {l: j for j, l in enumerate(topology.links)}

        n_edges = len(rows)
        self.log_prior = np.log(np.maximum(np.tile(prior.mass, (topology.n_links, 1)), _TINY))
        self.evidence = np.full((topology.n_paths, k), 1.0 / k)
        self.f2x = np.full((n_edges, k), 1.0 / k)
        self.x2f = np.tile(prior.mass, (n_edges, 1))
        self.f2y = np.full((topology.n_paths, k), 1.0 / k)
        self.observations: list[Observation] = []
        self._components = self._find_components()
        self._component_of_path = np.empty(topology.n_paths, dtype=int)
        for c, comp in enumerate(self._components):
            self._component_of_path[comp.factors] = c

    @property
    def n_edges(self) -> int:
        return len(self.edge_path)

    def _find_components(self) -> list[_Component]:
        m = self.topology.matrix
        parent = list(range(self.topology.n_paths))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for j in range(self.topology.n_links):
            on = np.flatnonzero(m[:, j])
            for i in on[1:]:
                parent[find(i)] = find(on[0])
        groups: dict[int, list[int]] = {}
        for i in range(self.topology.n_paths):
            groups.setdefault(find(i), []).append(i)
        comps = []
        for members in groups.values():
            f = np.array(members)
            e = np.concatenate([np.arange(self.edge_start[i], self.edge_start[i + 1]) for i in f])
            widths = self.edge_start[f + 1] - self.edge_start[f]
            mask = np.arange(widths.max())[None, :] < widths[:, None]
            padded = np.full(mask.shape, self.n_edges)
            padded[mask] = e
            link_of = self.edge_link[e]
            by_link = np.argsort(link_of, kind="stable")
            starts = np.flatnonzero(np.r_[True, np.diff(link_of[by_link]) != 0])
            group = np.empty(len(e), dtype=int)
            group[by_link] = np.cumsum(np.r_[True, np.diff(link_of[by_link]) != 0]) - 1
            comps.append(_Component(f, e, padded, mask, by_link, starts, group))
        return comps

    # -- construction ------------------------------------------------------

    def add_observation(self, path: str, rate: float, z: int, model: LikelihoodModel) -> None:
        """Attach one likelihood leaf for a measurement on ``path``."""
        if path not in self._path_index:
            raise KeyError(f"unknown path {path!r}")
        i = self._path_index[path]
        vec = likelihood_vector(model, rate, int(z), self.grid)
        self.observations.append(Observation(path, float(rate), int(z), vec))
        self.evidence[i] = floor_normalize(self.evidence[i] * vec)
        self._components[self._component_of_path[i]].dirty = True

    def observations_on(self, path: str) -> list[Observation]:
        return [o for o in self.observations if o.path == path]

    # -- inference ---------------------------------------------------------

    def _link_log_totals(self, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        log_in = np.log(np.maximum(self.f2x[edges], _TINY))
        totals = self.log_prior.copy()
        np.add.at(totals, self.edge_link[edges], log_in)
        return totals, log_in

    def _round(self, comp: _Component, damping: float) -> float:
        k = self.grid.bins
        # Padding rows are point masses on the top bin: survival 1, no effect on a min.
        top = np.zeros((1, k))
        top[0, -1] = 1.0
        x_in = np.vstack([self.x2f, top])[comp.padded]
        mu = self.evidence[comp.factors]
        new_f2y = floor_normalize(min_to_path(x_in))
        new_f2x = floor_normalize(min_to_links(mu, x_in)[comp.mask])
        if damping:
            new_f2x = (1 - damping) * new_f2x + damping * self.f2x[comp.edges]
            new_f2y = (1 - damping) * new_f2y + damping * self.f2y[comp.factors]
        residual = max(
            np.abs(new_f2x - self.f2x[comp.edges]).max(),
            np.abs(new_f2y - self.f2y[comp.factors]).max(),
        )
        self.f2x[comp.edges] = new_f2x
        self.f2y[comp.factors] = new_f2y

        # Link-to-factor: prior times all other incoming messages, in the log domain.
        log_in = np.log(np.maximum(new_f2x, _TINY))
        first = comp.edges[comp.by_link[comp.group_start]]
        totals = self.log_prior[self.edge_link[first]] + np.add.reduceat(
            log_in[comp.by_link], comp.group_start, axis=0)
        logs = totals[comp.group_of_edge] - log_in
        logs -= logs.max(axis=1, keepdims=True)
        new_x2f = floor_normalize(np.exp(logs))
        if damping:
            new_x2f = (1 - damping) * new_x2f + damping * self.x2f[comp.edges]
        residual = max(residual, np.abs(new_x2f - self.x2f[comp.edges]).max())
        self.x2f[comp.edges] = new_x2f
        return float(residual)

    def run_bp(self, schedule: BpSchedule | None = None) -> BpReport:
        """Flooding sum-product until messages settle or the per-edge cap is hit.

        Only components touched by new observations since their last
        converged run are updated; the rest are already at a fixed point.
        """
        s = schedule or BpSchedule()
        limit = min(s.max_rounds, s.max_messages_per_edge)
        rounds_used, worst, all_converged = 0, 0.0, True
        for comp in self._components:
            if not comp.dirty:
                continue
            residual = np.inf
            rounds = 0
            while rounds < limit:
                residual = self._round(comp, s.damping)
                rounds += 1
                if residual < s.convergence_tol:
                    break
            converged = residual < s.convergence_tol
            comp.dirty = not converged
            all_converged &= converged
            rounds_used = max(rounds_used, rounds)
            worst = max(worst, residual)
        return BpReport(all_converged, rounds_used, float(worst))

    def path_marginals(self) -> np.ndarray:
        """``(M, K)`` array of normalized path marginals."""
        return floor_normalize(self.evidence * self.f2y)

    def link_marginals(self) -> np.ndarray:
        totals, _ = self._link_log_totals(np.arange(self.n_edges))
        totals -= totals.max(axis=1, keepdims=True)
        return floor_normalize(np.exp(totals))

    def path_marginal(self, path: str) -> Pmf:
        if path not in self._path_index:
            raise KeyError(f"unknown path {path!r}")
        i = self._path_index[path]
        return Pmf(self.grid, floor_normalize(self.evidence[i] * self.f2y[i]))

    def link_marginal(self, link: str) -> Pmf:
        if link not in self._link_index:
            raise KeyError(f"unknown link {link!r}")
        return Pmf(self.grid, self.link_marginals()[self._link_index[link]])

    def structure(self) -> dict:
        """JSON-ready description of nodes and edges, for debugging."""
        t = self.topology
        factors = [{"id": f"prior:{l}", "kind": "prior", "vars": [f"x:{l}"]} for l in t.links]
        for i, p in enumerate(t.paths):
            links = [f"x:{t.links[j]}" for j in self.edge_link[self.edge_start[i]:self.edge_start[i + 1]]]
            factors.append({"id": f"min:{p.id}", "kind": "min", "vars": [f"y:{p.id}", *links]})
        for k, o in enumerate(self.observations):
            factors.append({
                "id": f"obs:{k}", "kind": "likelihood", "vars": [f"y:{o.path}"],
                "rate": o.rate, "z": o.z,
            })
        return {
            "variables": [f"x:{l}" for l in t.links] + [f"y:{p.id}" for p in t.paths],
            "factors": factors,
            "edges": sum(len(f["vars"]) for f in factors),
        }


def build(topology: Topology, grid: RateGrid, isolate_paths: bool = False) -> FactorGraph:
    """Build the factor graph for ``topology``.

    With ``isolate_paths`` every path gets private copies of its links, which
    cuts all cross-path message flow (each path then learns only from its own
    measurements).
    """
    if isolate_paths:
        topology = isolated(topology)
    return FactorGraph(topology, grid)


def isolated(t: Topology) -> Topology:
    """Same paths, each over its own private copies of its links."""
    links, lists = [], {}
    for p, row in zip(t.paths, t.matrix):
        own = [f"{p.id}/{t.links[j]}" for j in np.flatnonzero(row)]
        links.extend(own)
        lists[p] = own
    return Topology.from_link_lists(links, lists.items())

