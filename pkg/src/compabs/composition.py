"""Interconnection graphs and M-approximate composition of finite systems.

Subsystem ``i`` receives as internal input any point of its internal-input
set lying within ``mu_i`` of the stacked outputs of its neighbours (ascending
neighbour index). The composed system has no internal input of its own.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Iterable, Sequence

import numpy as np

from .core import TransitionSystem, inf_distance


class CompositionError(ValueError):
    def __init__(self, msg: str, subsystem: int | None = None, point=None):
        super().__init__(msg)
        self.subsystem = subsystem
        self.point = point


@dataclass(frozen=True)
class InterconnectionGraph:
    """``edges`` holds 0-based pairs ``(j, i)``: subsystem ``j`` feeds ``i``."""

    n: int
    edges: frozenset

    def __post_init__(self):
        edges = frozenset((int(j), int(i)) for j, i in self.edges)
        for j, i in edges:
            if not (0 <= j < self.n and 0 <= i < self.n):
                raise ValueError(f"edge ({j}, {i}) outside 0..{self.n - 1}")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_one_based(cls, n: int, edges: Iterable[tuple[int, int]]) -> InterconnectionGraph:
        return cls(n, frozenset((j - 1, i - 1) for j, i in edges))

    def neighbors(self, i: int) -> tuple[int, ...]:
        return tuple(sorted(j for j, k in self.edges if k == i))

    def one_based_edges(self) -> list[tuple[int, int]]:
        return sorted((j + 1, i + 1) for j, i in self.edges)


@dataclass(frozen=True)
class CompositionParams:
    mu: tuple

    def __post_init__(self):
        mu = tuple(float(m) for m in np.ravel(self.mu))
        if any(m < 0 for m in mu):
            raise ValueError("composition slacks must be nonnegative")
        object.__setattr__(self, "mu", mu)

    def __len__(self) -> int:
        return len(self.mu)

    def __getitem__(self, i: int) -> float:
        return self.mu[i]

    def dominates(self, other: CompositionParams) -> bool:
        return all(a >= b for a, b in zip(self.mu, other.mu))

    @classmethod
    def uniform(cls, n: int, value: float) -> CompositionParams:
        return cls((value,) * n)


def _params(M) -> CompositionParams:
    return M if isinstance(M, CompositionParams) else CompositionParams(tuple(np.ravel(M)))


def neighbor_outputs_point(systems: Sequence[TransitionSystem], graph: InterconnectionGraph, i: int, global_state) -> np.ndarray:
    """Stacked ``H_j(x_j)`` for ``j`` in ``N(i)``; empty when ``i`` has no neighbours."""
    parts = [systems[j].outputs[global_state[j]] for j in graph.neighbors(i)]
    return np.concatenate(parts) if parts else np.zeros(0)


def internal_input_distance(u_int, neighbor_point, block_dims: Sequence[int] | None = None) -> float:
    """Max over neighbour blocks of the per-block infinity distance."""
    u = np.asarray(u_int, dtype=float).ravel()
    p = np.asarray(neighbor_point, dtype=float).ravel()
    if u.shape != p.shape:
        raise ValueError(f"arity mismatch: {u.size} vs {p.size}")
    if block_dims is None:
        block_dims = [1] * u.size
    if sum(block_dims) != u.size:
        raise ValueError("block dimensions do not add up to the internal-input arity")
    edges = np.cumsum([0, *block_dims])
    return composed_metrics([inf_distance(u[a:b], p[a:b]) for a, b in zip(edges[:-1], edges[1:])])


def composed_metrics(distances) -> float:
    d = np.asarray(distances, dtype=float).ravel()
    return float(d.max()) if d.size else 0.0


def _finite_outputs(ts: TransitionSystem) -> np.ndarray:
    keep = np.all(np.isfinite(ts.outputs), axis=1)
    return np.unique(ts.outputs[keep], axis=0)


def _neighbor_points(systems, graph, i) -> np.ndarray:
    nbrs = graph.neighbors(i)
    if not nbrs:
        return np.zeros((1, 0))
    sets = [_finite_outputs(systems[j]) for j in nbrs]
    return np.array([np.concatenate(c) for c in product(*sets)])


@dataclass(frozen=True)
class CompatibilityReport:
    ok: bool
    subsystem: int | None = None
    point: np.ndarray | None = None

    def __bool__(self) -> bool:
        return self.ok


def check_compatibility(systems: Sequence[TransitionSystem], graph: InterconnectionGraph, M) -> CompatibilityReport:
    """Every finite neighbour-output tuple has an internal input within ``mu_i``.

    Tuples are drawn from the product of the neighbours' output sets, a
    superset of the reachable ones. Sink outputs (non-finite) are skipped.
    """
    M = _params(M)
    if len(M) != graph.n or len(systems) != graph.n:
        raise ValueError("one slack and one system per graph node required")
    for i, ts in enumerate(systems):
        pts = _neighbor_points(systems, graph, i)
        if pts.shape[1] != ts.int_inputs.shape[1]:
            raise CompositionError(
                f"subsystem {i}: internal inputs have dimension {ts.int_inputs.shape[1]}, "
                f"neighbour outputs stack to {pts.shape[1]}",
                i,
            )
        for p in pts:
            if np.min(np.atleast_1d(inf_distance(ts.int_inputs, p))) > M[i]:
                return CompatibilityReport(False, i, p)
    return CompatibilityReport(True)


class ComposedSystem:
    """Successor oracle for an M-approximate composition; never builds the product."""

    def __init__(self, systems: Sequence[TransitionSystem], graph: InterconnectionGraph, M, nearest: bool = False):
        self.systems = list(systems)
        self.graph = graph
        self.M = _params(M)
        if len(self.M) != graph.n or len(self.systems) != graph.n:
            raise ValueError("one slack and one system per graph node required")
        self.nearest = nearest
        self.shape = tuple(ts.n_states for ts in self.systems)
        self.ext_shape = tuple(ts.n_ext for ts in self.systems)
        self._nbrs = [graph.neighbors(i) for i in range(graph.n)]
        self._cache: dict = {}

    @property
    def n_states(self) -> int:
        return int(np.prod(self.shape))

    @property
    def n_ext(self) -> int:
        return int(np.prod(self.ext_shape))

    def state_index(self, xs) -> int:
        return int(np.ravel_multi_index(tuple(xs), self.shape))

    def state_tuple(self, x: int) -> tuple[int, ...]:
        return tuple(int(v) for v in np.unravel_index(x, self.shape))

    def input_tuple(self, u: int) -> tuple[int, ...]:
        return tuple(int(v) for v in np.unravel_index(u, self.ext_shape))

    def allowed_int_inputs(self, i: int, xs) -> tuple[int, ...]:
        """Internal inputs of subsystem ``i`` within ``mu_i`` of its neighbours' outputs."""
        key = (i, tuple(xs[j] for j in self._nbrs[i]))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        ts = self.systems[i]
        point = neighbor_outputs_point(self.systems, self.graph, i, xs)
        d = np.atleast_1d(inf_distance(ts.int_inputs, point))
        if self.nearest:
            best = int(np.argmin(d))
            out = (best,) if d[best] <= self.M[i] else ()
        else:
            out = tuple(int(k) for k in np.flatnonzero(d <= self.M[i]))
        self._cache[key] = out
        return out

    def local_successors(self, i: int, xs, e: int) -> tuple[int, ...]:
        ts = self.systems[i]
        succ: set[int] = set()
        for w in self.allowed_int_inputs(i, xs):
            succ.update(ts._post.get((xs[i], e, w), ()))
        return tuple(sorted(succ))

    def successor_factors(self, xs, es) -> list[tuple[int, ...]] | None:
        """Per-subsystem successor sets; None when some factor is empty."""
        out = []
        for i in range(self.graph.n):
            s = self.local_successors(i, xs, es[i])
            if not s:
                return None
            out.append(s)
        return out

    def successors(self, x: int, u: int) -> tuple[int, ...]:
        return self.successors_from_tuple(self.state_tuple(x), u)

    def outputs(self) -> np.ndarray:
        grids = np.meshgrid(*[np.arange(n) for n in self.shape], indexing="ij")
        idx = [g.ravel() for g in grids]
        return np.concatenate([ts.outputs[k] for ts, k in zip(self.systems, idx)], axis=1)

    def ext_inputs(self) -> np.ndarray:
        grids = np.meshgrid(*[np.arange(n) for n in self.ext_shape], indexing="ij")
        idx = [g.ravel() for g in grids]
        return np.concatenate([ts.ext_inputs[k] for ts, k in zip(self.systems, idx)], axis=1)

    def initial(self) -> list[int]:
        return sorted(self.state_index(c) for c in product(*[sorted(ts.initial) for ts in self.systems]))

    def materialize(self, name: str = "") -> TransitionSystem:
        trans = []
        for x in range(self.n_states):
            xs = self.state_tuple(x)
            for u in range(self.n_ext):
                for xp in self.successors_from_tuple(xs, u):
                    trans.append((x, u, 0, xp))
        return TransitionSystem(self.outputs(), trans, self.initial(), self.ext_inputs(), None, name)

    def successors_from_tuple(self, xs, u: int) -> tuple[int, ...]:
        f = self.successor_factors(xs, self.input_tuple(u))
        if f is None:
            return ()
        return tuple(sorted(self.state_index(c) for c in product(*f)))


def compose(systems: Sequence[TransitionSystem], graph: InterconnectionGraph, M, materialize: bool = True, check: bool = True):
    """M-approximate composition; materialized product or a lazy :class:`ComposedSystem`."""
    if check:
        rep = check_compatibility(systems, graph, M)
        if not rep:
            raise CompositionError(
                f"not compatible: subsystem {rep.subsystem} has no internal input near {rep.point}",
                rep.subsystem,
                rep.point,
            )
    oracle = ComposedSystem(systems, graph, M)
    return oracle.materialize() if materialize else oracle
