"""Array-based M-approximate composition of scalar grid abstractions.

For one-dimensional subsystems, quantization is monotone. So the cells
reachable by subsystem ``i`` under every internal input within ``mu_i`` of
its neighbours' outputs form an interval. The composed successor set of a
global cell is therefore a box. Interval tables are built per subsystem over
only the coordinates the update depends on, and broadcast over the product.
Box containment in the current winning set is decided with N-dimensional
prefix sums.

``domain`` restricts the product to a sub-box of cells per subsystem.
A successor box that is not inside the domain counts as leaving it.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np

from .abstraction import GridAbstraction
from .composition import CompositionParams, InterconnectionGraph


class FastPathUnsupported(ValueError):
    pass


@dataclass
class LocalTable:
    """Successor intervals of one subsystem.

    Arrays are indexed ``[e, cell of keys[0], cell of keys[1], ...]``; ``ok``
    is false where no internal input is admissible or some successor leaves
    the state box.
    """

    keys: tuple
    lo: np.ndarray
    hi: np.ndarray
    ok: np.ndarray


def _allowed_ranges(lattice: np.ndarray, centers: np.ndarray, mu: float):
    near = np.abs(lattice[None, :] - centers[:, None]) <= mu
    has = near.any(axis=1)
    first = np.argmax(near, axis=1)
    last = lattice.size - 1 - np.argmax(near[:, ::-1], axis=1)
    return first, last, has


def local_table(abstractions: Sequence[GridAbstraction], graph: InterconnectionGraph, i: int, mu: float) -> LocalTable:
    a = abstractions[i]
    if a.grid.dim != 1:
        raise FastPathUnsupported(f"subsystem {i} is not one-dimensional")
    nbrs = graph.neighbors(i)
    model = a.model
    if model.int_dim != len(nbrs):
        raise FastPathUnsupported(f"subsystem {i}: {model.int_dim} internal inputs for {len(nbrs)} neighbours")
    coupled = np.asarray(model.int_coupling(), dtype=bool)
    for d, j in enumerate(nbrs):
        if coupled[d]:
            continue
        lat = a.int_grid.axis(d)
        if not _allowed_ranges(lat, abstractions[j].grid.axis(0), mu)[2].all():
            raise FastPathUnsupported(f"subsystem {i}: uncoupled input {d} not covered within mu={mu}")

    cdims = [d for d in range(len(nbrs)) if coupled[d]]
    keys = tuple(sorted({i, *(nbrs[d] for d in cdims)}))
    kpos = {k: p for p, k in enumerate(keys)}
    counts = [abstractions[k].grid.counts[0] for k in keys]
    n_e = a.n_ext
    nk = len(keys)
    # axes: [e, keys..., offsets per coupled dim]
    base_shape = (n_e, *counts)

    def key_axis(k, arr):
        shape = [1] * (1 + nk)
        shape[1 + kpos[k]] = -1
        return arr.reshape(shape)

    offs_shape = []
    wvals, wvalid = [], []
    for c, d in enumerate(cdims):
        j = nbrs[d]
        lat = a.int_grid.axis(d)
        first, last, has = _allowed_ranges(lat, abstractions[j].grid.axis(0), mu)
        K = int(np.max(np.where(has, last - first + 1, 0)))
        K = max(K, 1)
        offs_shape.append(K)
        off = np.arange(K).reshape([1] * (1 + nk) + [K if q == c else 1 for q in range(len(cdims))])
        f = key_axis(j, first).reshape(key_axis(j, first).shape + (1,) * len(cdims))
        l = key_axis(j, last).reshape(f.shape)
        h = key_axis(j, has).reshape(f.shape)
        idx = f + off
        wvalid.append(h & (idx <= l))
        wvals.append(lat[np.clip(idx, 0, lat.size - 1)])
    full = base_shape + tuple(offs_shape)
    valid = np.ones(full, dtype=bool)
    for v in wvalid:
        valid = valid & v
    W = np.zeros(full + (model.int_dim,))
    for d_pos, d in enumerate(cdims):
        W[..., d] = np.broadcast_to(wvals[d_pos], full)
    for d, j in enumerate(nbrs):
        if not coupled[d]:
            W[..., d] = 0.0
    x = key_axis(i, a.grid.axis(0)).reshape(key_axis(i, a.grid.axis(0)).shape + (1,) * len(cdims))
    X = np.broadcast_to(x, full)[..., None]
    U = np.broadcast_to(model.ext_inputs.reshape((n_e,) + (1,) * (nk + len(cdims)) + (-1,)), full + (model.ext_inputs.shape[1],))
    nxt = model.step(X, U, W)
    cell, inside = a.grid.cell_indices(nxt)
    cell = cell[..., 0]
    red = tuple(range(1 + nk, 1 + nk + len(cdims)))
    big = np.iinfo(np.int64).max
    lo = np.min(np.where(valid, cell, big), axis=red) if red else np.where(valid, cell, big)
    hi = np.max(np.where(valid, cell, -1), axis=red) if red else np.where(valid, cell, -1)
    any_valid = valid.any(axis=red) if red else valid
    leaves = (valid & ~inside).any(axis=red) if red else (valid & ~inside)
    ok = any_valid & ~leaves
    if red:
        # every cell between lo and hi must actually be hit
        flat = np.where(valid, cell, -1).reshape(base_shape + (-1,))
        s = np.sort(flat, axis=-1)
        starts = np.concatenate([s[..., :1] >= 0, (np.diff(s, axis=-1) != 0) & (s[..., 1:] >= 0)], axis=-1)
        distinct = starts.sum(axis=-1)
        if np.any(ok & (distinct != hi - lo + 1)):
            raise FastPathUnsupported(f"subsystem {i}: successor cells are not contiguous")
    lo = np.where(ok, lo, 0).astype(np.int32)
    hi = np.where(ok, hi, -1).astype(np.int32)
    return LocalTable(keys, lo, hi, ok)


class GridComposition:
    """Box-valued composition of scalar grid abstractions over a cell domain."""

    def __init__(self, abstractions: Sequence[GridAbstraction], graph: InterconnectionGraph, M, domain=None):
        self.abstractions = list(abstractions)
        self.graph = graph
        self.M = M if isinstance(M, CompositionParams) else CompositionParams(tuple(np.ravel(M)))
        n = graph.n
        if domain is None:
            domain = [(0, a.grid.counts[0] - 1) for a in self.abstractions]
        self.domain = [(int(lo), int(hi)) for lo, hi in domain]
        self.shape = tuple(hi - lo + 1 for lo, hi in self.domain)
        self.ext_shape = tuple(a.n_ext for a in self.abstractions)
        self.tables = [local_table(self.abstractions, graph, i, self.M[i]) for i in range(n)]

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def n_states(self) -> int:
        return int(np.prod(self.shape))

    @property
    def n_inputs(self) -> int:
        return int(np.prod(self.ext_shape))

    def inputs(self) -> list[tuple[int, ...]]:
        return list(product(*[range(k) for k in self.ext_shape]))

    def _sub(self, t: LocalTable, arr: np.ndarray, e: int) -> np.ndarray:
        """Table slice over the domain, shaped to broadcast over the product."""
        sl = arr[e][np.ix_(*[np.arange(self.domain[k][0], self.domain[k][1] + 1) for k in t.keys])]
        shape = [1] * self.n
        for p, k in enumerate(t.keys):
            shape[k] = self.shape[k]
        return sl.reshape(shape)

    def boxes(self, u) -> tuple[list, list, np.ndarray]:
        """Successor boxes for global input ``u`` in domain coordinates, plus a validity mask."""
        los, his = [], []
        valid = np.ones(self.shape, dtype=bool)
        for i, t in enumerate(self.tables):
            lo = self._sub(t, t.lo, u[i]) - self.domain[i][0]
            hi = self._sub(t, t.hi, u[i]) - self.domain[i][0]
            ok = self._sub(t, t.ok, u[i]) & (lo >= 0) & (hi < self.shape[i])
            valid = valid & ok
            los.append(lo)
            his.append(hi)
        return los, his, valid

    def gather(self, u, coords: Sequence[np.ndarray]):
        """Boxes for the listed domain cells only: arrays ``(m,)`` per dimension."""
        los, his = [], []
        ok = np.ones(coords[0].shape, dtype=bool)
        for i, t in enumerate(self.tables):
            idx = tuple(coords[k] + self.domain[k][0] for k in t.keys)
            lo = t.lo[u[i]][idx] - self.domain[i][0]
            hi = t.hi[u[i]][idx] - self.domain[i][0]
            ok &= t.ok[u[i]][idx] & (lo >= 0) & (hi < self.shape[i])
            los.append(lo)
            his.append(hi)
        return los, his, ok

    def successors(self, xs, u) -> list[tuple[int, ...]]:
        """Explicit successor cells (absolute indices) of one domain cell; small instances only."""
        coords = [np.array([xs[k] - self.domain[k][0]]) for k in range(self.n)]
        los, his, ok = self.gather(u, coords)
        if not ok[0]:
            return []
        ranges = [range(int(l[0]) + d[0], int(h[0]) + d[0] + 1) for l, h, d in zip(los, his, self.domain)]
        return list(product(*ranges))

    def wide_axes(self) -> list[int]:
        """Axes along which some successor interval spans more than one cell."""
        return [i for i, t in enumerate(self.tables) if np.any(t.ok & (t.hi > t.lo))]

    def materialize(self, memory_limit: int | None = None) -> dict:
        """Box arrays for every global input over the whole domain.

        Raises MemoryError before allocating when the estimate exceeds
        ``memory_limit`` bytes.
        """
        need = self.n_inputs * self.n_states * (2 * self.n * 2 + 1)
        if memory_limit is not None and need > memory_limit:
            raise MemoryError(f"materialized composition needs ~{need / 2**20:.0f} MiB > limit")
        out = {}
        for u in self.inputs():
            los, his, valid = self.boxes(u)
            out[u] = (
                np.stack([np.broadcast_to(l, self.shape).astype(np.int16) for l in los]),
                np.stack([np.broadcast_to(h, self.shape).astype(np.int16) for h in his]),
                valid,
            )
        return out

    def transition_count(self) -> int:
        total = 0
        for u in self.inputs():
            los, his, valid = self.boxes(u)
            vol = np.ones(self.shape, dtype=np.int64)
            for l, h in zip(los, his):
                vol = vol * (h - l + 1)
            total += int(np.sum(np.where(valid, vol, 0)))
        return total


def _prefix(W: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    P = W.astype(np.int32)
    for ax in axes:
        P = np.cumsum(P, axis=ax, dtype=np.int32)
        pad = [(0, 0)] * P.ndim
        pad[ax] = (1, 0)
        P = np.pad(P, pad)
    return P


def box_contained(P: np.ndarray, wide: Sequence[int], los, his) -> np.ndarray:
    """Do the boxes ``[lo, hi]`` (arrays per axis) lie inside the set summarized by ``P``?"""
    m = los[0].shape[0]
    strides = np.array(P.strides) // P.itemsize
    base = np.zeros(m, dtype=np.int64)
    vol = np.ones(m, dtype=np.int64)
    for ax in range(len(los)):
        if ax not in wide:
            base += strides[ax] * los[ax]
        else:
            vol *= his[ax] - los[ax] + 1
    flatP = P.ravel()
    total = np.zeros(m, dtype=np.int64)
    for corner in product((0, 1), repeat=len(wide)):
        idx = base.copy()
        for bit, ax in zip(corner, wide):
            idx += strides[ax] * (his[ax] + 1 if bit else los[ax])
        sign = -1 if (len(wide) - sum(corner)) % 2 else 1
        total += sign * flatP[idx]
    return total == vol
