"""Safety controllers: maximal controlled invariants and closed-loop refinement."""
from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .composition import ComposedSystem, InterconnectionGraph
from .core import TransitionSystem
from .gridcompose import GridComposition, _prefix, box_contained


def pick_input(policy_set, rng=None):
    """Lowest input for reproducible runs, or a draw from ``rng`` when given."""
    choices = sorted(policy_set)
    if not choices:
        raise ValueError("empty policy set: no admissible input")
    if rng is None:
        return choices[0]
    return choices[int(rng.integers(len(choices)))]


@dataclass
class SafetyController:
    winning: frozenset
    policy: dict
    safe_set: list = field(default_factory=list)

    def __post_init__(self):
        for x, us in self.policy.items():
            if not us:
                raise ValueError(f"winning state {x} has an empty policy")

    def __len__(self) -> int:
        return len(self.winning)

    def to_dict(self) -> dict:
        return {
            "safe_set": self.safe_set,
            "policy": [[int(x), sorted(int(u) for u in self.policy[x])] for x in sorted(self.winning)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> SafetyController:
        policy = {int(x): tuple(us) for x, us in d["policy"]}
        return cls(frozenset(policy), policy, d.get("safe_set", []))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> SafetyController:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _explicit_fixpoint(ts: TransitionSystem, safe: set) -> SafetyController:
    succ = {}
    for x in range(ts.n_states):
        for e in range(ts.n_ext):
            s = ts.ext_successors(x, e)
            if s:
                succ[(x, e)] = s
    W = set(safe)
    enabled = {k for k, s in succ.items() if s <= W}
    live = [0] * ts.n_states
    for x, _ in enabled:
        live[x] += 1
    queue = deque(sorted(x for x in W if live[x] == 0))
    removed = set(range(ts.n_states)) - W
    queue.extend(sorted(removed))
    W -= set(queue)
    while queue:
        y = queue.popleft()
        for x, e, _ in ts.labeled_predecessors(y):
            if (x, e) in enabled:
                enabled.discard((x, e))
                live[x] -= 1
                if live[x] == 0 and x in W:
                    W.discard(x)
                    queue.append(x)
    policy = {}
    for x, e in sorted(enabled):
        if x in W:
            policy.setdefault(x, []).append(e)
    return SafetyController(frozenset(W), {x: tuple(v) for x, v in policy.items()})


def _oracle_fixpoint(oracle: ComposedSystem, safe: set) -> SafetyController:
    W = set(safe)
    cache = {}

    def succ(x, u):
        if (x, u) not in cache:
            cache[(x, u)] = frozenset(oracle.successors(x, u))
        return cache[(x, u)]

    changed = True
    while changed:
        changed = False
        for x in sorted(W):
            if not any(succ(x, u) and succ(x, u) <= W for u in range(oracle.n_ext)):
                W.discard(x)
                changed = True
    policy = {x: tuple(u for u in range(oracle.n_ext) if succ(x, u) and succ(x, u) <= W) for x in W}
    return SafetyController(frozenset(W), policy)


def safety_fixpoint(ts, safe_states) -> SafetyController:
    """Greatest ``W`` inside the safe states where every state has an input with ``{} != post(x, u) <= W``.

    ``ts`` is an explicit :class:`TransitionSystem` (solved by deletion with
    per-state live-input counters) or a :class:`ComposedSystem` oracle
    (solved by sweeping successor queries). Internal inputs of an explicit
    system are treated as adversarial.
    """
    safe = {int(x) for x in safe_states}
    if isinstance(ts, ComposedSystem):
        return _oracle_fixpoint(ts, safe)
    return _explicit_fixpoint(ts, safe)


# -- grid fast path -----------------------------------------------------------


@dataclass
class GridController:
    """Winning cells over a :class:`GridComposition` domain with a bitmask of good inputs."""

    comp: GridComposition
    winning: np.ndarray
    policy: np.ndarray
    iterations: int = 0
    safe_set: list = field(default_factory=list)

    @property
    def inputs(self) -> list[tuple[int, ...]]:
        return self.comp.inputs()

    def __len__(self) -> int:
        return int(self.winning.sum())

    def _local(self, cell) -> tuple[int, ...] | None:
        loc = tuple(int(c) - d[0] for c, d in zip(cell, self.comp.domain))
        if any(not 0 <= v < s for v, s in zip(loc, self.comp.shape)):
            return None
        return loc

    def contains(self, cell) -> bool:
        loc = self._local(cell)
        return loc is not None and bool(self.winning[loc])

    def allowed(self, cell) -> list[int]:
        loc = self._local(cell)
        if loc is None or not self.winning[loc]:
            return []
        mask = int(self.policy[loc])
        return [k for k in range(len(self.inputs)) if mask >> k & 1]

    def winning_cells(self) -> np.ndarray:
        """Absolute cell indices of winning states, sorted row-major."""
        loc = np.argwhere(self.winning)
        return loc + np.array([d[0] for d in self.comp.domain])

    def save(self, path) -> None:
        cells = self.winning_cells()
        loc = tuple((cells - np.array([d[0] for d in self.comp.domain])).T)
        meta = {
            "domain": self.comp.domain,
            "inputs": [list(u) for u in self.inputs],
            "safe_set": self.safe_set,
            "iterations": self.iterations,
        }
        np.savez_compressed(path, cells=cells, policy=self.policy[loc], meta=json.dumps(meta))

    @classmethod
    def load(cls, path, comp: GridComposition) -> GridController:
        """Restore a controller saved by :meth:`save` onto an equivalent composition."""
        with np.load(path) as z:
            cells, pol, meta = z["cells"], z["policy"], json.loads(str(z["meta"]))
        if [tuple(d) for d in meta["domain"]] != [tuple(d) for d in comp.domain]:
            raise ValueError("controller domain does not match the composition")
        W = np.zeros(comp.shape, dtype=bool)
        policy = np.zeros(comp.shape, dtype=np.uint32)
        if len(cells):
            loc = tuple((cells - np.array([d[0] for d in comp.domain])).T)
            W[loc] = True
            policy[loc] = pol
        return cls(comp, W, policy, int(meta["iterations"]), meta["safe_set"])


def grid_safety_fixpoint(comp: GridComposition, safe_mask: np.ndarray | None = None, safe_set=None) -> GridController:
    """Maximal controlled invariant of a box-valued composition.

    Each round recomputes prefix sums of the current winning set and keeps
    the cells owning an input whose successor box lies inside it. The input
    that worked last round is tried first.
    """
    W = np.ones(comp.shape, dtype=bool) if safe_mask is None else np.asarray(safe_mask, dtype=bool).copy()
    wide = comp.wide_axes()
    inputs = comp.inputs()
    witness = np.full(comp.shape, -1, dtype=np.int16)
    rounds = 0
    while True:
        rounds += 1
        P = _prefix(W, wide)
        alive = np.flatnonzero(W)
        coords = np.unravel_index(alive, comp.shape)
        wit = witness.ravel()[alive]
        good = np.zeros(alive.size, dtype=bool)
        new_wit = np.full(alive.size, -1, dtype=np.int16)
        for first_pass in (True, False):
            for k, u in enumerate(inputs):
                sel = np.flatnonzero(~good & (wit == k)) if first_pass else np.flatnonzero(~good)
                if sel.size == 0:
                    continue
                c = [a[sel] for a in coords]
                los, his, ok = comp.gather(u, c)
                hit = np.zeros(sel.size, dtype=bool)
                if ok.any():
                    idx = np.flatnonzero(ok)
                    hit[idx] = box_contained(P, wide, [l[idx] for l in los], [h[idx] for h in his])
                good[sel[hit]] = True
                new_wit[sel[hit]] = k
        witness.ravel()[alive] = new_wit
        if good.all():
            break
        W.ravel()[alive[~good]] = False
    policy = np.zeros(comp.shape, dtype=np.uint32)
    alive = np.flatnonzero(W)
    coords = np.unravel_index(alive, comp.shape)
    P = _prefix(W, wide)
    for k, u in enumerate(inputs):
        los, his, ok = comp.gather(u, coords)
        hit = np.zeros(alive.size, dtype=bool)
        idx = np.flatnonzero(ok)
        if idx.size:
            hit[idx] = box_contained(P, wide, [l[idx] for l in los], [h[idx] for h in his])
        policy.ravel()[alive[hit]] |= np.uint32(1 << k)
    return GridController(comp, W, policy, rounds, list(safe_set or []))


def _safe_axis(a, k, lo: float, hi: float, margin: float, rule: str) -> np.ndarray:
    left = a.grid.lo[0] + a.grid.eta[0] * k
    if rule == "center":
        c = left + a.grid.eta[0] / 2
        return (c >= lo + margin) & (c <= hi - margin)
    if rule == "inner":
        return (left >= lo + margin) & (left + a.grid.eta[0] <= hi - margin)
    raise ValueError(f"unknown safe-cell rule {rule!r}")


def safe_cell_mask(comp: GridComposition, safe_box, margin: float = 0.0, rule: str = "inner") -> np.ndarray:
    """Domain cells counted as safe.

    ``center``: the cell centre lies in the safe box shrunk by ``margin``;
    ``inner``: the whole cell does.
    """
    safe_box = np.asarray(safe_box, dtype=float).reshape(-1, 2)
    axes = [
        _safe_axis(a, np.arange(lo_d, hi_d + 1), *safe_box[i], margin, rule)
        for i, (a, (lo_d, hi_d)) in enumerate(zip(comp.abstractions, comp.domain))
    ]
    mask = axes[0]
    for ax in axes[1:]:
        mask = np.multiply.outer(mask, ax)
    return mask.astype(bool)


def safe_domain(abstractions, safe_box, margin: float = 0.0, rule: str = "inner") -> list[tuple[int, int]]:
    """Tightest per-subsystem cell range holding the safe cells."""
    safe_box = np.asarray(safe_box, dtype=float).reshape(-1, 2)
    out = []
    for i, a in enumerate(abstractions):
        idx = np.flatnonzero(_safe_axis(a, np.arange(a.grid.counts[0]), *safe_box[i], margin, rule))
        if idx.size == 0:
            raise ValueError(f"subsystem {i + 1}: no cell is safe")
        out.append((int(idx[0]), int(idx[-1])))
    return out


# -- closed loop --------------------------------------------------------------


class ControllerRefusal(ValueError):
    def __init__(self, msg: str, hint=None, trajectory=None):
        super().__init__(msg)
        self.hint = hint
        self.trajectory = trajectory


@dataclass
class Trajectory:
    states: np.ndarray
    inputs: np.ndarray
    input_ids: list
    cells: list
    in_safe: np.ndarray
    margin: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.inputs)

    def all_safe(self) -> bool:
        return bool(self.in_safe.all())

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        m = self.inputs.shape[1] if self.inputs.ndim == 2 else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", *[f"x_{k + 1}" for k in range(n)], *[f"u_{k + 1}" for k in range(m)], "in_safe"])
            for t, x in enumerate(self.states):
                u = [repr(float(v)) for v in self.inputs[t]] if t < len(self.inputs) else [""] * m
                w.writerow([t, *[repr(float(v)) for v in x], *u, int(self.in_safe[t])])

    def plot_data(self, safe_box) -> dict:
        safe_box = np.asarray(safe_box, dtype=float).reshape(-1, 2)
        return {
            "steps": list(range(len(self.states))),
            "series": [self.states[:, k].tolist() for k in range(self.states.shape[1])],
            "safe_lower": safe_box[:, 0].tolist(),
            "safe_upper": safe_box[:, 1].tolist(),
        }


def _in_box(x, box) -> tuple[bool, float]:
    margin = float(np.min(np.minimum(x - box[:, 0], box[:, 1] - x)))
    return margin >= 0, margin


def concrete_step(models, graph: InterconnectionGraph, x: np.ndarray, u_parts: Sequence[np.ndarray]) -> np.ndarray:
    """One step of the exact interconnection: internal inputs are the neighbours' states."""
    out = np.empty_like(x)
    for i, m in enumerate(models):
        w = np.array([x[j] for j in graph.neighbors(i)], dtype=float)
        out[i] = m.step(np.array([x[i]]), u_parts[i], w)[0]
    return out


def simulate_closed_loop(models, graph, x0, horizon: int, choose: Callable, safe_box) -> Trajectory:
    """Run ``choose(t, x) -> (input_id, per-subsystem input vectors, cell)`` for ``horizon`` steps."""
    box = np.asarray(safe_box, dtype=float).reshape(-1, 2)
    x = np.asarray(x0, dtype=float).copy()
    states, inputs, ids, cells, flags, margins = [x.copy()], [], [], [], [], []
    ok, mg = _in_box(x, box)
    flags.append(ok)
    margins.append(mg)
    for t in range(horizon):
        uid, parts, cell = choose(t, x)
        x = concrete_step(models, graph, x, parts)
        states.append(x.copy())
        inputs.append(np.concatenate([np.ravel(p) for p in parts]) if parts else np.zeros(0))
        ids.append(uid)
        cells.append(cell)
        ok, mg = _in_box(x, box)
        flags.append(ok)
        margins.append(mg)
    return Trajectory(np.array(states), np.array(inputs), ids, cells, np.array(flags), np.array(margins))


def related_cell(controller: GridController, x, radius: Sequence[float]):
    """Winning cell within ``radius`` of ``x`` (per subsystem), closest first, then row-major."""
    comp = controller.comp
    exact = tuple(int(a.grid.cell_indices(np.array([v]))[0][0]) for a, v in zip(comp.abstractions, x))
    if controller.contains(exact):
        return exact
    ranges = []
    for a, v, r, (dlo, dhi) in zip(comp.abstractions, x, radius, comp.domain):
        axis = a.grid.axis(0)
        k = np.flatnonzero(np.abs(axis - v) <= r)
        k = k[(k >= dlo) & (k <= dhi)]
        if k.size == 0:
            return None
        ranges.append(k)
    best, best_d = None, np.inf
    for cell in product(*ranges):
        if not controller.contains(cell):
            continue
        d = max(abs(a.grid.axis(0)[c] - v) for a, c, v in zip(comp.abstractions, cell, x))
        if d < best_d:
            best, best_d = cell, d
    return best


def nearest_winning(controller: GridController, x):
    cells = controller.winning_cells()
    if len(cells) == 0:
        return None
    centers = np.stack([a.grid.axis(0)[cells[:, i]] for i, a in enumerate(controller.comp.abstractions)], axis=1)
    d = np.max(np.abs(centers - np.asarray(x)), axis=1)
    return tuple(int(v) for v in cells[int(np.argmin(d))])


def refine_and_simulate(models, graph, controller: GridController, x0, horizon: int, radius=None,
                        safe_box=None, rng=None) -> Trajectory:
    """Drive the concrete network with the abstract policy.

    At every step the concrete state is mapped to its own cell when that
    cell is winning, else to the closest winning cell within ``radius``
    (default: each abstraction's eps). Refuses when no such cell exists.
    """
    comp = controller.comp
    if radius is None:
        radius = [a.guarantee.eps for a in comp.abstractions]
    if safe_box is None or len(safe_box) == 0:
        safe_box = controller.safe_set or [a.grid.bounds[0].tolist() for a in comp.abstractions]
    inputs = comp.inputs()

    def choose(t, x):
        cell = related_cell(controller, x, radius)
        if cell is None:
            raise ControllerRefusal(
                f"step {t}: state {np.round(x, 4).tolist()} is not related to any winning cell",
                hint=nearest_winning(controller, x),
            )
        k = pick_input(controller.allowed(cell), rng)
        u = inputs[k]
        parts = [a.model.ext_inputs[e] for a, e in zip(comp.abstractions, u)]
        return k, parts, cell

    return simulate_closed_loop(models, graph, x0, horizon, choose, safe_box)
