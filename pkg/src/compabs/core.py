"""Finite transition systems over pseudometric spaces.

States and inputs are dense integer indices. Every index carries a real
coordinate vector, and all distances are computed on those coordinates. The
default metric is the infinity norm of the coordinate difference.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Callable, Iterable, Iterator, NamedTuple

import numpy as np


def _inf_norm(diff: np.ndarray) -> np.ndarray:
    if diff.shape[-1] == 0:
        return np.zeros(diff.shape[:-1])
    return np.max(np.abs(diff), axis=-1)


def inf_distance(a, b) -> float | np.ndarray:
    """Infinity-norm distance, broadcasting over leading axes.

    Identical coordinates are at distance 0 even when they are infinite,
    which is how sink states compare equal to each other.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    with np.errstate(invalid="ignore"):
        diff = np.where(a == b, 0.0, a - b)
    d = _inf_norm(diff)
    return float(d) if np.ndim(d) == 0 else d


METRICS: dict[str, Callable] = {"inf": inf_distance}


@dataclass(frozen=True)
class PseudometricSpace:
    points: np.ndarray
    metric: str = "inf"

    def __post_init__(self):
        object.__setattr__(self, "points", _coords(self.points))
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def distance(self, a: int, b: int) -> float:
        return metric_distance(self, a, b)


def metric_distance(space: PseudometricSpace, a, b) -> float:
    """Distance between two points of ``space``.

    ``a`` and ``b`` may be point indices or raw coordinate vectors.
    """
    pa = space.points[a] if isinstance(a, (int, np.integer)) else np.asarray(a, dtype=float)
    pb = space.points[b] if isinstance(b, (int, np.integer)) else np.asarray(b, dtype=float)
    if pa.shape != (space.dim,) or pb.shape != (space.dim,):
        raise ValueError(f"expected points of dimension {space.dim}")
    return METRICS[space.metric](pa, pb)


class InputPair(NamedTuple):
    ext: int
    int: int


def _coords(arr) -> np.ndarray:
    a = np.asarray(arr, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ValueError("coordinates must be a 2-D array (points x dim)")
    return a


UNIT = np.zeros((1, 0))


class TransitionSystem:
    """Finite transition system ``(X, X0, U_ext, U_int, Delta, Y, H)``.

    ``outputs[x]`` is ``H(x)``; states carry no coordinates besides their
    output. Internal-input-free systems use the singleton unit input whose
    coordinate vector is empty.
    """

    def __init__(
        self,
        outputs,
        transitions: Iterable[tuple[int, int, int, int]],
        initial: Iterable[int] | None = None,
        ext_inputs=None,
        int_inputs=None,
        name: str = "",
    ):
        self.outputs = _coords(outputs)
        self.n_states = self.outputs.shape[0]
        self.ext_inputs = UNIT if ext_inputs is None else _coords(ext_inputs)
        self.int_inputs = UNIT if int_inputs is None else _coords(int_inputs)
        if len(self.ext_inputs) == 0 or len(self.int_inputs) == 0:
            raise ValueError("input sets must be nonempty")
        self.initial = frozenset(range(self.n_states) if initial is None else (int(i) for i in initial))
        self.name = name
        for x in self.initial:
            if not 0 <= x < self.n_states:
                raise IndexError(f"initial state {x} out of range")

        post: dict[tuple[int, int, int], set[int]] = {}
        for x, e, i, xp in transitions:
            x, e, i, xp = int(x), int(e), int(i), int(xp)
            self._check_state(x)
            self._check_state(xp)
            self._check_input(e, i)
            post.setdefault((x, e, i), set()).add(xp)
        self._post = {k: tuple(sorted(v)) for k, v in sorted(post.items())}
        inputs_at: dict[int, list[InputPair]] = {}
        pre: dict[int, set[int]] = {}
        pre_labeled: dict[int, list[tuple[int, int, int]]] = {}
        for (x, e, i), succ in self._post.items():
            inputs_at.setdefault(x, []).append(InputPair(e, i))
            for xp in succ:
                pre.setdefault(xp, set()).add(x)
                pre_labeled.setdefault(xp, []).append((x, e, i))
        self._inputs_at = {x: tuple(v) for x, v in inputs_at.items()}
        self._pre = {x: frozenset(v) for x, v in pre.items()}
        self._pre_labeled = pre_labeled

    # -- validation ---------------------------------------------------------
    def _check_state(self, x: int) -> None:
        if not 0 <= x < self.n_states:
            raise IndexError(f"state {x} out of range [0, {self.n_states})")

    def _check_input(self, e: int, i: int) -> None:
        if not 0 <= e < len(self.ext_inputs):
            raise IndexError(f"external input {e} out of range")
        if not 0 <= i < len(self.int_inputs):
            raise IndexError(f"internal input {i} out of range")

    # -- queries ------------------------------------------------------------
    @property
    def n_ext(self) -> int:
        return len(self.ext_inputs)

    @property
    def n_int(self) -> int:
        return len(self.int_inputs)

    @property
    def n_transitions(self) -> int:
        return sum(len(v) for v in self._post.values())

    def successors(self, x: int, u) -> tuple[int, ...]:
        e, i = u
        self._check_state(x)
        self._check_input(e, i)
        return self._post.get((x, e, i), ())

    def admissible_inputs(self, x: int) -> tuple[InputPair, ...]:
        self._check_state(x)
        return self._inputs_at.get(x, ())

    def ext_successors(self, x: int, e: int) -> frozenset[int]:
        """Union of successors over all internal inputs."""
        out: set[int] = set()
        for i in range(self.n_int):
            out.update(self._post.get((x, e, i), ()))
        return frozenset(out)

    def predecessors(self, x: int) -> frozenset[int]:
        return self._pre.get(x, frozenset())

    def labeled_predecessors(self, x: int) -> list[tuple[int, int, int]]:
        return self._pre_labeled.get(x, [])

    def transitions(self) -> Iterator[tuple[int, int, int, int]]:
        for (x, e, i), succ in self._post.items():
            for xp in succ:
                yield x, e, i, xp

    def is_deterministic(self) -> bool:
        return all(len(s) <= 1 for s in self._post.values())

    def output(self, x: int) -> np.ndarray:
        return self.outputs[x]

    @property
    def output_space(self) -> PseudometricSpace:
        return PseudometricSpace(self.outputs)

    def __repr__(self) -> str:
        return (
            f"TransitionSystem({self.name!r}, states={self.n_states}, ext={self.n_ext}, "
            f"int={self.n_int}, transitions={self.n_transitions})"
        )

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "states": self.n_states,
            "initial": sorted(self.initial),
            "outputs": _jsonable(self.outputs),
            "ext_inputs": _jsonable(self.ext_inputs),
            "int_inputs": _jsonable(self.int_inputs),
            "transitions": [list(t) for t in self.transitions()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> TransitionSystem:
        outputs = _unjson(d["outputs"])
        if len(outputs) != int(d["states"]):
            raise ValueError("output table does not match state count")
        return cls(
            outputs,
            [tuple(t) for t in d["transitions"]],
            d["initial"],
            _unjson(d["ext_inputs"]),
            _unjson(d["int_inputs"]),
            d.get("name", ""),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> TransitionSystem:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _jsonable(a: np.ndarray) -> list:
    return [[v if np.isfinite(v) else ("inf" if v > 0 else "-inf") for v in map(float, row)] for row in a]


def _unjson(rows: list) -> np.ndarray:
    dim = len(rows[0]) if rows else 0
    return np.array([[float(v) for v in row] for row in rows], dtype=float).reshape(len(rows), dim)


def input_pairs(ts: TransitionSystem) -> list[InputPair]:
    return [InputPair(e, i) for e, i in product(range(ts.n_ext), range(ts.n_int))]


def input_distance(s1: TransitionSystem, u1, s2: TransitionSystem, u2) -> float:
    """``max(d_ext, d_int)`` between input pairs of two systems."""
    de = inf_distance(s1.ext_inputs[u1[0]], s2.ext_inputs[u2[0]])
    di = inf_distance(s1.int_inputs[u1[1]], s2.int_inputs[u2[1]])
    return max(de, di)
