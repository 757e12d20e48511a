"""Approximate (alternating) simulation and bisimulation on finite systems.

Direction convention: a relation ``R`` between ``s1`` and ``s2`` is a set of
pairs ``(x1, x2)`` with ``x1`` in ``s1``. For plain simulation every move of
``s1`` is matched by ``s2``; initial states of ``s1`` must be covered. For
alternating simulation every input of ``s2`` is answered by an input of
``s1`` whose successors are all matched by some ``s2`` successor, and initial
states of ``s2`` must be covered. This is the orientation written
``S2 <=^{eps,mu} S1`` in the literature this package follows.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import InputPair, TransitionSystem, inf_distance

MODES = ("sim", "alt_sim", "bisim", "alt_bisim")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class Relation:
    pairs: frozenset
    eps: float
    mu: float
    mode: str = "sim"
    systems: tuple[str, str] = ("s1", "s2")

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "pairs", frozenset((int(a), int(b)) for a, b in self.pairs))

    @property
    def direction(self) -> str:
        return f"{self.systems[0]} x {self.systems[1]}"

    def inverse(self) -> Relation:
        return Relation(frozenset((b, a) for a, b in self.pairs), self.eps, self.mu, self.mode, self.systems[::-1])

    def __contains__(self, pair) -> bool:
        return tuple(pair) in self.pairs

    def __len__(self) -> int:
        return len(self.pairs)

    def dumps(self) -> str:
        head = {"eps": self.eps, "mu": self.mu, "mode": self.mode, "systems": list(self.systems)}
        return json.dumps({**head, "pairs": sorted(self.pairs)})

    @classmethod
    def loads(cls, text: str) -> Relation:
        d = json.loads(text)
        return cls(frozenset(map(tuple, d["pairs"])), d["eps"], d["mu"], d["mode"], tuple(d["systems"]))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> Relation:
        return cls.loads(Path(path).read_text())


@dataclass(frozen=True)
class Counterexample:
    condition: str
    pair: tuple | None = None
    state: int | None = None
    input: InputPair | None = None
    successor: int | None = None


@dataclass(frozen=True)
class Verdict:
    ok: bool
    counterexample: Counterexample | None = None

    def __bool__(self) -> bool:
        return self.ok


def _check_spaces(s1: TransitionSystem, s2: TransitionSystem) -> None:
    if s1.outputs.shape[1] != s2.outputs.shape[1]:
        raise ConfigurationError("output spaces differ in dimension")
    if s1.ext_inputs.shape[1] != s2.ext_inputs.shape[1]:
        raise ConfigurationError("external input spaces differ in dimension")
    if s1.int_inputs.shape[1] != s2.int_inputs.shape[1]:
        raise ConfigurationError("internal input spaces differ in dimension")


def output_compatible(s1: TransitionSystem, s2: TransitionSystem, eps: float) -> np.ndarray:
    """Boolean matrix of pairs with ``d(H1(x1), H2(x2)) <= eps``."""
    d = inf_distance(s1.outputs[:, None, :], s2.outputs[None, :, :])
    return np.atleast_2d(d) <= eps


def near_inputs(src: TransitionSystem, dst: TransitionSystem, mu: float) -> dict[InputPair, tuple[InputPair, ...]]:
    """For each input pair of ``src``, the pairs of ``dst`` within ``mu``, lowest index first."""
    de = np.atleast_2d(inf_distance(src.ext_inputs[:, None, :], dst.ext_inputs[None, :, :]))
    di = np.atleast_2d(inf_distance(src.int_inputs[:, None, :], dst.int_inputs[None, :, :]))
    ok_e = de <= mu
    ok_i = di <= mu
    out = {}
    for e1 in range(src.n_ext):
        es = np.flatnonzero(ok_e[e1])
        for i1 in range(src.n_int):
            is_ = np.flatnonzero(ok_i[i1])
            out[InputPair(e1, i1)] = tuple(InputPair(int(e), int(i)) for e in es for i in is_)
    return out


class _Img:
    """Mutable image map ``x1 -> {x2 : (x1, x2) in R}``."""

    def __init__(self, pairs: Iterable[tuple[int, int]], n1: int):
        self.img: list[set[int]] = [set() for _ in range(n1)]
        for a, b in pairs:
            self.img[a].add(b)

    def pairs(self) -> frozenset:
        return frozenset((a, b) for a, bs in enumerate(self.img) for b in bs)


def _sim_violation(s1, s2, x1, x2, img, near):
    """First violating (input, successor) of condition (iii) for plain simulation."""
    for u1 in s1.admissible_inputs(x1):
        cands = [(u2, s2._post[(x2, u2.ext, u2.int)]) for u2 in near[u1] if (x2, u2.ext, u2.int) in s2._post]
        for x1p in s1._post[(x1, u1.ext, u1.int)]:
            rel = img[x1p]
            if not any(not rel.isdisjoint(succ2) for _, succ2 in cands):
                return u1, x1p
    return None


def _alt_violation(s1, s2, x1, x2, img, near21):
    """First input of ``s2`` at ``x2`` that no ``s1`` input can answer."""
    for u2 in s2.admissible_inputs(x2):
        succ2 = s2._post[(x2, u2.ext, u2.int)]
        answered = False
        for u1 in near21[u2]:
            succ1 = s1._post.get((x1, u1.ext, u1.int))
            if succ1 and all(not img[x1p].isdisjoint(succ2) for x1p in succ1):
                answered = True
                break
        if not answered:
            return u2
    return None


def _verify(s1, s2, R, eps, mu, alternating: bool) -> Verdict:
    _check_spaces(s1, s2)
    pairs = sorted(R.pairs if isinstance(R, Relation) else {tuple(p) for p in R})
    for a, b in pairs:
        s1._check_state(a)
        s2._check_state(b)
    img = _Img(pairs, s1.n_states).img
    if alternating:
        for x20 in sorted(s2.initial):
            if not any(x20 in img[x10] for x10 in s1.initial):
                return Verdict(False, Counterexample("initial", state=x20))
    else:
        for x10 in sorted(s1.initial):
            if img[x10].isdisjoint(s2.initial):
                return Verdict(False, Counterexample("initial", state=x10))
    for a, b in pairs:
        if not inf_distance(s1.outputs[a], s2.outputs[b]) <= eps:
            return Verdict(False, Counterexample("output", pair=(a, b)))
    if alternating:
        near21 = near_inputs(s2, s1, mu)
        for a, b in pairs:
            u2 = _alt_violation(s1, s2, a, b, img, near21)
            if u2 is not None:
                return Verdict(False, Counterexample("transition", pair=(a, b), input=u2))
    else:
        near = near_inputs(s1, s2, mu)
        for a, b in pairs:
            v = _sim_violation(s1, s2, a, b, img, near)
            if v is not None:
                return Verdict(False, Counterexample("transition", pair=(a, b), input=v[0], successor=v[1]))
    return Verdict(True)


def verify_simulation(s1: TransitionSystem, s2: TransitionSystem, R, eps: float, mu: float) -> Verdict:
    """Check that ``R`` is an (eps, mu)-approximate simulation relation.

    Returns a falsy :class:`Verdict` carrying the lexicographically smallest
    violating pair and input on failure.
    """
    return _verify(s1, s2, R, eps, mu, alternating=False)


def verify_alternating_simulation(s1: TransitionSystem, s2: TransitionSystem, R, eps: float, mu: float) -> Verdict:
    return _verify(s1, s2, R, eps, mu, alternating=True)


def _refine(s1, s2, eps, mu, alternating: bool) -> frozenset:
    """Greatest fixed point of condition (iii) restricted to output-compatible pairs."""
    _check_spaces(s1, s2)
    compat = output_compatible(s1, s2, eps)
    seed = [(int(a), int(b)) for a, b in zip(*np.nonzero(compat))]
    R = _Img(seed, s1.n_states)
    img = R.img
    if alternating:
        near21 = near_inputs(s2, s1, mu)
        bad = lambda a, b: _alt_violation(s1, s2, a, b, img, near21) is not None
    else:
        near = near_inputs(s1, s2, mu)
        bad = lambda a, b: _sim_violation(s1, s2, a, b, img, near) is not None
    work = deque(seed)
    queued = set(seed)
    while work:
        p = work.popleft()
        queued.discard(p)
        a, b = p
        if b not in img[a] or not bad(a, b):
            continue
        img[a].discard(b)
        # only pairs that may have used (a, b) as a witness need rechecking
        preds2 = s2.predecessors(b)
        for pa in s1.predecessors(a):
            for pb in img[pa] & preds2:
                q = (pa, pb)
                if q not in queued:
                    queued.add(q)
                    work.append(q)
    return R.pairs()


def max_simulation(s1: TransitionSystem, s2: TransitionSystem, eps: float, mu: float) -> Relation | None:
    """Largest (eps, mu)-approximate simulation relation, or None if initial states are not covered."""
    pairs = _refine(s1, s2, eps, mu, alternating=False)
    img = _Img(pairs, s1.n_states).img
    if any(img[x].isdisjoint(s2.initial) for x in s1.initial):
        return None
    return Relation(pairs, eps, mu, "sim", (s1.name or "s1", s2.name or "s2"))


def max_alternating_simulation(s1: TransitionSystem, s2: TransitionSystem, eps: float, mu: float) -> Relation | None:
    pairs = _refine(s1, s2, eps, mu, alternating=True)
    covered = {b for a, b in pairs if a in s1.initial}
    if not s2.initial <= covered:
        return None
    return Relation(pairs, eps, mu, "alt_sim", (s1.name or "s1", s2.name or "s2"))


def check_bisimulation(s1, s2, eps: float, mu: float, alternating: bool = False):
    """Both directions of (alternating) simulation.

    Returns ``(R, R_rev)`` with ``R`` over ``s1 x s2`` and ``R_rev`` over
    ``s2 x s1``, or None when either direction fails.
    """
    solve = max_alternating_simulation if alternating else max_simulation
    R = solve(s1, s2, eps, mu)
    if R is None:
        return None
    R_rev = solve(s2, s1, eps, mu)
    if R_rev is None:
        return None
    mode = "alt_bisim" if alternating else "bisim"
    return (
        Relation(R.pairs, eps, mu, mode, R.systems),
        Relation(R_rev.pairs, eps, mu, mode, R_rev.systems),
    )


def compose_relations(R12: Relation, R23: Relation) -> Relation:
    """Relational composition; the (eps, mu) tags add up."""
    if R12.mode != R23.mode:
        raise ConfigurationError(f"mode mismatch: {R12.mode} vs {R23.mode}")
    if R12.systems[1] != R23.systems[0]:
        raise ConfigurationError(f"middle system mismatch: {R12.systems[1]!r} vs {R23.systems[0]!r}")
    by_mid: dict[int, list[int]] = {}
    for q2, q3 in R23.pairs:
        by_mid.setdefault(q2, []).append(q3)
    pairs = frozenset((q1, q3) for q1, q2 in R12.pairs for q3 in by_mid.get(q2, ()))
    return Relation(pairs, R12.eps + R23.eps, R12.mu + R23.mu, R12.mode, (R12.systems[0], R23.systems[1]))


def widen(R: Relation, eps: float, mu: float) -> Relation:
    if eps < R.eps or mu < R.mu:
        raise ValueError(f"cannot shrink ({R.eps}, {R.mu}) to ({eps}, {mu})")
    return Relation(R.pairs, eps, mu, R.mode, R.systems)


def distance_relation(s1: TransitionSystem, s2: TransitionSystem, eps: float, mode: str = "sim") -> Relation:
    """All pairs with output distance at most ``eps``."""
    compat = output_compatible(s1, s2, eps)
    pairs = frozenset((int(a), int(b)) for a, b in zip(*np.nonzero(compat)))
    return Relation(pairs, eps, 0.0, mode, (s1.name or "s1", s2.name or "s2"))
