"""Incremental input-to-state stability certificates and gain conditions.

Certificates use an exponential decay ``beta(r, k) = r * lam**k`` and linear
input gains ``gamma(r) = g * r``. The condition checkers only ever evaluate
``beta`` at ``k = 1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class NotCertifiable(ValueError):
    def __init__(self, msg: str, norm: float, spectral_radius: float | None = None):
        super().__init__(msg)
        self.norm = norm
        self.spectral_radius = spectral_radius


class Infeasible(ValueError):
    def __init__(self, msg: str, subsystem: int):
        super().__init__(msg)
        self.subsystem = subsystem


def mat_inf_norm(M) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(M), axis=1)))


@dataclass(frozen=True)
class DeltaIssCertificate:
    lam: float
    g_ext: float
    g_int: float

    def __post_init__(self):
        if not 0.0 <= self.lam < 1.0:
            raise ValueError(f"contraction factor must lie in [0, 1), got {self.lam}")
        if self.g_ext < 0 or self.g_int < 0:
            raise ValueError("gains must be nonnegative")

    def beta(self, r, k):
        return np.asarray(r, dtype=float) * self.lam ** np.asarray(k)

    def gamma_ext(self, r):
        return self.g_ext * np.asarray(r, dtype=float)

    def gamma_int(self, r):
        return self.g_int * np.asarray(r, dtype=float)

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "g_ext": self.g_ext, "g_int": self.g_int}

    @classmethod
    def from_dict(cls, d: dict) -> DeltaIssCertificate:
        return cls(float(d["lambda"]), float(d["g_ext"]), float(d["g_int"]))


def _box(bounds) -> np.ndarray:
    b = np.asarray(bounds, dtype=float).reshape(-1, 2)
    if np.any(b[:, 0] > b[:, 1]):
        raise ValueError("empty state box")
    return b


@dataclass
class LinearModel:
    """``x+ = A x + B u_ext + D u_int`` on a box with a finite external input set."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    state_bounds: np.ndarray
    ext_inputs: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        self.B = np.asarray(self.B, dtype=float).reshape(n, -1)
        self.D = np.asarray(self.D, dtype=float).reshape(n, -1)
        self.state_bounds = _box(self.state_bounds)
        if self.state_bounds.shape[0] != n:
            raise ValueError("state bounds do not match state dimension")
        m = self.B.shape[1]
        self.ext_inputs = np.asarray(self.ext_inputs, dtype=float).reshape(-1, m) if m else np.zeros((1, 0))
        if len(self.ext_inputs) == 0:
            raise ValueError("external input set must be nonempty")

    kind = "linear"

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def int_dim(self) -> int:
        return self.D.shape[1]

    def step(self, x, u, w) -> np.ndarray:
        """Batched update; leading axes of ``x``, ``u``, ``w`` broadcast."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        w = np.asarray(w, dtype=float)
        out = x @ self.A.T
        if self.B.shape[1]:
            out = out + u @ self.B.T
        if self.D.shape[1]:
            out = out + w @ self.D.T
        return out

    def int_coupling(self) -> np.ndarray:
        """Per internal-input dimension: does the update depend on it."""
        return np.any(self.D != 0, axis=0)

    def as_lipschitz(self) -> LipschitzModel:
        return LipschitzModel(
            self.step,
            mat_inf_norm(self.A),
            mat_inf_norm(self.B),
            mat_inf_norm(self.D),
            self.state_bounds,
            self.ext_inputs,
            self.int_dim,
            self.name,
        )


@dataclass
class LipschitzModel:
    """Black-box update ``f(x, u_ext, u_int)`` with user-supplied Lipschitz constants.

    ``update`` must accept batched arrays with the state/input on the last axis.
    """

    update: Callable
    L_x: float
    L_u_ext: float
    L_u_int: float
    state_bounds: np.ndarray
    ext_inputs: np.ndarray
    int_dim: int
    name: str = ""

    kind = "lipschitz"

    def __post_init__(self):
        self.state_bounds = _box(self.state_bounds)
        self.ext_inputs = np.atleast_2d(np.asarray(self.ext_inputs, dtype=float))
        if min(self.L_x, self.L_u_ext, self.L_u_int) < 0:
            raise ValueError("Lipschitz constants must be nonnegative")

    @property
    def n(self) -> int:
        return self.state_bounds.shape[0]

    def step(self, x, u, w) -> np.ndarray:
        return np.asarray(self.update(np.asarray(x, float), np.asarray(u, float), np.asarray(w, float)), float)

    def int_coupling(self) -> np.ndarray:
        return np.ones(self.int_dim, dtype=bool)


def linear_certificate(model: LinearModel) -> DeltaIssCertificate:
    """Gains from the matrix infinity norms: ``lam=|A|``, ``g=|B|/(1-|A|)``, ``|D|/(1-|A|)``.

    Refuses when ``|A| >= 1`` even if the spectral radius is below one, since
    the norm-based gains are then undefined.
    """
    a = mat_inf_norm(model.A)
    if a >= 1.0:
        rho = float(np.max(np.abs(np.linalg.eigvals(model.A))))
        hint = " (spectral radius < 1: stable, but |A| >= 1 so the norm gains do not apply)" if rho < 1 else ""
        raise NotCertifiable(f"|A| = {a:.6g} >= 1, spectral radius {rho:.6g}{hint}", a, rho)
    return DeltaIssCertificate(a, mat_inf_norm(model.B) / (1 - a), mat_inf_norm(model.D) / (1 - a))


def lipschitz_certificate(model: LipschitzModel) -> DeltaIssCertificate:
    if model.L_x >= 1.0:
        raise NotCertifiable(f"L_x = {model.L_x:.6g} >= 1", model.L_x)
    c = 1.0 - model.L_x
    return DeltaIssCertificate(model.L_x, model.L_u_ext / c, model.L_u_int / c)


def certify(model) -> DeltaIssCertificate:
    if model.kind == "linear":
        return linear_certificate(model)
    return lipschitz_certificate(model)


def _sup_norm(sig: np.ndarray, k: int) -> float:
    """``sup_{j < k} |sig(j)|_inf``; zero for ``k == 0``."""
    if k == 0:
        return 0.0
    s = np.asarray(sig, dtype=float)[:k]
    if s.ndim == 1:
        s = s[:, None]
    if s.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(s)))


def check_trajectory_bound(cert: DeltaIssCertificate, traj_a, traj_b, inputs_a, inputs_b, k: int,
                           rtol: float = 1e-9) -> bool:
    """Evaluate the incremental stability inequality at step ``k``.

    ``inputs_a`` / ``inputs_b`` are ``(ext_signal, int_signal)`` arrays indexed
    by time step. ``rtol`` absorbs rounding where the bound is tight, e.g. a
    positive scalar ``A`` driven by identical inputs.
    """
    xa = np.asarray(traj_a, dtype=float)
    xb = np.asarray(traj_b, dtype=float)
    if xa.shape != xb.shape:
        raise ValueError("trajectory shapes differ")
    if xa.shape[0] < k + 1:
        raise ValueError(f"trajectories shorter than k+1 = {k + 1}")
    ua, wa = (np.asarray(s, dtype=float) for s in inputs_a)
    ub, wb = (np.asarray(s, dtype=float) for s in inputs_b)
    if ua.shape != ub.shape or wa.shape != wb.shape:
        raise ValueError("input signal shapes differ")
    lhs = float(np.max(np.abs(np.atleast_1d(xa[k] - xb[k]))))
    r0 = float(np.max(np.abs(np.atleast_1d(xa[0] - xb[0]))))
    rhs = float(cert.beta(r0, k)) + cert.g_int * _sup_norm(wa - wb, k) + cert.g_ext * _sup_norm(ua - ub, k)
    return lhs <= rhs + rtol * (1.0 + rhs)


def shrink_condition_terms(certs: Sequence[DeltaIssCertificate], eps: float, M_bar, M) -> np.ndarray:
    """Left-hand sides ``lam_i*eps + g_int_i*(eps + mu_bar_i - mu_i)``."""
    M_bar = np.asarray(M_bar, dtype=float)
    M = np.asarray(M, dtype=float)
    if M_bar.shape != (len(certs),) or M.shape != (len(certs),):
        raise ValueError("slack vectors must have one entry per subsystem")
    if np.any(M_bar < M):
        raise ValueError("M_bar must dominate M componentwise")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    return np.array([c.lam * eps + c.g_int * (eps + mb - m) for c, mb, m in zip(certs, M_bar, M)])


def check_shrink_condition(certs, eps: float, M_bar, M) -> bool:
    return bool(np.all(shrink_condition_terms(certs, eps, M_bar, M) <= eps))


def compositional_condition_terms(certs: Sequence[DeltaIssCertificate], eps: float, mu) -> np.ndarray:
    """Left-hand sides ``lam_i*eps + g_int_i*(2*eps + mu_i)``."""
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (len(certs),):
        raise ValueError("mu must have one entry per subsystem")
    return np.array([c.lam * eps + c.g_int * (2 * eps + m) for c, m in zip(certs, mu)])


def check_compositional_condition(certs, eps: float, mu) -> bool:
    return bool(np.all(compositional_condition_terms(certs, eps, mu) <= eps))


def min_epsilon(certs: Sequence[DeltaIssCertificate], mu) -> float:
    """Smallest ``eps`` passing :func:`check_compositional_condition`.

    Raises :class:`Infeasible` naming the first subsystem whose gains leave no
    admissible ``eps``.
    """
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0):
        raise ValueError("mu must be nonnegative")
    eps = 0.0
    for i, (c, m) in enumerate(zip(certs, mu)):
        num = c.g_int * m
        if num == 0:
            continue
        den = 1.0 - c.lam - 2.0 * c.g_int
        if den <= 0:
            raise Infeasible(f"subsystem {i + 1}: 1 - lam - 2*g_int = {den:.6g} <= 0", i)
        eps = max(eps, num / den)
    if eps > 0:
        # a subsystem with zero internal slack still needs 1 - lam - 2*g_int >= 0
        for i, c in enumerate(certs):
            den = 1.0 - c.lam - 2.0 * c.g_int
            if den < 0:
                raise Infeasible(f"subsystem {i + 1}: 1 - lam - 2*g_int = {den:.6g} < 0 while eps > 0", i)
    # closed form may sit a few rounding errors below the boundary; a doubling
    # step keeps this short when 1 - lam - 2*g_int is tiny
    step = float(np.spacing(eps)) if eps > 0 else float(np.finfo(float).tiny)
    while not check_compositional_condition(certs, eps, mu):
        eps += step
        step *= 2
    return eps
