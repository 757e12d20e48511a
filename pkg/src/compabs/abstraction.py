"""Uniform-grid symbolic abstractions of incrementally stable dynamics.

Cells are centred at ``lo + eta/2 + k*eta``. A state quantizes to the nearest
centre with ties going to the smaller coordinate, so the quantization error
is at most ``eta/2`` per dimension. Successors leaving the state box go to a
dedicated sink whose output is ``+inf``.

The returned guarantee ``eps`` is the least solution of

    lam*eps + g_int*mu_int + max(eta)/2 <= eps

which bounds the one-step drift between a concrete state and the cell it is
related to.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import TransitionSystem, inf_distance
from .deltaiss import DeltaIssCertificate, certify


class GuaranteeInfeasible(ValueError):
    def __init__(self, msg: str, term: str):
        super().__init__(msg)
        self.term = term


class Grid:
    def __init__(self, bounds, eta):
        self.bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
        n = self.bounds.shape[0]
        self.eta = np.broadcast_to(np.asarray(eta, dtype=float), (n,)).copy()
        if np.any(self.eta <= 0):
            raise ValueError("grid spacing must be positive")
        if np.any(self.bounds[:, 0] > self.bounds[:, 1]):
            raise ValueError("empty grid bounds")
        width = self.bounds[:, 1] - self.bounds[:, 0]
        # tolerate rounding so that 40/1.25 is 32 cells, not 33
        self.counts = tuple(int(c) for c in np.maximum(1, np.ceil(width / self.eta - 1e-9)))

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    @property
    def lo(self) -> np.ndarray:
        return self.bounds[:, 0]

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.counts))

    def axis(self, d: int) -> np.ndarray:
        return self.lo[d] + self.eta[d] * (np.arange(self.counts[d]) + 0.5)

    def centers(self) -> np.ndarray:
        """All centres in row-major cell order."""
        mesh = np.meshgrid(*[self.axis(d) for d in range(self.dim)], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def center(self, idx) -> np.ndarray:
        return self.lo + self.eta * (np.asarray(idx, dtype=float) + 0.5)

    def cell_indices(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Per-dimension cell index (clamped) and an in-bounds mask, batched over leading axes."""
        x = np.asarray(x, dtype=float)
        k = np.ceil((x - self.lo) / self.eta - 1.0).astype(np.int64)
        inside = np.all((x >= self.bounds[:, 0]) & (x <= self.bounds[:, 1]), axis=-1)
        k = np.clip(k, 0, np.array(self.counts) - 1)
        return k, inside

    def flat_index(self, x) -> tuple[np.ndarray, np.ndarray]:
        k, inside = self.cell_indices(x)
        flat = np.ravel_multi_index(tuple(np.moveaxis(k, -1, 0)), self.counts)
        return flat, inside

    def cell_box(self, flat: int) -> np.ndarray:
        idx = np.array(np.unravel_index(flat, self.counts))
        lo = self.lo + self.eta * idx
        return np.stack([lo, lo + self.eta], axis=-1)

    def to_dict(self) -> dict:
        return {"bounds": self.bounds.tolist(), "eta": self.eta.tolist()}


def quantize(grid: Grid, x) -> tuple[np.ndarray, bool]:
    """Nearest cell centre and whether ``x`` had to be clamped into the box."""
    k, inside = grid.cell_indices(np.asarray(x, dtype=float))
    return grid.center(k), not bool(inside)


@dataclass(frozen=True)
class AbstractionGuarantee:
    eps: float
    mu: float
    cert: DeltaIssCertificate
    eta_x: tuple
    eta_u: float
    mu_int: float

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "mu": self.mu,
            "cert": self.cert.to_dict(),
            "eta_x": list(self.eta_x),
            "eta_u": self.eta_u,
            "mu_int": self.mu_int,
        }


def guarantee_eps(cert: DeltaIssCertificate, eta, mu_int: float) -> float:
    return (cert.g_int * mu_int + float(np.max(eta)) / 2) / (1.0 - cert.lam)


def coarsest_dyadic_eta(cert: DeltaIssCertificate, width: float, eps_target: float, mu_int: float = 0.0, max_level: int = 20) -> float:
    """Largest ``width / 2**k`` whose guarantee stays within ``eps_target``."""
    for k in range(max_level + 1):
        eta = width / 2**k
        if guarantee_eps(cert, eta, mu_int) <= eps_target:
            return eta
    raise GuaranteeInfeasible(
        f"no spacing down to width/2**{max_level} reaches eps={eps_target}; "
        f"internal-input term alone is {cert.g_int * mu_int / (1 - cert.lam):.6g}",
        "int",
    )


class GridAbstraction:
    """Deterministic grid abstraction ``(q, u, w) -> quantize(f(q, u, w))``.

    ``int_grid`` quantizes the internal input; None for models without one.
    Flat successor ``-1`` denotes the sink.
    """

    def __init__(self, model, grid: Grid, int_grid: Grid | None, guarantee: AbstractionGuarantee, name: str = ""):
        self.model = model
        self.grid = grid
        self.int_grid = int_grid
        self.guarantee = guarantee
        self.name = name or getattr(model, "name", "")

    @property
    def n_cells(self) -> int:
        return self.grid.n_cells

    @property
    def n_ext(self) -> int:
        return len(self.model.ext_inputs)

    def int_points(self) -> np.ndarray:
        return np.zeros((1, 0)) if self.int_grid is None else self.int_grid.centers()

    def successor(self, x_flat, e, w) -> np.ndarray:
        """Flat successor cell (or -1) for batched cell indices, input indices and internal points."""
        x = self.grid.centers()[np.asarray(x_flat)]
        u = self.model.ext_inputs[np.asarray(e)]
        w = np.asarray(w, dtype=float)
        nxt = self.model.step(x, u, w)
        flat, inside = self.grid.flat_index(nxt)
        return np.where(inside, flat, -1)

    def successor_table(self) -> np.ndarray:
        """Array ``[x, e, w] -> flat successor`` over every internal-input grid point."""
        X = self.grid.centers()
        W = self.int_points()
        out = np.empty((len(X), self.n_ext, len(W)), dtype=np.int64)
        for e, u in enumerate(self.model.ext_inputs):
            nxt = self.model.step(X[:, None, :], u[None, None, :], W[None, :, :])
            flat, inside = self.grid.flat_index(nxt)
            out[:, e, :] = np.where(inside, flat, -1)
        return out

    def transition_system(self, initial=None) -> TransitionSystem:
        """Explicit system with the sink appended as the last state (self-loops on every input)."""
        table = self.successor_table()
        n = self.n_cells
        sink = n
        x, e, w = np.indices(table.shape).reshape(3, -1)
        succ = table.ravel()
        succ = np.where(succ < 0, sink, succ)
        W = self.int_points()
        trans = list(zip(x.tolist(), e.tolist(), w.tolist(), succ.tolist()))
        trans += [(sink, ee, ww, sink) for ee in range(self.n_ext) for ww in range(len(W))]
        outputs = np.vstack([self.grid.centers(), np.full((1, self.grid.dim), np.inf)])
        init = range(n) if initial is None else initial
        return TransitionSystem(outputs, trans, init, self.model.ext_inputs, W, self.name)


def abstract_system(model, grid: Grid, input_grid: Grid | None = None, mu_int: float | None = None,
                    cert: DeltaIssCertificate | None = None, eta_u: float = 0.0,
                    eps_target: float | None = None, mu_target: float | None = None) -> GridAbstraction:
    """Grid abstraction of ``model`` with its (eps, mu) guarantee.

    ``mu_int`` defaults to half the coarsest internal-input spacing over the
    dimensions the model actually depends on; a smaller value is rejected
    since the lattice could not honour it.
    """
    cert = certify(model) if cert is None else cert
    if grid.dim != model.n:
        raise ValueError("grid dimension does not match the state dimension")
    if not np.all(grid.bounds == model.state_bounds):
        raise ValueError("grid bounds must equal the model's state bounds")
    coupled = np.asarray(model.int_coupling(), dtype=bool)
    if model.int_dim and input_grid is None:
        raise ValueError("model has internal inputs but no internal-input grid was given")
    if input_grid is not None and input_grid.dim != model.int_dim:
        raise ValueError("internal-input grid dimension mismatch")
    lattice_mu = float(np.max(input_grid.eta[coupled]) / 2) if input_grid is not None and coupled.any() else 0.0
    if mu_int is None:
        mu_int = lattice_mu
    elif mu_int < lattice_mu:
        raise ValueError(f"mu_int={mu_int} is finer than the internal-input lattice allows ({lattice_mu})")
    eps = guarantee_eps(cert, grid.eta, mu_int)
    mu = max(eta_u / 2, mu_int)
    if eps_target is not None and eps > eps_target:
        eta_term = float(np.max(grid.eta)) / 2
        term = "eta" if eta_term >= cert.g_int * mu_int else "int"
        raise GuaranteeInfeasible(f"guarantee eps={eps:.6g} exceeds target {eps_target} (binding term: {term})", term)
    if mu_target is not None and mu > mu_target:
        raise GuaranteeInfeasible(f"guarantee mu={mu:.6g} exceeds target {mu_target}", "mu")
    g = AbstractionGuarantee(eps, mu, cert, tuple(grid.eta.tolist()), eta_u, mu_int)
    return GridAbstraction(model, grid, input_grid, g)


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    max_deviation: float
    violations: int
    samples: int
    left_box: int

    def __bool__(self) -> bool:
        return self.ok


def validate_abstraction(model, abs_ts: GridAbstraction, guarantee: AbstractionGuarantee | None = None,
                         samples: int = 10_000, rng=None, int_bounds=None) -> ValidationReport:
    """Sample one concrete step and compare it with the abstract successor.

    Concrete states are drawn uniformly from the state box, external inputs
    uniformly from the finite set and internal inputs from ``int_bounds``
    (default: the internal-input grid box). Samples whose abstract successor
    is the sink are counted in ``left_box`` and not judged.
    """
    guarantee = abs_ts.guarantee if guarantee is None else guarantee
    rng = np.random.default_rng(rng)
    b = model.state_bounds
    x = rng.uniform(b[:, 0], b[:, 1], size=(samples, model.n))
    e = rng.integers(0, len(model.ext_inputs), size=samples)
    if abs_ts.int_grid is not None:
        ib = abs_ts.int_grid.bounds if int_bounds is None else np.asarray(int_bounds, dtype=float).reshape(-1, 2)
        w = rng.uniform(ib[:, 0], ib[:, 1], size=(samples, ib.shape[0]))
        wq = abs_ts.int_grid.centers()[abs_ts.int_grid.flat_index(w)[0]]
    else:
        w = wq = np.zeros((samples, 0))
    concrete = model.step(x, model.ext_inputs[e], w)
    q, _ = abs_ts.grid.flat_index(x)
    nxt = abs_ts.successor(q, e, wq)
    judged = nxt >= 0
    centers = abs_ts.grid.centers()
    dev = np.atleast_1d(inf_distance(concrete[judged], centers[nxt[judged]]))
    bad = int(np.sum(dev > guarantee.eps))
    return ValidationReport(bad == 0, float(dev.max()) if dev.size else 0.0, bad, samples, int(np.sum(~judged)))

