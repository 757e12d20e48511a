"""End-to-end steps shared by the command line and the acceptance suite."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .abstraction import Grid, GridAbstraction, abstract_system, guarantee_eps
from .config import NetworkSpec
from .deltaiss import (
    DeltaIssCertificate,
    Infeasible,
    NotCertifiable,
    certify,
    compositional_condition_terms,
    min_epsilon,
)
from .gridcompose import GridComposition
from .synthesis import GridController, grid_safety_fixpoint, refine_and_simulate, safe_cell_mask, safe_domain

MAX_LEVEL = 16


@dataclass
class GridChoice:
    eta: float
    int_eta: list
    mu_int: float


def _coupled_spacing(cert: DeltaIssCertificate, eta: float, widths: np.ndarray, eps_t: float, mu_t: float):
    """Coarsest dyadic subdivision of the coupled internal-input box meeting both targets."""
    for m in range(MAX_LEVEL + 1):
        s = widths / 2**m
        mu_int = float(np.max(s)) / 2
        if mu_int <= mu_t and guarantee_eps(cert, eta, mu_int) <= eps_t:
            return s, mu_int
    return None


def choose_grids(spec: NetworkSpec, certs=None) -> list[GridChoice]:
    """Per subsystem: the coarsest ``width / 2**k`` state spacing that, with a
    suitably fine internal-input lattice, meets ``(eps_i, mu_i)``.

    Inputs the update ignores reuse the feeding subsystem's own spacing.
    ``spec.mu_int`` (when set) fixes the coupled internal-input spacing to
    ``2 * mu_int`` instead of searching for it.
    """
    certs = [certify(m) for m in spec.models] if certs is None else certs
    etas, coupled_eta = [], []
    for i, (sub, cert) in enumerate(zip(spec.subsystems, certs)):
        m = sub.model
        eps_t, mu_t = spec.eps_targets[i], spec.mu_targets[i]
        width = float(np.max(m.state_bounds[:, 1] - m.state_bounds[:, 0]))
        nbrs = spec.graph.neighbors(i)
        coupled = np.asarray(m.int_coupling(), dtype=bool)
        cw = np.array([np.ptp(spec.models[j].state_bounds) for j, c in zip(nbrs, coupled) if c])
        found = None
        levels = [None] if sub.eta is not None else range(MAX_LEVEL + 1)
        for k in levels:
            eta = sub.eta if k is None else width / 2**k
            if sub.int_eta is not None or spec.mu_int is not None:
                fixed = (np.asarray(sub.int_eta, dtype=float)[coupled] if sub.int_eta is not None
                         else np.full(cw.size, 2 * spec.mu_int))
                mu_fixed = float(np.max(fixed, initial=0)) / 2
                if mu_fixed <= mu_t and guarantee_eps(cert, eta, mu_fixed) <= eps_t:
                    found = (eta, fixed, mu_fixed)
                    break
                continue
            if cw.size == 0 or cert.g_int == 0:
                if guarantee_eps(cert, eta, 0.0) <= eps_t:
                    s = cw / 2 ** int(np.ceil(np.log2(max(1.0, np.max(cw, initial=0) / (2 * mu_t))))) if cw.size else cw
                    found = (eta, s, float(np.max(s, initial=0)) / 2)
                    break
                continue
            hit = _coupled_spacing(cert, eta, cw, eps_t, mu_t)
            if hit is not None:
                found = (eta, *hit)
                break
        if found is None:
            raise Infeasible(f"subsystem {i + 1}: no dyadic grid meets eps={eps_t}, mu={mu_t}", i)
        etas.append(found[0])
        coupled_eta.append((found[1], found[2]))
    out = []
    for i, sub in enumerate(spec.subsystems):
        nbrs = spec.graph.neighbors(i)
        coupled = np.asarray(sub.model.int_coupling(), dtype=bool)
        s, mu_int = coupled_eta[i]
        it = iter(s)
        int_eta = [float(next(it)) if c else etas[j] for j, c in zip(nbrs, coupled)]
        if sub.int_eta is not None:
            int_eta = [float(e) for e in sub.int_eta]
        out.append(GridChoice(etas[i], int_eta, mu_int))
    return out


def build_abstractions(spec: NetworkSpec, choices=None) -> tuple[list[GridAbstraction], list[float]]:
    """Local abstractions with their construction times in seconds."""
    choices = choose_grids(spec) if choices is None else choices
    out, times = [], []
    for i, (sub, ch) in enumerate(zip(spec.subsystems, choices)):
        t0 = time.perf_counter()
        m = sub.model
        nbrs = spec.graph.neighbors(i)
        int_grid = None
        if nbrs:
            int_grid = Grid(np.vstack([spec.models[j].state_bounds for j in nbrs]), ch.int_eta)
        a = abstract_system(m, Grid(m.state_bounds, ch.eta), int_grid, ch.mu_int,
                            eps_target=spec.eps_targets[i], mu_target=spec.mu_targets[i])
        a.name = m.name
        out.append(a)
        times.append(time.perf_counter() - t0)
    return out, times


@dataclass
class ConditionRow:
    name: str
    stated: DeltaIssCertificate | None
    computed: DeltaIssCertificate | None
    error: str = ""
    lhs: float = float("nan")
    rhs: float = float("nan")

    @property
    def passed(self) -> bool:
        return not self.error and self.lhs <= self.rhs


@dataclass
class CertifyReport:
    rows: list
    eps: float
    mu: np.ndarray
    min_eps: float | None
    min_eps_error: str = ""
    m_hat_rule: tuple = ()
    m_hat_stated: tuple = ()

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.rows)


def certify_network(spec: NetworkSpec, recompute: bool = False) -> CertifyReport:
    rows = []
    for sub in spec.subsystems:
        try:
            comp = certify(sub.model)
            err = ""
        except NotCertifiable as e:
            comp, err = None, str(e)
        rows.append(ConditionRow(sub.model.name, sub.stated, comp, err))
    eps = spec.eps
    usable = [r.computed if (recompute or r.stated is None) else r.stated for r in rows]
    if all(c is not None for c in usable):
        terms = compositional_condition_terms(usable, eps, spec.mu_targets)
        for r, t in zip(rows, terms):
            r.lhs, r.rhs = float(t), eps
        try:
            me, me_err = min_epsilon(usable, spec.mu_targets), ""
        except Infeasible as e:
            me, me_err = None, str(e)
    else:
        me, me_err = None, "uncertifiable subsystem"
    return CertifyReport(rows, eps, spec.mu_targets, me, me_err, spec.m_hat_rule().mu, spec.M_hat.mu)


# -- composition and the monolithic baseline ---------------------------------


@dataclass
class BuildReport:
    mode: str
    seconds: float
    transitions: int
    states: int
    parts: dict = field(default_factory=dict)
    aborted: str = ""


def compositional_build(spec: NetworkSpec, domain=None, memory_limit: int | None = None):
    """Local abstractions, then the M_hat composition streamed input by input over ``domain``."""
    t0 = time.perf_counter()
    abstractions, local_times = build_abstractions(spec)
    if domain is None:
        domain = safe_domain(abstractions, spec.safe_set, spec.safe_margin)
    t1 = time.perf_counter()
    comp = GridComposition(abstractions, spec.graph, spec.M_hat, domain)
    per_input = comp.n_states * (4 * comp.n + 1)
    if memory_limit is not None and per_input > memory_limit:
        return comp, BuildReport("compositional", time.perf_counter() - t0, 0, comp.n_states,
                                 {"local": local_times}, f"needs ~{per_input >> 20} MiB per input")
    transitions = 0
    for u in comp.inputs():
        los, his, valid = comp.boxes(u)
        lo = [np.broadcast_to(l, comp.shape).astype(np.int16) for l in los]
        hi = [np.broadcast_to(h, comp.shape).astype(np.int16) for h in his]
        vol = np.ones(comp.shape, dtype=np.int64)
        for a, b in zip(lo, hi):
            vol *= (b - a + 1)
        transitions += int(vol[valid].sum())
    t2 = time.perf_counter()
    return comp, BuildReport("compositional", t2 - t0, transitions, comp.n_states,
                             {"local": local_times, "compose": t2 - t1})


def monolithic_matrices(spec: NetworkSpec):
    """Full-state ``(A, B)`` of the exact interconnection of linear scalar subsystems."""
    n = spec.n
    A = np.zeros((n, n))
    cols = []
    for i, m in enumerate(spec.models):
        if m.n != 1:
            raise ValueError("monolithic baseline expects scalar subsystems")
        A[i, i] += m.A[0, 0]
        for d, j in enumerate(spec.graph.neighbors(i)):
            A[i, j] += m.D[0, d]
        cols.append(m.B)
    B = np.zeros((n, sum(c.shape[1] for c in cols)))
    k = 0
    for i, c in enumerate(cols):
        B[i, k : k + c.shape[1]] = c[0]
        k += c.shape[1]
    return A, B


def monolithic_build(spec: NetworkSpec, abstractions, domain, memory_limit: int | None = None) -> BuildReport:
    """Quantize the full dynamics cell by cell on the same per-dimension grids and domain."""
    t0 = time.perf_counter()
    A, B = monolithic_matrices(spec)
    shape = tuple(hi - lo + 1 for lo, hi in domain)
    n_states = int(np.prod(shape))
    need = n_states * spec.n * 8 * 3
    if memory_limit is not None and need > memory_limit:
        return BuildReport("monolithic", 0.0, 0, n_states, {}, f"needs ~{need >> 20} MiB")
    axes = [a.grid.axis(0)[lo : hi + 1] for a, (lo, hi) in zip(abstractions, domain)]
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack([m.ravel() for m in mesh], axis=1)
    AX = X @ A.T
    transitions = 0
    for parts in product(*[range(len(m.ext_inputs)) for m in spec.models]):
        u = np.concatenate([m.ext_inputs[e] for m, e in zip(spec.models, parts)])
        nxt = AX + B @ u
        inside = np.ones(n_states, dtype=bool)
        cells = np.empty((n_states, spec.n), dtype=np.int16)
        for i, a in enumerate(abstractions):
            k, ins = a.grid.cell_indices(nxt[:, i : i + 1])
            cells[:, i] = k[:, 0]
            inside &= ins
        transitions += int(inside.sum())
    return BuildReport("monolithic", time.perf_counter() - t0, transitions, n_states)


def synthesize(spec: NetworkSpec, comp: GridComposition | None = None) -> GridController:
    if comp is None:
        comp, _ = compositional_build(spec)
    mask = safe_cell_mask(comp, spec.safe_set, spec.safe_margin)
    return grid_safety_fixpoint(comp, mask, spec.safe_set.tolist())


def simulate(spec: NetworkSpec, controller: GridController, x0=None, horizon=None, rng=None):
    x0 = spec.x0 if x0 is None else np.asarray(x0, dtype=float)
    horizon = spec.horizon if horizon is None else horizon
    # any eps above the abstraction's own guarantee also yields a valid relation,
    # so the target is the widest admissible matching radius
    return refine_and_simulate(spec.models, spec.graph, controller, x0, horizon, radius=spec.eps_targets,
                               safe_box=spec.safe_set, rng=rng)
