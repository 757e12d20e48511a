"""Network description files.

A spec lists subsystems either explicitly (``subsystems``: matrices per
node) or through the ``traffic_flow`` generator, plus the interconnection
edges (1-based ``[j, i]`` pairs, j feeds i), slack vectors, targets, the safe
box and the simulation setup.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .composition import CompositionParams, InterconnectionGraph
from .deltaiss import DeltaIssCertificate, LinearModel, NotCertifiable, certify


@dataclass
class SubsystemSpec:
    model: LinearModel
    stated: DeltaIssCertificate | None = None
    eta: float | None = None
    int_eta: list | None = None


@dataclass
class NetworkSpec:
    name: str
    subsystems: list[SubsystemSpec]
    graph: InterconnectionGraph
    M: CompositionParams
    M_hat: CompositionParams
    eps_targets: np.ndarray
    mu_targets: np.ndarray
    safe_set: np.ndarray
    x0: np.ndarray | None = None
    horizon: int = 360
    safe_margin: float = 0.0
    mu_int: float | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return len(self.subsystems)

    @property
    def models(self) -> list[LinearModel]:
        return [s.model for s in self.subsystems]

    def computed_certificates(self) -> list[DeltaIssCertificate]:
        return [certify(m) for m in self.models]

    def stated_certificates(self) -> list[DeltaIssCertificate | None]:
        return [s.stated for s in self.subsystems]

    def condition_certificates(self, recompute: bool = False) -> list[DeltaIssCertificate]:
        """Stated gains where given (unless ``recompute``), computed ones otherwise."""
        comp = self.computed_certificates()
        if recompute:
            return comp
        return [s if s is not None else c for s, c in zip(self.stated_certificates(), comp)]

    @property
    def eps(self) -> float:
        return float(np.max(self.eps_targets))

    def m_hat_rule(self) -> CompositionParams:
        """``mu_i + delta_i + eps`` with ``delta = M`` and ``eps = max eps_i``."""
        return CompositionParams(tuple(self.mu_targets + np.array(self.M.mu) + self.eps))


def _f(rows) -> np.ndarray:
    return np.asarray(rows, dtype=float)


def traffic_models(p: dict, bounds: np.ndarray, graph: InterconnectionGraph) -> list[LinearModel]:
    """Ring-road density models; section ``i`` reads the densities listed in ``couplings``."""
    T, v, l, q = p["T_hours"], p["v_km_per_hour"], p["l_km"], p["q_ratio"]
    flow = T * v / l
    n = graph.n
    coupled = {}
    for j, i in p["couplings_one_based"]:
        coupled.setdefault(i - 1, set()).add(j - 1)
    signals = _f(p["signal_values"]).reshape(-1, 1)
    models = []
    for i in range(n):
        a = 1 - T * v / (p["first_section_length_factor"] * l) if i == 0 else 1 - flow - q
        nbrs = graph.neighbors(i)
        missing = coupled.get(i, set()) - set(nbrs)
        if missing:
            raise ValueError(f"section {i + 1} reads {sorted(m + 1 for m in missing)} but the graph has no such edge")
        D = [[flow if j in coupled.get(i, ()) else 0.0 for j in nbrs]]
        if p["controlled"][i]:
            B, U = [[p["input_gains"][i]]], signals
        else:
            B, U = np.zeros((1, 0)), np.zeros((1, 0))
        models.append(LinearModel([[a]], B, np.array(D).reshape(1, len(nbrs)), bounds[i : i + 1], U, f"section{i + 1}"))
    return models


def _stated(d: dict | None, model: LinearModel) -> DeltaIssCertificate | None:
    if d is None:
        return None
    g_ext = d.get("g_ext")
    if g_ext is None:
        # published gains omit the external gain; the computed one fills the slot
        try:
            g_ext = certify(model).g_ext
        except NotCertifiable:
            g_ext = 0.0
    return DeltaIssCertificate(float(d["lambda"]), float(g_ext), float(d["g_int"]))


def parse_spec(d: dict) -> NetworkSpec:
    edges = [tuple(e) for e in d["edges_one_based"]]
    if "traffic_flow" in d:
        n = len(d["state_bounds"])
        graph = InterconnectionGraph.from_one_based(n, edges)
        models = traffic_models(d["traffic_flow"], _f(d["state_bounds"]).reshape(-1, 2), graph)
        etas = [None] * n
        int_etas = [None] * n
    else:
        subs = d["subsystems"]
        n = len(subs)
        graph = InterconnectionGraph.from_one_based(n, edges)
        models = [
            LinearModel(s["A"], s.get("B", np.zeros((len(s["A"]), 0))), s.get("D", np.zeros((len(s["A"]), 0))),
                        s["state_bounds"], s.get("ext_inputs", np.zeros((1, 0))), s.get("name", f"s{k + 1}"))
            for k, s in enumerate(subs)
        ]
        etas = [s.get("eta") for s in subs]
        int_etas = [s.get("int_eta") for s in subs]
        d = {**d, "stated_certificates": [s.get("stated_certificate") for s in subs]}
    for i, m in enumerate(models):
        if m.int_dim != len(graph.neighbors(i)):
            raise ValueError(
                f"subsystem {i + 1}: {m.int_dim} internal-input columns but {len(graph.neighbors(i))} neighbours"
            )
    stated = d.get("stated_certificates") or [None] * n
    subsystems = [
        SubsystemSpec(m, _stated(s, m), e, ie) for m, s, e, ie in zip(models, stated, etas, int_etas)
    ]
    vec = lambda key, default: np.asarray(d.get(key, [default] * n), dtype=float)
    return NetworkSpec(
        name=d.get("name", ""),
        subsystems=subsystems,
        graph=graph,
        M=CompositionParams(tuple(vec("M", 0.0))),
        M_hat=CompositionParams(tuple(vec("M_hat", 0.0))),
        eps_targets=vec("eps_targets", 1.0),
        mu_targets=vec("mu_targets", 1.0),
        safe_set=_f(d["safe_set"]).reshape(-1, 2) if "safe_set" in d else np.vstack([m.state_bounds for m in models]),
        x0=_f(d["x0"]) if "x0" in d else None,
        horizon=int(d.get("horizon_steps", 360)),
        safe_margin=float(d.get("safe_margin", 0.0)),
        mu_int=None if d.get("mu_int") is None else float(d["mu_int"]),
        raw=d,
    )


def load_spec(path) -> NetworkSpec:
    return parse_spec(json.loads(Path(path).read_text()))


def traffic_spec() -> NetworkSpec:
    text = resources.files("compabs").joinpath("data/traffic.json").read_text()
    return parse_spec(json.loads(text))
