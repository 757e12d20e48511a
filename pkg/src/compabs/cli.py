"""Command-line front end: ``compabs <command> [options]``.

Exit codes: 0 success, 1 a check failed (condition, empty winning set,
relation refused), 2 bad input, 3 controller refusal during simulation,
4 memory guard tripped.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .composition import CompositionParams, InterconnectionGraph, compose
from .config import NetworkSpec, load_spec, traffic_spec
from .core import TransitionSystem
from .deltaiss import Infeasible
from .gridcompose import FastPathUnsupported
from .pipeline import certify_network, compositional_build, monolithic_build, simulate, synthesize
from .relations import check_bisimulation, max_alternating_simulation, max_simulation
from .synthesis import ControllerRefusal, GridController, related_cell

log = logging.getLogger("compabs")


def _spec(args) -> NetworkSpec:
    spec = traffic_spec() if args.spec is None else load_spec(args.spec)
    if getattr(args, "eta", None):
        etas = args.eta if len(args.eta) > 1 else args.eta * spec.n
        if len(etas) != spec.n:
            raise ValueError(f"--eta needs 1 or {spec.n} values")
        for sub, e in zip(spec.subsystems, etas):
            sub.eta = e
    if getattr(args, "state_bounds", None):
        lo, hi = args.state_bounds
        for m in spec.models:
            m.state_bounds = np.tile([lo, hi], (m.n, 1)).astype(float)
    if getattr(args, "mu_int", None) is not None:
        spec.mu_int = args.mu_int
    return spec


def _out(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.6g}"


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    log.info("wrote %s", path)


def cmd_certify(args) -> int:
    spec = _spec(args)
    rep = certify_network(spec, recompute=args.recompute)
    lines = [f"network {spec.name or '(unnamed)'}: eps={rep.eps:g}, mu={list(map(float, rep.mu))}"]
    lines.append(f"{'subsystem':<12}{'lam(stated)':>12}{'g_int(st.)':>12}{'lam(comp.)':>12}{'g_int(comp.)':>13}"
                 f"{'lhs':>10}{'rhs':>8}  result")
    for r in rep.rows:
        s, c = r.stated, r.computed
        res = "FAIL: " + r.error if r.error else ("pass" if r.passed else "FAIL")
        lines.append(f"{r.name:<12}{_fmt(s and s.lam):>12}{_fmt(s and s.g_int):>12}{_fmt(c and c.lam):>12}"
                     f"{_fmt(c and c.g_int):>13}{_fmt(r.lhs):>10}{_fmt(r.rhs):>8}  {res}")
    lines.append("smallest feasible eps: " + (_fmt(rep.min_eps) if rep.min_eps is not None else "infeasible (" + rep.min_eps_error + ")"))
    rule, stated = list(map(float, rep.m_hat_rule)), list(map(float, rep.m_hat_stated))
    note = "matches" if np.allclose(rule, stated) else "differs; the stated value is used"
    lines.append(f"M_hat by the mu+delta+eps rule: {rule}; stated {stated} ({note})")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    _write(_out(args) / "certify.txt", text)
    return 0 if rep.ok else 1


def _build_report(rep) -> dict:
    return {"mode": rep.mode, "seconds": rep.seconds, "transitions": rep.transitions, "states": rep.states,
            "parts": rep.parts, "aborted": rep.aborted}


def _limit(args):
    return None if args.memory_limit is None else int(args.memory_limit * 2**20)


def cmd_abstract(args) -> int:
    spec = _spec(args)
    out = _out(args)
    comp, crep = compositional_build(spec, memory_limit=_limit(args))
    reports = [crep] if args.mode in ("compositional", "both") else []
    if args.mode in ("monolithic", "both"):
        reports.append(monolithic_build(spec, comp.abstractions, comp.domain, _limit(args)))
    summary = {
        "domain": comp.domain,
        "abstractions": [
            {"name": a.name, "grid": a.grid.to_dict(), "int_grid": a.int_grid.to_dict() if a.int_grid else None,
             "guarantee": a.guarantee.to_dict()}
            for a in comp.abstractions
        ],
        "builds": [_build_report(r) for r in reports],
    }
    np.savez_compressed(out / "local_tables.npz", **{
        f"{k}_{i}": getattr(t, k) for i, t in enumerate(comp.tables) for k in ("lo", "hi", "ok")
    })
    _write(out / "abstraction.json", json.dumps(summary, indent=2))
    for r in reports:
        status = f"ABORTED ({r.aborted})" if r.aborted else f"{r.seconds:.3f} s"
        print(f"{r.mode:<14} {status:>12}  states={r.states}  transitions={r.transitions}")
    return 4 if any(r.aborted for r in reports) else 0


def cmd_bench(args) -> int:
    args.mode = "both"
    rc = cmd_abstract(args)
    if rc:
        return rc
    builds = json.loads((Path(args.out) / "abstraction.json").read_text())["builds"]
    c, m = builds
    faster = c["seconds"] <= m["seconds"]
    print(f"compositional/monolithic time ratio: {c['seconds'] / m['seconds']:.3f} "
          f"({'compositional faster' if faster else 'monolithic faster'})")
    _write(Path(args.out) / "bench.json", json.dumps({"compositional": c, "monolithic": m, "compositional_faster": faster}, indent=2))
    return 0


def _graph_from(args, n: int) -> InterconnectionGraph:
    edges = [tuple(int(v) for v in e.split(",")) for e in (args.edges or [])]
    return InterconnectionGraph.from_one_based(n, edges)


def cmd_compose(args) -> int:
    out = _out(args)
    if args.systems:
        systems = [TransitionSystem.load(p) for p in args.systems]
        graph = _graph_from(args, len(systems))
        M = CompositionParams(tuple(args.M if len(args.M) > 1 else args.M * len(systems)))
        if args.composition_mode == "on-the-fly":
            oracle = compose(systems, graph, M, materialize=False)
            count = sum(len(oracle.successors(x, u)) for x in range(oracle.n_states) for u in range(oracle.n_ext))
            print(f"composed (on the fly): {oracle.n_states} states, {oracle.n_ext} inputs, {count} transitions")
            return 0
        ts = compose(systems, graph, M, materialize=True)
        ts.save(out / "composed.json")
        print(f"composed: {ts.n_states} states, {ts.n_ext} inputs, {ts.n_transitions} transitions")
        return 0
    spec = _spec(args)
    comp, rep = compositional_build(spec, memory_limit=_limit(args))
    print(f"composed over domain {comp.domain}: {comp.n_states} states, {comp.n_inputs} inputs, "
          f"{rep.transitions} transitions ({rep.seconds:.3f} s)")
    _write(out / "composition.json", json.dumps({"domain": comp.domain, "M": list(comp.M.mu), **_build_report(rep)}, indent=2))
    return 4 if rep.aborted else 0


def cmd_check_relation(args) -> int:
    a, b = TransitionSystem.load(args.system_a), TransitionSystem.load(args.system_b)
    alternating = args.mode in ("alt", "altbisim")
    if args.mode in ("bisim", "altbisim"):
        res = check_bisimulation(a, b, args.eps, args.mu, alternating=alternating)
        ok = res is not None
        rel = res[0] if ok else None
    else:
        rel = (max_alternating_simulation if alternating else max_simulation)(a, b, args.eps, args.mu)
        ok = rel is not None
    print(f"{args.mode} at eps={args.eps:g}, mu={args.mu:g}: {'yes' if ok else 'no'}")
    if rel is not None:
        rel.save(_out(args) / "relation.txt")
    return 0 if ok else 1


def cmd_synthesize(args) -> int:
    spec = _spec(args)
    t0 = time.perf_counter()
    comp, _ = compositional_build(spec)
    ctl = synthesize(spec, comp)
    dt = time.perf_counter() - t0
    print(f"winning cells: {len(ctl)} of {comp.n_states} ({ctl.iterations} rounds, {dt:.2f} s)")
    if spec.x0 is not None:
        cell = tuple(int(a.grid.cell_indices(np.array([v]))[0][0]) for a, v in zip(comp.abstractions, spec.x0))
        rel = related_cell(ctl, spec.x0, spec.eps_targets)
        print(f"quantized x0 {cell} winning: {ctl.contains(cell)}; related winning cell within eps: {rel}")
    ctl.save(_out(args) / "controller.npz")
    if len(ctl) == 0:
        print("empty winning set: no safe controller exists at this resolution", file=sys.stderr)
        return 1
    return 0


def cmd_simulate(args) -> int:
    spec = _spec(args)
    out = _out(args)
    comp, _ = compositional_build(spec)
    path = Path(args.controller) if args.controller else out / "controller.npz"
    ctl = GridController.load(path, comp) if path.exists() else synthesize(spec, comp)
    x0 = np.array(args.x0, dtype=float) if args.x0 else spec.x0
    if x0 is None:
        print("no initial state: give --x0", file=sys.stderr)
        return 2
    rng = None if args.seed is None else np.random.default_rng(args.seed)
    try:
        tr = simulate(spec, ctl, x0, args.horizon, rng)
    except ControllerRefusal as e:
        hint = "" if e.hint is None else f"; nearest winning cell {e.hint}"
        print(f"refused: {e}{hint}", file=sys.stderr)
        return 3
    tr.to_csv(out / "trajectory.csv")
    _write(out / "plot_data.json", json.dumps(tr.plot_data(spec.safe_set)))
    print(f"{tr.horizon} steps, all inside safe set: {tr.all_safe()}, min margin {tr.margin.min():.4g}")
    return 0 if tr.all_safe() else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", help="network spec (JSON); default: the bundled traffic network")
    common.add_argument("--seed", type=int, default=None, help="seed for randomized input choice")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="accepted for compatibility; work is vectorized")
    common.add_argument("--eta", type=float, nargs="+", help="state grid spacing (one value or one per subsystem)")
    common.add_argument("--mu-int", type=float, help="internal-input quantization radius (coupled spacing is twice this)")
    common.add_argument("--state-bounds", type=float, nargs=2, metavar=("LO", "HI"), help="state box for every subsystem")
    common.add_argument("--memory-limit", type=float, default=None, help="abort builds above this many MiB")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="compabs", description="Compositional symbolic abstractions of networks.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("certify", parents=[common], help="incremental-stability gains and the compositional condition")
    c.add_argument("--recompute", action="store_true", help="check with computed instead of stated gains")
    c.set_defaults(func=cmd_certify)

    c = sub.add_parser("abstract", parents=[common], help="build grid abstractions and time them")
    c.add_argument("--mode", choices=["compositional", "monolithic", "both"], default="compositional")
    c.set_defaults(func=cmd_abstract)

    c = sub.add_parser("compose", parents=[common], help="compose abstractions (spec) or serialized systems")
    c.add_argument("--systems", nargs="+", help="serialized transition systems to compose instead of the spec")
    c.add_argument("--edges", nargs="*", help="1-based j,i pairs: j feeds i")
    c.add_argument("--M", type=float, nargs="+", default=[0.0], help="composition slack per subsystem")
    c.add_argument("--composition-mode", choices=["materialize", "on-the-fly"], default="materialize")
    c.set_defaults(func=cmd_compose)

    c = sub.add_parser("check-relation", parents=[common], help="maximal approximate (alternating) (bi)simulation")
    c.add_argument("system_a")
    c.add_argument("system_b")
    c.add_argument("--eps", type=float, required=True)
    c.add_argument("--mu", type=float, default=0.0)
    c.add_argument("--mode", choices=["sim", "alt", "bisim", "altbisim"], default="sim")
    c.set_defaults(func=cmd_check_relation)

    c = sub.add_parser("synthesize", parents=[common], help="safety controller over the composed abstraction")
    c.set_defaults(func=cmd_synthesize)

    c = sub.add_parser("simulate", parents=[common], help="closed-loop run of the concrete network")
    c.add_argument("--controller", help="controller file (default: <out>/controller.npz, else synthesize)")
    c.add_argument("--x0", type=float, nargs="+")
    c.add_argument("--horizon", type=int, default=None)
    c.set_defaults(func=cmd_simulate)

    c = sub.add_parser("bench", parents=[common], help="compositional versus monolithic abstraction time")
    c.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (Infeasible, FastPathUnsupported, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
