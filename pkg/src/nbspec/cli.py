"""Command-line entry point: ``nbspec <subcommand> ...``.

Exit status is 0 on success, 2 on a usage error (bad flags or parameter
values) and 1 when the computation itself fails.
"""

from __future__ import annotations

import argparse
import io
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import branching as bp
from .detection import DetectConfig, TauMode, detect, overlap
from .diagnostics import diagnose_rows, tangle_scan
from .generator import CapacityError, GraphFormatError, format_graph, read_graph, sample_graph
from .harness import ConfigError, parse_config, run_sweep
from .model import Balance, ModelParams, parse_weight_law
from .nb_operator import build
from .spectral import (Method, SpectralError, dense_spectrum, practical_ell, riemann_check,
                       spectrum_csv, top_two_iterative)


class UsageError(Exception):
    pass


def _write(text: str, path: Optional[str]) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="ascii", newline="\n")


def _law(text: str):
    try:
        return parse_weight_law(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ----------------------------------------------------------------- subcommands


def cmd_generate(args) -> int:
    try:
        params = ModelParams(args.n, args.a, args.b, _law(args.weights), Balance(args.balance), args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    g, report = sample_graph(params, strategy=args.strategy)
    _write(format_graph(g), args.out)
    if args.report:
        doc = {"params": {"n": params.n, "a": params.a, "b": params.b,
                          "weights": params.law.to_text(), "balance": params.balance.value,
                          "seed": params.seed},
               "m": report.m, "n_plus": report.n_plus, "n_minus": report.n_minus,
               "clipped_pairs": report.clipped_pairs, "strategy": report.strategy}
        Path(args.report).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_spectrum(args) -> int:
    g = read_graph(args.inp)
    op = build(g)
    if args.mode == Method.DENSE.value:
        rep = dense_spectrum(op)
    else:
        rep = top_two_iterative(op, max_iters=args.max_iters, tol=args.tol, seed=args.seed)
    doc = rep.summary()
    doc.update(converged=rep.converged, complex_pair=rep.complex_pair, seed=args.seed,
               input=str(args.inp), lambda2_re=float(rep.lambda2.real),
               lambda2_im=float(rep.lambda2.imag))
    if args.riemann_margin is not None:
        verdict, offenders = riemann_check(rep, args.riemann_margin)
        doc["riemann"] = {"margin": args.riemann_margin, "verdict": verdict.value,
                          "offenders": len(offenders)}
    if args.dump_csv:
        if rep.eigenvalues is None:
            raise UsageError("--dump-csv needs --mode dense")
        Path(args.dump_csv).write_text(spectrum_csv(rep), encoding="ascii", newline="\n")
    sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")
    return 0


def cmd_detect(args) -> int:
    g = read_graph(args.inp)
    cfg = DetectConfig(tau=args.tau, tau_mode=TauMode(args.tau_mode), max_iters=args.max_iters,
                       seed=args.seed)
    res = detect(g, cfg)
    lines = io.StringIO()
    for v in range(g.n):
        lines.write(f"{v} {'+' if res.labels[v] > 0 else '-'} {float(res.scores[v])!r}\n")
    summary = {
        "tau": res.tau,
        "tau_mode": cfg.tau_mode.value,
        "lambda1": float(res.report.lambda1),
        "lambda2_mod": float(res.report.lambda2_mod),
        "overlap_if_truth_given": None if args.no_truth else overlap(res.labels, g.spins).value,
        "converged": not res.flagged,
        "seed": args.seed,
        "input": str(args.inp),
    }
    if args.out:
        _write(lines.getvalue(), args.out)
    elif not args.json:
        sys.stdout.write(lines.getvalue())
    if args.json:
        sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    return 0


def _root_weight(text: str):
    if text in (bp.RootWeight.FROM_NU.value, bp.RootWeight.FROM_NU_STAR.value):
        return bp.RootWeight(text), 1.0
    try:
        return bp.RootWeight.FIXED, float(text)
    except ValueError:
        raise UsageError(f"--root-weight must be nu, nu_star or a number, got {text!r}") from None


def cmd_branching(args) -> int:
    spin = {"+": 1, "-": -1, "uniform": None}[args.root_spin]
    mode, value = _root_weight(args.root_weight)
    try:
        params = bp.BpParams(args.a, args.b, _law(args.weights), spin, mode, value)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    buf = io.StringIO()
    if args.what == "generations":
        buf.write("replicate,t,Zp,Zm,PsiP,PsiM\n")
        done = 0
        for forest in bp.simulate_chunks(params, args.depth, args.replicates, args.seed,
                                         explicit_depth=0, budget=args.budget):
            for row in bp.generation_rows(forest, done):
                buf.write(",".join(repr(x) if isinstance(x, float) else str(x) for x in row) + "\n")
            done += forest.replicates
    else:
        if args.ell is None:
            raise UsageError("--what q needs --ell")
        q = bp.q_samples(params, args.ell, args.replicates, args.seed)
        buf.write("replicate,Q1,Q2\n")
        for i, (q1, q2) in enumerate(q):
            buf.write(f"{i},{float(q1)!r},{float(q2)!r}\n")
    _write(buf.getvalue(), args.out)
    return 0


def cmd_diagnose(args) -> int:
    g = read_graph(args.inp)
    op = build(g)
    if args.radius < 0:
        raise UsageError("--radius must be >= 0")
    buf = io.StringIO()
    buf.write("edge,t,Yp,Ym,PsiP,PsiM,S,is_tree\n")
    for row in diagnose_rows(g, op, args.radius):
        e, t, yp, ym, pp, pm, s, tree = row
        buf.write(f"{e},{t},{yp},{ym},{pp!r},{pm!r},{s},{int(tree)}\n")
    _write(buf.getvalue(), args.out)
    ell = args.tangle_ell if args.tangle_ell is not None else (practical_ell(g).ell if g.m else 1)
    rep = tangle_scan(g, ell, op)
    doc = {"radius": rep.radius, "vertices_with_cycle": rep.vertices_with_cycle,
           "max_cycles": rep.max_cycles, "is_tangle_free": rep.is_tangle_free,
           "input": str(args.inp)}
    text = json.dumps(doc, sort_keys=True) + "\n"
    if args.tangle_json:
        Path(args.tangle_json).write_text(text)
    elif args.out:
        sys.stdout.write(text)
    else:
        sys.stderr.write(text)
    return 0


def cmd_sweep(args) -> int:
    try:
        spec = parse_config(Path(args.config).read_text())
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if args.timing:
        spec = replace(spec, timing=True)
    records = run_sweep(spec, Path(args.out), workers=args.threads)
    flagged = sum(r.flagged for r in records)
    sys.stderr.write(f"{len(records)} runs, {flagged} flagged\n")
    return 0


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nbspec", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    s = sub.add_parser("generate", help="sample a graph from the degree-corrected block model")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--a", type=float, required=True)
    s.add_argument("--b", type=float, required=True)
    s.add_argument("--weights", default="1:1", help="weight law, e.g. 0.5:0.5,1.5:0.5")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--balance", choices=[b.value for b in Balance], default="exact")
    s.add_argument("--strategy", choices=["auto", "pairs", "blocks"], default="auto")
    s.add_argument("--out", help="graph file (default: stdout)")
    s.add_argument("--report", help="write a JSON generation report here")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("spectrum", help="leading non-backtracking eigenvalues of a graph")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--mode", choices=[m.value for m in Method], default="iterative")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-iters", type=int, default=5000)
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--riemann-margin", type=float, help="also test |lambda_i| <= sqrt(lambda_1) + margin")
    s.add_argument("--dump-csv", help="dense mode: write every eigenvalue to this CSV")
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("detect", help="blind two-community assignment")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--tau", type=float, default=0.0)
    s.add_argument("--tau-mode", choices=[t.value for t in TauMode], default="fixed")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-iters", type=int, default=5000)
    s.add_argument("--out", help="per-vertex 'id label score' lines (default: stdout)")
    s.add_argument("--json", action="store_true", help="print the JSON summary on stdout")
    s.add_argument("--no-truth", action="store_true", help="do not score against the file's spins")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("branching", help="simulate the two-type branching process")
    s.add_argument("--a", type=float, required=True)
    s.add_argument("--b", type=float, required=True)
    s.add_argument("--weights", default="1:1")
    s.add_argument("--depth", type=int, default=5)
    s.add_argument("--replicates", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--root-spin", choices=["+", "-", "uniform"], default="+")
    s.add_argument("--root-weight", default="nu", help="nu, nu_star or a fixed value")
    s.add_argument("--what", choices=["generations", "q"], default="generations")
    s.add_argument("--ell", type=int)
    s.add_argument("--budget", type=int, default=bp.DEFAULT_BUDGET)
    s.add_argument("--out", help="CSV output (default: stdout)")
    s.set_defaults(func=cmd_branching)

    s = sub.add_parser("diagnose", help="oriented-ball statistics and tangle report")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--radius", type=int, default=2)
    s.add_argument("--tangle-ell", type=int)
    s.add_argument("--out", help="per-edge CSV (default: stdout)")
    s.add_argument("--tangle-json", help="write the tangle report here")
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("sweep", help="run a parameter sweep from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--threads", type=int, help="worker processes (default: NBSPEC_THREADS or all cores)")
    s.add_argument("--timing", action="store_true", help="fill the wall_ms column")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"nbspec {args.command}: error: {exc}\n")
        return 2
    except (OSError, GraphFormatError, CapacityError, SpectralError, ConfigError, ValueError) as exc:
        sys.stderr.write(f"nbspec {args.command}: {type(exc).__name__}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
