"""Command-line entry point: ``codgrad <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import formation as fm
from .coding import generate_cyclic_code, read_code, write_code
from .engine import RunConfig, run
from .errors import CodgradError
from .harness import ExperimentSpec, build_system, check_run, format_run_csv, parse_run_csv, run_experiment
from .objectives import StepSchedule, generate_problem, read_problem, write_problem
from .presets import PRESET_NAMES, preset
from .spectral import summarize

ALGO_NAMES = {"codgrad": "codgrad-node", "codgrad-matrix": "codgrad-matrix",
              "dgd-atc": "dgd-atc", "dgd-cta": "dgd-cta", "central": "centralized"}


def _fmt_vec(v) -> str:
    return " ".join(f"{x: .10f}" for x in v)


def cmd_validate(args) -> int:
    code = read_code(args.code, tol=args.tol)
    print(f"valid n={code.n} m={code.m}")
    print(f"residual={code.residual:.3e}")
    print("row_stragglers=" + ",".join(str(s) for s in code.row_stragglers))
    print(f"s={code.s}")
    return 0


def cmd_gen_cyclic(args) -> int:
    code = generate_cyclic_code(args.n, args.s, args.m, seed=args.seed)
    write_code(code, args.out)
    print(f"wrote {args.out} n={code.n} m={code.m} residual={code.residual:.3e}")
    return 0


def cmd_spectrum(args) -> int:
    code = read_code(args.code)
    s = summarize(code, horizon=args.horizon)
    print(f"simple_one     {s.report.simple_one}")
    print(f"|lambda2|      {s.report.lambda2_mag:.12f}")
    print(f"gamma          {s.profile.gamma:.12f}")
    print(f"C1_hat         {s.profile.c1_hat:.12f}")
    print(f"tilde_w        {s.tilde_w:.12f}")
    print("eigenvalues")
    for z in s.report.eigenvalues:
        print(f"  {z.real: .12f} {z.imag:+.12f}i  |{abs(z):.12f}|")
    print("a_sde")
    print("  " + _fmt_vec(s.a_vec))
    print("A_sde")
    for row in code.a_sde:
        print("  " + _fmt_vec(row))
    print(f"lambda2={s.report.lambda2_mag:.17g}")
    print(f"tildew={s.tilde_w:.17g}")
    return 0 if s.report.simple_one else 1


def cmd_gen_problem(args) -> int:
    prob = generate_problem(args.q, args.n, args.blocks, args.seed)
    write_problem(prob, args.out)
    print(f"wrote {args.out} Q={prob.Q} N={prob.N} m={prob.m}")
    return 0


def cmd_run(args) -> int:
    code = read_code(args.code)
    prob = read_problem(args.problem)
    algo = ALGO_NAMES[args.algo]
    sched = StepSchedule(args.a, args.theta)
    cfg = RunConfig(algo, sched, args.iters, args.eps, args.record_every)
    traj = run(cfg, build_system(algo, code, prob), args.seed, prob)
    text = format_run_csv(traj, sched)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"wrote {args.out} iterations={traj.iterations} status={traj.status}")
    return 0


def _parse_add_node(spec: str):
    # "ID:u,v,w" or "ID:u,v,w:threshold"
    parts = spec.split(":")
    if len(parts) not in (2, 3):
        raise ValueError("--add-node expects ID:u,v,...[:threshold]")
    links = [int(t) for t in parts[1].split(",") if t]
    thr = int(parts[2]) if len(parts) == 3 else None
    return int(parts[0]), links, thr


def cmd_formation(args) -> int:
    n, edges = fm.read_edge_list(args.graph)
    adj = fm.adjacency_from_edges(max(n, args.coordinator + 1), edges)
    trace = fm.detect(adj, args.coordinator, timeout_ticks=args.ticks, cipher=fm.RecordingCipher())
    sys.stdout.write(trace.format())
    if args.add_node:
        new, links, thr = _parse_add_node(args.add_node)
        res = fm.add_node(trace, new, links, thr, seed=args.seed)
        for e in res.notify_events:
            print(e.format())
        if res.accepted:
            print(f"add-node {new} accepted n={res.code.n}")
            sys.stdout.write(res.trace.format())
        else:
            print(f"add-node {new} rejected: {res.rejection}")
    return 0


def cmd_reproduce(args) -> int:
    p = preset(args.preset)
    sched = p.schedules[args.schedule]
    spec = ExperimentSpec(args.preset, args.trials, sched, args.iters,
                          tuple(ALGO_NAMES[a] for a in args.algos), args.seed0, args.workers)
    res = run_experiment(spec)
    paths = res.write(args.out_dir)
    print(json.dumps(res.summary().get("verdicts", {})))
    for kind, path in paths.items():
        print(f"{kind}={path}")
    return 0


def cmd_check_bounds(args) -> int:
    with open(args.run) as fh:
        rec = parse_run_csv(fh.read())
    code = read_code(args.code)
    prob = read_problem(args.problem)
    reports = check_run(rec, code, prob)
    for r in reports:
        print(r.summary_line())
    ok = all(r.holds for r in reports)
    print("all-pass" if ok else "FAIL")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="codgrad", description="Coded distributed gradient descent simulator")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("validate", help="check A B = 1 for a code file")
    p.add_argument("--code", required=True)
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gen-cyclic", help="random code on the cyclic support")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_cyclic)

    p = sub.add_parser("spectrum", help="spectral certificate of the lifted decoding matrix")
    p.add_argument("--code", required=True)
    p.add_argument("--horizon", type=int, default=200)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("gen-problem", help="random partitioned least-squares instance")
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--blocks", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_problem)

    p = sub.add_parser("run", help="run one algorithm and dump node iterates as CSV")
    p.add_argument("--code", required=True)
    p.add_argument("--problem", required=True)
    p.add_argument("--algo", choices=sorted(ALGO_NAMES), default="codgrad")
    p.add_argument("--theta", type=float, default=0.75)
    p.add_argument("--a", type=float, default=300.0)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None, help="seed for a uniform start (default: zeros)")
    p.add_argument("--record-every", type=int, default=1)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("formation", help="simulate network detection and node addition")
    p.add_argument("--graph", required=True, help="edge list file, one 'u v' pair per line")
    p.add_argument("--coordinator", type=int, default=0)
    p.add_argument("--ticks", type=int, default=None)
    p.add_argument("--add-node", default=None, help="ID:u,v,...[:threshold]")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_formation)

    p = sub.add_parser("reproduce", help="multi-trial preset experiment")
    p.add_argument("--preset", choices=PRESET_NAMES, required=True)
    p.add_argument("--schedule", type=int, choices=(0, 1), default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--seed0", type=int, default=0)
    p.add_argument("--algos", nargs="+", choices=sorted(ALGO_NAMES), default=["codgrad-matrix", "dgd-cta"])
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("check-bounds", help="verify rate and boundedness bounds on a run CSV")
    p.add_argument("--run", required=True)
    p.add_argument("--code", required=True)
    p.add_argument("--problem", required=True)
    p.set_defaults(func=cmd_check_bounds)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CodgradError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
