"""Shared driver for the preset reproduction scripts."""

import argparse
import json
import time

from codgrad.harness import ExperimentSpec, run_experiment
from codgrad.presets import preset


def main(name, argv=None):
    ap = argparse.ArgumentParser(description=f"Reproduce the {name} least-squares experiment")
    ap.add_argument("--schedule", type=int, choices=(0, 1), default=None,
                    help="run one schedule only (default: both)")
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--seed0", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out-dir", default=f"results/{name}")
    args = ap.parse_args(argv)

    p = preset(name)
    which = range(len(p.schedules)) if args.schedule is None else [args.schedule]
    for idx in which:
        sched = p.schedules[idx]
        t0 = time.perf_counter()
        res = run_experiment(ExperimentSpec(name, args.trials, sched, args.iters,
                                            ("codgrad-matrix", "dgd-atc", "dgd-cta"),
                                            args.seed0, args.workers))
        paths = res.write(args.out_dir)
        summ = res.summary()
        print(f"{name} a={sched.a:g} theta={sched.theta:g} "
              f"({args.trials} trials, {time.perf_counter() - t0:.1f}s)")
        for alg, rec in summ["algorithms"].items():
            print(f"  {alg:15s} AE={rec['final_AE']:.4e} CE={rec['final_CE']:.4e} "
                  f"slopes AE={rec['AE_tail_slope']:.2f} CE={rec['CE_tail_slope']:.2f}")
        print("  verdicts " + json.dumps(summ.get("verdicts", {})))
        print(f"  wrote {paths['aggregated']}")
