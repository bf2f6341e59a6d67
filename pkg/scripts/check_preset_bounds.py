"""Run one CoDGraD trajectory per preset and schedule and print every bound check."""

import argparse

from codgrad.engine import CodedSystem, RunConfig, run
from codgrad.harness import consensus_rate_check, convergence_rate_check, inexact_gradient_report, metrics
from codgrad.objectives import generate_problem
from codgrad.presets import PRESET_NAMES, preset


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    failures = 0
    for name in PRESET_NAMES:
        p = preset(name)
        for sched in p.schedules:
            prob = generate_problem(p.Q, p.N, p.code.m, args.seed)
            traj = run(RunConfig("codgrad-matrix", sched, args.iters), CodedSystem.from_code(p.code, prob))
            m = metrics(traj, prob.x_o)
            print(f"{name} a={sched.a:g} theta={sched.theta:g}")
            for rep in (consensus_rate_check(m.ks, m.CE, sched),
                        convergence_rate_check(traj, prob, p.code, sched),
                        inexact_gradient_report(traj, p.code, prob)):
                print("  " + rep.summary_line())
                failures += not rep.holds
    raise SystemExit(1 if failures else 0)


if __name__ == "__main__":
    main()
