"""Error metrics, rate and boundedness checks, and multi-trial experiments."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .coding import GradientCode
from .engine import CodedSystem, DGDSystem, RunConfig, Trajectory, inexact_gradient_check, run
from .errors import ConstantsUnavailable, DegenerateSeries, ZeroNorm
from .objectives import (
    ObjectiveConstants,
    PartitionedQuadratic,
    StepSchedule,
    constants,
    exact_solution,
    generate_problem,
)
from .presets import preset
from .spectral import summarize

FLOAT_FMT = "%.17g"


# --- metrics ------------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    ks: np.ndarray
    AE: np.ndarray
    CE: np.ndarray


def metrics(traj: Trajectory, x_o) -> Metrics:
    """AE = max_i ||x_i - x_o|| / ||x_o||, CE = max_i ||x_i - bar_x|| / ||x_o||."""
    x_o = np.asarray(x_o, dtype=float)
    scale = float(np.linalg.norm(x_o))
    if scale == 0.0:
        raise ZeroNorm("cannot normalize by ||x_o|| = 0")
    ae = np.linalg.norm(traj.X - x_o, axis=2).max(axis=1) / scale
    ce = traj.disagreement / scale
    return Metrics(np.asarray(traj.ks), ae, ce)


def tail_slope(ks, values, a: float, tail_fraction: float = 0.5) -> float:
    """Least-squares slope of log(values) against log(k + a) over the tail."""
    ks = np.asarray(ks, dtype=float)
    v = np.asarray(values, dtype=float)
    start = int(math.floor(len(ks) * (1.0 - tail_fraction)))
    sel = slice(start, None)
    x, y = ks[sel], v[sel]
    keep = y > 0
    if keep.sum() < 2:
        raise DegenerateSeries("fewer than two positive tail values")
    slope, _ = np.polyfit(np.log(x[keep] + a), np.log(y[keep]), 1)
    return float(slope)


# --- bound checks ---------------------------------------------------------------


@dataclass
class BoundReport:
    name: str
    ks: np.ndarray
    observed: np.ndarray
    bound: np.ndarray
    holds: bool
    constants: dict = field(default_factory=dict)
    slope: float | None = None
    degenerate: bool = False
    note: str = ""

    @property
    def margin(self) -> np.ndarray:
        return self.bound - self.observed

    def summary_line(self) -> str:
        parts = [f"check={self.name}", f"holds={self.holds}"]
        if self.slope is not None:
            parts.append(f"slope={self.slope:.4f}")
        parts += [f"{k}={v:.6g}" for k, v in self.constants.items()]
        if self.note:
            parts.append(f"note={self.note}")
        return " ".join(parts)


def consensus_rate_check(ks, ce, schedule: StepSchedule, tail_fraction: float = 0.5,
                         rtol: float = 1e-9) -> BoundReport:
    """Test ``CE(k) <= C (k + a)^-theta`` on the tail.

    C is calibrated on the head (the points before the tail) and the
    envelope is then checked on the tail, so a series that stops decaying is
    caught.  ``C_full`` (minimal C over the whole horizon) is reported too.
    """
    ks = np.asarray(ks, dtype=float)
    ce = np.asarray(ce, dtype=float)
    if len(ce) < 100:
        raise ValueError("consensus check needs at least 100 points")
    env = (ks + schedule.a) ** (-schedule.theta)
    start = int(math.floor(len(ks) * (1.0 - tail_fraction)))
    if not np.any(ce > 0):
        return BoundReport("consensus", ks, ce, np.zeros_like(ce), True,
                           {"C": 0.0, "C_full": 0.0}, None, True, "all-zero series")
    C = float(np.max(ce[:start] / env[:start])) if start > 0 else float(np.max(ce / env))
    C_full = float(np.max(ce / env))
    bound = C * env
    tail_ok = bool(np.all(ce[start:] <= bound[start:] * (1.0 + rtol)))
    try:
        slope = tail_slope(ks, ce, schedule.a, tail_fraction)
    except DegenerateSeries:
        slope = None
    return BoundReport("consensus", ks, ce, bound, tail_ok, {"C": C, "C_full": C_full}, slope)


def c2_constant(bar0_err2: float, spread0_2: float, c1: float, L: float, M: float,
                lambda2_mag: float, sq_sum: float) -> float:
    gap2 = (1.0 - lambda2_mag) ** 2
    inner = (bar0_err2 + 8.0 * c1 ** 2 * L ** 2 / gap2 * spread0_2
             + M ** 2 * (1.0 + 8.0 * c1 ** 2) / gap2 * sq_sum)
    return math.exp(sq_sum) * inner


def convergence_rate_check(traj: Trajectory, problem: PartitionedQuadratic, code: GradientCode,
                           schedule: StepSchedule, consts: ObjectiveConstants | None = None,
                           c1_hat: float | None = None, lambda2_mag: float | None = None,
                           tail_fraction: float = 0.5, rtol: float = 1e-9) -> BoundReport:
    """Boundedness ``||bar_x(k) - x*||^2 <= C2`` plus the ``(k+a)^(-theta/2)`` envelope.

    C2 uses the partial step-square sum up to the horizon; if that fails the
    analytic bound on the full series is tried before declaring a violation.
    """
    try:
        if consts is None:
            consts = constants(code, problem)
        if c1_hat is None or lambda2_mag is None:
            summ = summarize(code)
            c1_hat = summ.profile.c1_hat if c1_hat is None else c1_hat
            lambda2_mag = summ.report.lambda2_mag if lambda2_mag is None else lambda2_mag
        x_star = exact_solution(problem)
    except Exception as exc:  # noqa: BLE001 - surfaced as a typed error
        raise ConstantsUnavailable(str(exc)) from exc

    ks = np.asarray(traj.ks, dtype=float)
    err = np.linalg.norm(traj.bar_x - x_star, axis=1)
    err2 = err ** 2
    bar0 = float(err2[0])
    spread0 = float(traj.disagreement[0] ** 2)
    args = (bar0, spread0, c1_hat, consts.L, consts.M_traj, lambda2_mag)
    partial = schedule.square_sum(int(ks[-1]) + 1)
    C2 = c2_constant(*args, partial)
    holds = bool(np.all(err2 <= C2 * (1.0 + rtol)))
    note = "partial-sum"
    if not holds:
        C2 = c2_constant(*args, schedule.square_sum_bound())
        holds = bool(np.all(err2 <= C2 * (1.0 + rtol)))
        note = "analytic-tail"
    env = (ks + schedule.a) ** (-schedule.theta / 2.0)
    C_tilde = float(np.max(err / env)) if np.any(err > 0) else 0.0
    try:
        slope = tail_slope(ks, err, schedule.a, tail_fraction)
    except DegenerateSeries:
        slope = None
    return BoundReport("boundedness", ks, err2, np.full_like(err2, C2), holds,
                       {"C2": C2, "C_tilde": C_tilde, "C1_hat": c1_hat, "L": consts.L,
                        "M": consts.M_traj}, slope, not np.any(err > 0), note)


def inexact_gradient_report(traj: Trajectory, code: GradientCode, problem: PartitionedQuadratic,
                            slack: float = 1e-8) -> BoundReport:
    summ = summarize(code)
    system = CodedSystem.from_code(code, problem)
    consts = constants(code, problem)
    rep = inexact_gradient_check(traj, system, problem, consts.L, summ.tilde_w, slack)
    return BoundReport("inexact-gradient", np.asarray(traj.ks), rep.lhs, rep.bound, rep.holds,
                       {"L": consts.L, "tilde_w": summ.tilde_w,
                        "min_margin": float(rep.margin.min())})


# --- experiments ------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    preset: str = "three-node"
    trials: int = 100
    schedule: StepSchedule = field(default_factory=lambda: StepSchedule(300.0, 0.75))
    iters: int = 2000
    algorithms: tuple[str, ...] = ("codgrad-matrix", "dgd-cta")
    seed0: int = 0
    workers: int = 1
    record_every: int = 1
    code: GradientCode | None = None    # for preset="custom"
    Q: int | None = None
    N: int | None = None

    def resolve(self) -> tuple[GradientCode, int, int]:
        if self.preset == "custom":
            if self.code is None or self.Q is None or self.N is None:
                raise ValueError("custom experiments need code, Q and N")
            return self.code, self.Q, self.N
        p = preset(self.preset)
        return p.code, p.Q, p.N


@dataclass
class TrialResult:
    trial: int
    seed: int
    ks: np.ndarray
    curves: dict[str, Metrics]


def build_system(algorithm: str, code: GradientCode, problem: PartitionedQuadratic):
    if algorithm.startswith("codgrad"):
        return CodedSystem.from_code(code, problem)
    if algorithm.startswith("dgd"):
        return DGDSystem.from_matrix(code.abs_tilde_a, problem)
    return None


def run_trial(spec: ExperimentSpec, trial: int) -> TrialResult:
    code, Q, N = spec.resolve()
    seed = spec.seed0 + trial
    problem = generate_problem(Q, N, code.m, seed)
    curves = {}
    for alg in spec.algorithms:
        cfg = RunConfig(alg, spec.schedule, spec.iters, 0.0, spec.record_every)
        try:
            traj = run(cfg, build_system(alg, code, problem), None, problem)
        except Exception as exc:
            raise RuntimeError(f"trial {trial} (seed {seed}), {alg}: {exc}") from exc
        curves[alg] = metrics(traj, problem.x_o)
    ks = next(iter(curves.values())).ks
    return TrialResult(trial, seed, ks, curves)


def _run_trial_args(args):
    return run_trial(*args)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    trials: list[TrialResult]

    @property
    def ks(self) -> np.ndarray:
        return self.trials[0].ks

    def stack(self, alg: str, metric: str) -> np.ndarray:
        """(trials, T) array of one metric."""
        return np.stack([getattr(t.curves[alg], metric) for t in self.trials])

    def mean(self, alg: str, metric: str) -> np.ndarray:
        return self.stack(alg, metric).mean(axis=0)

    def value_at(self, alg: str, metric: str, k: int, mean: bool = True):
        idx = int(np.searchsorted(self.ks, k))
        if idx >= len(self.ks) or self.ks[idx] != k:
            raise KeyError(f"iteration {k} was not recorded")
        s = self.stack(alg, metric)[:, idx]
        return float(s.mean()) if mean else s

    def raw_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "alg", "trial", "AE", "CE"])
        for t in self.trials:
            for alg in self.spec.algorithms:
                m = t.curves[alg]
                for k, ae, ce in zip(m.ks, m.AE, m.CE):
                    w.writerow([int(k), alg, t.trial, FLOAT_FMT % ae, FLOAT_FMT % ce])
        return buf.getvalue()

    def aggregated_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "alg", "AE_mean", "CE_mean"])
        for alg in self.spec.algorithms:
            ae, ce = self.mean(alg, "AE"), self.mean(alg, "CE")
            for k, a, c in zip(self.ks, ae, ce):
                w.writerow([int(k), alg, FLOAT_FMT % a, FLOAT_FMT % c])
        return buf.getvalue()

    def summary(self, early: int = 200, tail_fraction: float = 0.5) -> dict:
        spec = self.spec
        last = int(self.ks[-1])
        out = {"preset": spec.preset, "trials": spec.trials, "iters": spec.iters,
               "schedule": {"a": spec.schedule.a, "theta": spec.schedule.theta},
               "seeds": [t.seed for t in self.trials], "algorithms": {}}
        for alg in spec.algorithms:
            ae, ce = self.mean(alg, "AE"), self.mean(alg, "CE")
            rec = {"final_AE": float(ae[-1]), "final_CE": float(ce[-1])}
            if early < last and early in self.ks:
                rec["AE_decreased"] = self.value_at(alg, "AE", last) < self.value_at(alg, "AE", early)
                rec["CE_decreased"] = self.value_at(alg, "CE", last) < self.value_at(alg, "CE", early)
            rec["AE_tail_slope"] = tail_slope(self.ks, ae, spec.schedule.a, tail_fraction)
            rec["CE_tail_slope"] = tail_slope(self.ks, ce, spec.schedule.a, tail_fraction)
            out["algorithms"][alg] = rec
        algs = out["algorithms"]
        coded = [a for a in spec.algorithms if a.startswith("codgrad")]
        base = [a for a in spec.algorithms if a.startswith("dgd")]
        if coded and base:
            c, d = algs[coded[0]], algs[base[0]]
            out["verdicts"] = {
                "codgrad_lower_final_CE": c["final_CE"] < d["final_CE"],
                "codgrad_lower_final_AE": c["final_AE"] < d["final_AE"],
            }
        return out

    def write(self, out_dir) -> dict[str, Path]:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        stem = f"{self.spec.preset}_a{self.spec.schedule.a:g}_t{self.spec.schedule.theta:g}"
        paths = {"raw": d / f"{stem}_raw.csv", "aggregated": d / f"{stem}_mean.csv",
                 "summary": d / f"{stem}_summary.json"}
        paths["raw"].write_text(self.raw_csv())
        paths["aggregated"].write_text(self.aggregated_csv())
        paths["summary"].write_text(json.dumps(self.summary(), indent=2) + "\n")
        return paths


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Run all trials; results are ordered by trial index whatever the pool does."""
    if spec.trials < 1:
        raise ValueError("need at least one trial")
    jobs = [(spec, t) for t in range(spec.trials)]
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            trials = list(pool.map(_run_trial_args, jobs))
    else:
        trials = [run_trial(*j) for j in jobs]
    trials.sort(key=lambda t: t.trial)
    return ExperimentResult(spec, trials)


def parse_raw_csv(text: str) -> dict[tuple[str, int], Metrics]:
    rows = list(csv.DictReader(io.StringIO(text)))
    out: dict[tuple[str, int], list] = {}
    for r in rows:
        out.setdefault((r["alg"], int(r["trial"])), []).append(
            (int(r["k"]), float(r["AE"]), float(r["CE"])))
    return {key: Metrics(np.array([v[0] for v in vals]), np.array([v[1] for v in vals]),
                         np.array([v[2] for v in vals]))
            for key, vals in out.items()}


def parse_aggregated_csv(text: str) -> dict[str, Metrics]:
    rows = list(csv.DictReader(io.StringIO(text)))
    out: dict[str, list] = {}
    for r in rows:
        out.setdefault(r["alg"], []).append((int(r["k"]), float(r["AE_mean"]), float(r["CE_mean"])))
    return {alg: Metrics(np.array([v[0] for v in vals]), np.array([v[1] for v in vals]),
                         np.array([v[2] for v in vals]))
            for alg, vals in out.items()}


# --- single-run CSV (the ``run`` subcommand) ------------------------------------------


def format_run_csv(traj: Trajectory, schedule: StepSchedule) -> str:
    buf = io.StringIO()
    buf.write(f"# {traj.algorithm} {schedule.a:.17g} {schedule.theta:.17g}\n")
    w = csv.writer(buf, lineterminator="\n")
    N = traj.X.shape[2]
    w.writerow(["k", "alpha", "node"] + [f"x{j}" for j in range(N)])
    for t, k in enumerate(traj.ks):
        for i in range(traj.X.shape[1]):
            w.writerow([int(k), FLOAT_FMT % traj.alphas[t], i] + [FLOAT_FMT % v for v in traj.X[t, i]])
    return buf.getvalue()


@dataclass(frozen=True)
class RunRecord:
    algorithm: str
    schedule: StepSchedule
    ks: np.ndarray
    alphas: np.ndarray
    X: np.ndarray


def parse_run_csv(text: str) -> RunRecord:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError("run CSV must start with a '# algo a theta' line")
    algo, a, theta = lines[0][1:].split()
    rows = list(csv.reader(lines[1:]))[1:]
    ks = sorted({int(r[0]) for r in rows})
    n = max(int(r[2]) for r in rows) + 1
    N = len(rows[0]) - 3
    index = {k: t for t, k in enumerate(ks)}
    X = np.empty((len(ks), n, N))
    alphas = np.empty(len(ks))
    for r in rows:
        t = index[int(r[0])]
        alphas[t] = float(r[1])
        X[t, int(r[2])] = [float(v) for v in r[3:]]
    return RunRecord(algo, StepSchedule(float(a), float(theta)), np.array(ks), alphas, X)


def trajectory_from_record(rec: RunRecord, weights: Sequence[float]) -> Trajectory:
    """Rebuild a trajectory using the given averaging weights over nodes."""
    w = np.asarray(weights, dtype=float)
    bar = np.einsum("i,tij->tj", w, rec.X)
    dis = np.linalg.norm(rec.X - bar[:, None, :], axis=2).max(axis=1)
    n = rec.X.shape[1]
    return Trajectory(rec.algorithm, rec.ks, rec.X, bar, dis, rec.alphas, np.full(n, -1),
                      int(rec.ks[-1]), "max_iters")


def check_run(rec: RunRecord, code: GradientCode, problem: PartitionedQuadratic) -> list[BoundReport]:
    """All applicable bound checks for a recorded CoDGraD run."""
    if not rec.algorithm.startswith("codgrad"):
        raise ValueError("bound checks apply to CoDGraD runs only")
    system = CodedSystem.from_code(code, problem)
    traj = trajectory_from_record(rec, system.node_weights)
    m = metrics(traj, problem.x_o)
    reports = []
    if len(m.CE) >= 100:
        reports.append(consensus_rate_check(m.ks, m.CE, rec.schedule))
    reports.append(convergence_rate_check(traj, problem, code, rec.schedule))
    if traj.dense:
        reports.append(inexact_gradient_report(traj, code, problem))
    return reports

