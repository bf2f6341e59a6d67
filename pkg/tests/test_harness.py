import numpy as np
import pytest

from codgrad.engine import CodedSystem, RunConfig, Trajectory, run
from codgrad.errors import ZeroNorm
from codgrad.harness import (
    ExperimentSpec,
    c2_constant,
    check_run,
    consensus_rate_check,
    convergence_rate_check,
    format_run_csv,
    inexact_gradient_report,
    metrics,
    parse_aggregated_csv,
    parse_raw_csv,
    parse_run_csv,
    run_experiment,
    tail_slope,
)
from codgrad.objectives import ObjectiveConstants, StepSchedule, exact_solution, generate_problem
from codgrad.presets import preset


def fake_traj(X):
    X = np.asarray(X, dtype=float)
    T, n, _ = X.shape
    bar = X.mean(axis=1)
    dis = np.linalg.norm(X - bar[:, None, :], axis=2).max(axis=1)
    return Trajectory("codgrad-matrix", np.arange(T), X, bar, dis, np.ones(T), np.full(n, -1), T - 1, "max_iters")


def test_metrics_trivial_cases():
    x_o = np.array([3.0, 4.0])
    at_opt = fake_traj(np.tile(x_o, (2, 3, 1)))
    m = metrics(at_opt, x_o)
    assert np.all(m.AE == 0) and np.all(m.CE == 0)
    same = fake_traj(np.tile([1.0, 1.0], (2, 3, 1)))
    assert np.all(metrics(same, x_o).CE == 0)
    zero = fake_traj(np.zeros((1, 3, 2)))
    assert metrics(zero, x_o).AE[0] == 1.0
    with pytest.raises(ZeroNorm):
        metrics(zero, np.zeros(2))


def test_consensus_check_synthetic():
    sched = StepSchedule(300, 0.75)
    ks = np.arange(2001)
    rep = consensus_rate_check(ks, (ks + 300.0) ** -0.75, sched)
    assert rep.holds and rep.slope == pytest.approx(-0.75, abs=1e-9)
    assert rep.constants["C"] == pytest.approx(1.0) and rep.constants["C_full"] == pytest.approx(1.0)


def test_consensus_check_flags_divergence():
    sched = StepSchedule(300, 0.75)
    ks = np.arange(2001)
    ce = (ks + 300.0) ** -0.75 * np.exp(ks / 500.0)
    assert not consensus_rate_check(ks, ce, sched).holds


def test_consensus_check_degenerate_and_short():
    sched = StepSchedule(300, 0.75)
    rep = consensus_rate_check(np.arange(200), np.zeros(200), sched)
    assert rep.holds and rep.degenerate
    with pytest.raises(ValueError):
        consensus_rate_check(np.arange(50), np.ones(50), sched)


def test_tail_slope_power_law():
    ks = np.arange(1000)
    assert tail_slope(ks, 3.0 * (ks + 10.0) ** -1.7, 10.0) == pytest.approx(-1.7)


def test_convergence_check_from_optimum(three, three_problem):
    system = CodedSystem.from_code(three.code, three_problem)
    xb = exact_solution(three_problem)
    traj = run(RunConfig("codgrad-matrix", max_iters=100), system, np.tile(xb, (3, 1)))
    rep = convergence_rate_check(traj, three_problem, three.code, StepSchedule(300, 0.75))
    assert rep.holds and np.all(rep.observed <= 1e-20)


@pytest.mark.parametrize("name,idx", [("three-node", 0), ("three-node", 1), ("five-node", 0), ("five-node", 1)])
def test_all_bounds_hold_on_presets(name, idx):
    pre = preset(name)
    sched = pre.schedules[idx]
    prob = generate_problem(pre.Q, pre.N, pre.code.m, seed=idx)
    system = CodedSystem.from_code(pre.code, prob)
    traj = run(RunConfig("codgrad-matrix", sched, 2000), system)
    m = metrics(traj, prob.x_o)
    for rep in (consensus_rate_check(m.ks, m.CE, sched),
                convergence_rate_check(traj, prob, pre.code, sched),
                inexact_gradient_report(traj, pre.code, prob)):
        assert rep.holds, rep.summary_line()


def test_five_node_bar_x_tail_slope(five, five_problem):
    sched = StepSchedule(800, 0.9)
    system = CodedSystem.from_code(five.code, five_problem)
    traj = run(RunConfig("codgrad-matrix", sched, 2000), system)
    rep = convergence_rate_check(traj, five_problem, five.code, sched)
    assert rep.slope <= -0.45 + 0.2


def _drifting(problem, growth2, T=101):
    # consensus trajectory whose squared distance to x* grows by growth2 overall
    d = np.ones(problem.N) / np.sqrt(problem.N)
    r = np.sqrt(growth2) ** (np.arange(T) / (T - 1))
    bar = problem.x_o + r[:, None] * d
    X = np.repeat(bar[:, None, :], 3, axis=1)
    return Trajectory("codgrad-matrix", np.arange(T), X, bar, np.zeros(T), np.ones(T),
                      np.full(3, -1), T - 1, "max_iters")


def test_c2_fallback_to_analytic_tail(three, three_problem):
    sched = StepSchedule(300, 0.75)
    zero = ObjectiveConstants(0.0, 1.0, 0.0, 0.0)
    partial = sched.square_sum(101)
    full = sched.square_sum_bound()
    assert partial < full
    mid = _drifting(three_problem, np.exp(0.5 * (partial + full)))
    rep = convergence_rate_check(mid, three_problem, three.code, sched, zero, 0.0, 0.0)
    assert rep.holds and rep.note == "analytic-tail"
    far = _drifting(three_problem, np.exp(2 * full))
    rep = convergence_rate_check(far, three_problem, three.code, sched, zero, 0.0, 0.0)
    assert not rep.holds


def test_c2_constant_monotone():
    base = dict(bar0_err2=1.0, spread0_2=0.5, c1=1.5, L=3.0, M=2.0, lambda2_mag=0.6)
    vals = [c2_constant(**base, sq_sum=s) for s in (0.0, 0.01, 0.1, 1.0)]
    assert np.all(np.diff(vals) > 0)
    assert c2_constant(**base, sq_sum=0.0) == pytest.approx(1.0 + 8 * 1.5**2 * 9 / 0.16 * 0.5)


def test_experiment_determinism_and_csv(tmp_path):
    spec = ExperimentSpec("three-node", 1, StepSchedule(300, 0.75), 150, seed0=7)
    a, b = run_experiment(spec), run_experiment(spec)
    assert a.raw_csv() == b.raw_csv() and a.aggregated_csv() == b.aggregated_csv()
    assert a.trials[0].seed == 7


def test_csv_round_trip_and_means():
    spec = ExperimentSpec("three-node", 3, StepSchedule(300, 0.75), 120, seed0=2)
    res = run_experiment(spec)
    raw = parse_raw_csv(res.raw_csv())
    for t in res.trials:
        for alg in spec.algorithms:
            got = raw[(alg, t.trial)]
            assert np.array_equal(got.AE, t.curves[alg].AE) and np.array_equal(got.CE, t.curves[alg].CE)
    agg = parse_aggregated_csv(res.aggregated_csv())
    for alg in spec.algorithms:
        manual = np.mean([raw[(alg, t)].CE for t in range(3)], axis=0)
        assert np.array_equal(agg[alg].CE, res.mean(alg, "CE"))
        assert np.allclose(agg[alg].CE, manual, rtol=1e-15, atol=0)


def test_pool_matches_serial():
    base = ExperimentSpec("five-node", 2, StepSchedule(800, 0.9), 60)
    serial = run_experiment(base)
    pooled = run_experiment(ExperimentSpec("five-node", 2, StepSchedule(800, 0.9), 60, workers=2))
    assert serial.raw_csv() == pooled.raw_csv()


def test_five_node_emits_both_curves(tmp_path):
    res = run_experiment(ExperimentSpec("five-node", 2, StepSchedule(800, 0.9), 300))
    paths = res.write(tmp_path)
    agg = parse_aggregated_csv(paths["aggregated"].read_text())
    assert set(agg) == {"codgrad-matrix", "dgd-cta"}
    s = res.summary()
    assert s["seeds"] == [0, 1] and "verdicts" in s


def test_run_csv_round_trip_and_check(three, three_problem):
    sched = StepSchedule(300, 0.75)
    system = CodedSystem.from_code(three.code, three_problem)
    traj = run(RunConfig("codgrad-node", sched, 150), system)
    rec = parse_run_csv(format_run_csv(traj, sched))
    assert np.array_equal(rec.X, traj.X) and rec.schedule == sched
    reports = check_run(rec, three.code, three_problem)
    assert [r.name for r in reports] == ["consensus", "boundedness", "inexact-gradient"]
    assert all(r.holds for r in reports)


def test_ce_decays_faster_than_ae():
    for name, sched in (("three-node", StepSchedule(300, 0.75)), ("five-node", StepSchedule(800, 0.9))):
        res = run_experiment(ExperimentSpec(name, 2, sched, 2000))
        for alg, rec in res.summary()["algorithms"].items():
            assert rec["CE_tail_slope"] <= rec["AE_tail_slope"], (name, alg)
