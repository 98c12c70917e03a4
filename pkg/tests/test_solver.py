import csv

import numpy as np
import pytest

from helpers import (RecordingEngine, central_diff_grad, dense_roi,
                     grad_close, quadratic_problem)
from rtopt.engine import start_workers
from rtopt.errors import ConfigError
from rtopt.functions import eval_weighted_objective
from rtopt.model import (CONSTRAINT, OBJECTIVE, FunctionSpec, GeneratorConfig,
                         TreatmentProblem, generate)
from rtopt.partition import partition_problem
from rtopt.solver import (SolverConfig, default_start_point, merit_and_grad,
                          solve, write_iteration_log)


def solve_serial(problem, cfg=None, x0=None, callback=None):
    with start_workers(problem) as engine:
        return solve(problem, engine, cfg, x0=x0, callback=callback)


def test_recovers_interior_quadratic_minimum():
    # 1/2 * 2x^2 - 2x = x^2 - 2x has its minimum at x = 1
    p = quadratic_problem([[2.0]], [-2.0], 0.0)
    res = solve_serial(p, SolverConfig(max_iterations=100, grad_tolerance=1e-9),
                       x0=np.array([0.5]))
    assert res.x == pytest.approx([1.0], abs=1e-6)
    assert res.status == "converged"


def test_bound_becomes_active():
    # (x+1)^2 over x >= 0 pins the solution at the boundary
    p = quadratic_problem([[2.0]], [2.0], 1.0)
    res = solve_serial(p, SolverConfig(max_iterations=100, grad_tolerance=1e-9),
                       x0=np.array([0.5]))
    assert res.x == pytest.approx([0.0], abs=1e-12)


def test_multivariate_quadratic(rng):
    n = 6
    m = rng.normal(size=(n, n))
    a = m @ m.T + n * np.eye(n)  # symmetric positive definite
    x_star = rng.uniform(0.5, 2.0, n)  # interior optimum
    b = -a @ x_star
    p = quadratic_problem(a, b, 0.0)
    res = solve_serial(p, SolverConfig(max_iterations=300, grad_tolerance=1e-10),
                       x0=np.full(n, 1.0))
    assert np.allclose(res.x, x_star, atol=1e-6)


def test_iterates_stay_nonnegative(small_problem):
    rec = RecordingEngine(start_workers(small_problem))
    with rec:
        solve(small_problem, rec, SolverConfig(max_iterations=40,
                                               grad_tolerance=0.0))
    assert rec.xs, "no evaluations recorded"
    for x in rec.xs:
        assert np.all(x >= 0.0)


def test_merit_with_zero_penalty_is_objective(small_problem):
    x = np.abs(np.random.default_rng(0).normal(1.0, 0.2, small_problem.num_vars))
    with start_workers(small_problem) as engine:
        merit = merit_and_grad(small_problem, engine, x, mu=0.0)
    direct = eval_weighted_objective(small_problem, x, want_grad=True)
    assert merit.value == direct.value
    assert np.allclose(merit.grad_x, direct.grad_x, rtol=1e-14)


def test_merit_equals_objective_when_feasible():
    roi = dense_roi("r", np.eye(3))
    mean = FunctionSpec(kind="mean_dose", role=OBJECTIVE, roi=roi, weight=1.0)
    relaxed = FunctionSpec(kind="max_dose_penalty", role=CONSTRAINT, roi=roi,
                           rhs=1000.0, dose_target=0.0)
    p = TreatmentProblem(num_vars=3, rois=[roi], objectives=[mean],
                         constraints=[relaxed]).validate()
    x = np.array([1.0, 2.0, 3.0])
    with start_workers(p) as engine:
        merit = merit_and_grad(p, engine, x, mu=50.0)
    assert merit.value == pytest.approx(2.0)  # mean dose only


def test_merit_gradient_matches_finite_differences(small_problem):
    x = np.abs(np.random.default_rng(3).normal(1.0, 0.2, small_problem.num_vars))
    mu = 5.0
    with start_workers(small_problem) as engine:
        merit = merit_and_grad(small_problem, engine, x, mu)
        fd = central_diff_grad(
            lambda xv: merit_and_grad(small_problem, engine, xv, mu,
                                      want_grad=False).value, x)
    assert grad_close(merit.grad_x, fd)


def test_merit_non_increasing_at_fixed_mu(small_problem):
    cfg = SolverConfig(max_iterations=120, grad_tolerance=0.0)
    res = solve_serial(small_problem, cfg)
    merits = [(row.iteration, row.merit) for row in res.log]
    # mu may grow right after iterations divisible by penalty_check_window,
    # lifting the merit; every other consecutive pair shares one mu and must
    # not increase
    window = cfg.penalty_check_window
    for (i1, m1), (i2, m2) in zip(merits, merits[1:]):
        if i1 == 0 or i1 % window != 0:
            assert m2 <= m1 + 1e-9 * max(1.0, abs(m1))


def test_generated_convex_problem_reaches_feasibility():
    # mean-dose objectives plus one max-dose-penalty constraint
    base = generate(GeneratorConfig(num_vars=80, num_rois=5,
                                    nnz_range=(100, 2000), seed=21))
    rois = base.rois
    objectives = [FunctionSpec(kind="mean_dose", role=OBJECTIVE, roi=r,
                               weight=0.1 * (i + 1))
                  for i, r in enumerate(rois)]
    constraints = [FunctionSpec(kind="max_dose_penalty", role=CONSTRAINT,
                                roi=rois[0], rhs=1.0, dose_target=30.0)]
    p = TreatmentProblem(num_vars=base.num_vars, rois=rois,
                         objectives=objectives,
                         constraints=constraints).validate()
    res = solve_serial(p, SolverConfig(max_iterations=500, grad_tolerance=1e-7))
    assert res.merit <= res.log[0].merit
    assert res.max_violation <= 1e-4
    assert res.iterations <= 500


def test_distributed_iterates_match_serial():
    # unconstrained problem: no penalty-window or backtrack decision flips,
    # so trajectories differ only by floating-point reduction order
    p = generate(GeneratorConfig(num_vars=60, num_rois=8, nnz_range=(100, 3000),
                                 seed=2, fraction_constraints=0.0))
    p.constraints.clear()
    cfg = SolverConfig(max_iterations=52, grad_tolerance=0.0)

    def run(k):
        xs = []
        asg = partition_problem(p, k) if k else None
        with start_workers(p, asg, "in_process") as engine:
            solve(p, engine, cfg, callback=lambda it, x: xs.append(x.copy()))
        return xs

    serial = run(0)
    for k in (2, 4):
        dist = run(k)
        assert len(dist) >= 50 and len(serial) >= 50
        for a, b in zip(serial[:50], dist[:50]):
            assert np.abs(a - b).max() <= 1e-8 * max(1.0, np.abs(a).max())


def test_default_start_point_lands_near_prescription(small_problem):
    x0 = default_start_point(small_problem)
    assert np.all(x0 > 0)
    target = small_problem.rois[0]
    from rtopt.sparse import matvec

    dose = matvec(target.matrix, x0)
    dhat = small_problem.objectives[0].dose_target
    assert 0.5 * dhat <= dose.mean() <= 1.5 * dhat


def test_time_split_accounts_for_wall_time(small_problem):
    res = solve_serial(small_problem, SolverConfig(max_iterations=30,
                                                   grad_tolerance=0.0))
    assert res.eval_seconds > 0 and res.solver_seconds >= 0
    total = res.eval_seconds + res.solver_seconds
    assert total == pytest.approx(res.wall_seconds, rel=0.05)


def test_iteration_log_csv(tmp_path, small_problem):
    res = solve_serial(small_problem, SolverConfig(max_iterations=10,
                                                   grad_tolerance=0.0))
    path = tmp_path / "log.csv"
    write_iteration_log(res.log, path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(res.log)
    assert float(rows[-1]["merit"]) == res.log[-1].merit
    iters = [int(r["iteration"]) for r in rows]
    assert iters == sorted(iters)


def test_solver_config_validation():
    with pytest.raises(ConfigError):
        SolverConfig(max_iterations=0).validate()
    with pytest.raises(ConfigError):
        SolverConfig(backtrack_factor=1.0).validate()
    with pytest.raises(ConfigError):
        SolverConfig(lbfgs_memory=0).validate()
