"""Projected L-BFGS with quadratic constraint penalties.

Stands in for a general NLP solver behind a first-order callback boundary:
all it sees of the problem is an engine returning values and gradients. The
nonnegativity bound is enforced by projection, inequality constraints by a
penalty

    Phi(x) = sum_i w_i f_i(x) + mu * sum_i max(g_i(x), 0)^2

whose weight mu grows whenever the worst violation fails to halve over a
check window. Steps come from the standard two-loop recursion with Armijo
backtracking along the projected path; curvature pairs that fail the
positivity safeguard are skipped, and the memory is dropped whenever mu
changes (the merit landscape changes underneath the pairs).
"""

from __future__ import annotations

import csv
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .engine import EngineHandle, EvalResult
from .errors import ConfigError
from .functions import FunctionValueGrad
from .model import LTCP, TreatmentProblem

__all__ = ["SolverConfig", "IterationLog", "SolveResult", "solve",
           "merit_and_grad", "default_start_point", "write_iteration_log"]

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
LINE_SEARCH_FAILURE = "line_search_failure"


@dataclass
class SolverConfig:
    max_iterations: int = 3000  # matches the usual fixed-budget benchmark runs
    grad_tolerance: float = 1e-5
    penalty_weight: float = 10.0
    penalty_growth: float = 10.0
    penalty_check_window: int = 25
    lbfgs_memory: int = 10
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 30
    log_every: int = 1

    def validate(self) -> "SolverConfig":
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.grad_tolerance < 0:
            raise ConfigError("grad_tolerance must be >= 0")
        for name in ("penalty_weight", "penalty_growth", "penalty_check_window",
                     "lbfgs_memory", "armijo_c1", "max_backtracks", "log_every"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not (0.0 < self.backtrack_factor < 1.0):
            raise ConfigError("backtrack_factor must lie in (0, 1)")
        return self


@dataclass
class IterationLog:
    iteration: int
    merit: float
    objective: float
    max_violation: float
    proj_grad_norm: float
    eval_seconds: float
    solver_seconds_cum: float
    eval_seconds_cum: float


@dataclass
class SolveResult:
    x: np.ndarray
    log: list
    status: str
    iterations: int
    merit: float
    objective: float
    max_violation: float
    wall_seconds: float = 0.0
    eval_seconds: float = 0.0
    solver_seconds: float = 0.0


@dataclass
class _Merit:
    value: float
    grad: np.ndarray | None
    objective: float
    max_violation: float
    eval_result: EvalResult


def _merit_from_eval(res: EvalResult, mu: float, want_grad: bool) -> _Merit:
    viol = np.maximum(res.constraint_values, 0.0)
    value = res.objective + mu * float(viol @ viol)
    grad = None
    if want_grad:
        grad = res.objective_grad.copy()
        for v, row in zip(viol, res.constraint_jacobian):
            if v > 0.0:
                grad += (2.0 * mu * v) * row
    max_violation = float(viol.max()) if viol.size else 0.0
    return _Merit(value, grad, res.objective, max_violation, res)


def merit_and_grad(problem: TreatmentProblem, engine: EngineHandle,
                   x: np.ndarray, mu: float,
                   want_grad: bool = True) -> FunctionValueGrad:
    """Penalized merit and its gradient from a single evaluate() call."""
    res = engine.evaluate(x, want_grad)
    m = _merit_from_eval(res, mu, want_grad)
    return FunctionValueGrad(m.value, m.grad)


def default_start_point(problem: TreatmentProblem) -> np.ndarray:
    """Uniform positive start giving target doses near prescription.

    Scales so the target ROI's mean row sum maps x = x0 to roughly the
    LTCP prescription dose; falls back to 1.0 when no target/LTCP exists.
    Clipped below at 1e-3 to stay strictly positive.
    """
    scale = None
    for spec in problem.objectives:
        if spec.kind == LTCP and spec.roi is not None:
            a = spec.roi.matrix
            if a.rows > 0 and a.nnz > 0:
                mean_row_sum = float(a.values.sum()) / a.rows
                if mean_row_sum > 0:
                    scale = spec.dose_target / mean_row_sum
            break
    if scale is None:
        scale = 1.0
    return np.full(problem.num_vars, max(scale, 1e-3))


def _projected_gradient_norm(x: np.ndarray, grad: np.ndarray) -> float:
    """Inf-norm of the gradient projected onto the feasible directions at x."""
    pg = np.where(x > 0.0, grad, np.minimum(grad, 0.0))
    return float(np.abs(pg).max()) if pg.size else 0.0


def _two_loop_direction(memory: deque, grad: np.ndarray) -> np.ndarray:
    """H * grad via the L-BFGS two-loop recursion; returns grad itself when empty."""
    if not memory:
        return grad.copy()
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(memory):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = memory[-1]
    q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(memory, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


class _Clock:
    """Wall / evaluation time split for the iteration log."""

    def __init__(self):
        self.start = time.perf_counter()
        self.eval_seconds = 0.0
        self.last_eval_seconds = 0.0

    def timed_eval(self, fn):
        t0 = time.perf_counter()
        out = fn()
        dt = time.perf_counter() - t0
        self.eval_seconds += dt
        self.last_eval_seconds = dt
        return out

    @property
    def solver_seconds(self):
        return (time.perf_counter() - self.start) - self.eval_seconds


def solve(problem: TreatmentProblem, engine: EngineHandle,
          cfg: SolverConfig | None = None,
          x0: np.ndarray | None = None,
          callback=None, log_sink=None) -> SolveResult:
    """Minimize the weighted objective s.t. g_i(x) <= 0, x >= 0.

    Terminates on projected-gradient norm <= cfg.grad_tolerance or after
    cfg.max_iterations. On a failed line search the best (current) iterate
    is returned with status "line_search_failure". callback, when given,
    receives (iteration, x) after every accepted step; log_sink receives
    each IterationLog row as it is produced (see IterationLogWriter).
    """
    cfg = (cfg or SolverConfig()).validate()
    clock = _Clock()
    x = np.maximum(np.asarray(x0 if x0 is not None else default_start_point(problem),
                              dtype=np.float64), 0.0)
    mu = cfg.penalty_weight
    memory: deque = deque(maxlen=cfg.lbfgs_memory)
    log: list[IterationLog] = []

    def evaluate_merit(xv, want_grad=True):
        res = clock.timed_eval(lambda: engine.evaluate(xv, want_grad))
        return _merit_from_eval(res, mu, want_grad)

    current = evaluate_merit(x)
    window_ref_violation = current.max_violation
    status = MAX_ITERATIONS
    iteration = 0

    def log_row(it):
        if it % cfg.log_every == 0 or it == cfg.max_iterations:
            row = IterationLog(
                iteration=it, merit=current.value, objective=current.objective,
                max_violation=current.max_violation,
                proj_grad_norm=_projected_gradient_norm(x, current.grad),
                eval_seconds=clock.last_eval_seconds,
                solver_seconds_cum=clock.solver_seconds,
                eval_seconds_cum=clock.eval_seconds)
            log.append(row)
            if log_sink is not None:
                log_sink(row)

    def backtrack(base_x, base_merit, grad, direction, step):
        """Armijo search along the projected path; (x, merit) or (None, None)."""
        for bt in range(cfg.max_backtracks + 1):
            x_trial = np.maximum(base_x + step * direction, 0.0)
            actual = x_trial - base_x
            if not np.any(actual):
                return None, None  # every component blocked by the bound
            # speculative gradient on the first trial, which is usually accepted
            trial = evaluate_merit(x_trial, want_grad=bt == 0)
            if trial.value <= base_merit + cfg.armijo_c1 * float(grad @ actual):
                return x_trial, trial
            step *= cfg.backtrack_factor
        return None, None

    log_row(0)
    for iteration in range(1, cfg.max_iterations + 1):
        grad = current.grad
        if _projected_gradient_norm(x, grad) <= cfg.grad_tolerance:
            status = CONVERGED
            iteration -= 1
            break

        grad_step = 1.0 / max(1.0, float(np.abs(grad).max()))
        direction = -_two_loop_direction(memory, grad)
        if memory and float(direction @ grad) < 0.0:
            accepted, trial_merit = backtrack(x, current.value, grad, direction, 1.0)
        else:
            accepted, trial_merit = None, None
        if accepted is None:
            # steepest-descent restart: quasi-Newton direction unusable
            memory.clear()
            accepted, trial_merit = backtrack(x, current.value, grad,
                                              -grad, grad_step)
        if accepted is None:
            status = LINE_SEARCH_FAILURE
            iteration -= 1
            break
        if trial_merit.grad is None:
            trial_merit = evaluate_merit(accepted)

        s = accepted - x
        y = trial_merit.grad - grad
        sy = float(s @ y)
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            memory.append((s, y, 1.0 / sy))
        x = accepted
        current = trial_merit
        if callback is not None:
            callback(iteration, x)
        log_row(iteration)

        if iteration % cfg.penalty_check_window == 0:
            # grow mu when the worst violation failed to halve; the 1e-8
            # floor keeps mu finite once violations are numerically zero
            if current.max_violation > max(0.5 * window_ref_violation, 1e-8):
                mu *= cfg.penalty_growth
                memory.clear()
                current = _merit_from_eval(current.eval_result, mu, True)
            window_ref_violation = current.max_violation

    if status == MAX_ITERATIONS and \
            _projected_gradient_norm(x, current.grad) <= cfg.grad_tolerance:
        status = CONVERGED
    return SolveResult(x=x, log=log, status=status, iterations=iteration,
                       merit=current.value, objective=current.objective,
                       max_violation=current.max_violation,
                       wall_seconds=time.perf_counter() - clock.start,
                       eval_seconds=clock.eval_seconds,
                       solver_seconds=clock.solver_seconds)


_LOG_COLUMNS = ("iteration", "merit", "objective", "max_violation",
                "proj_grad_norm", "eval_seconds", "solver_seconds_cum",
                "eval_seconds_cum")


def _format_row(row: IterationLog) -> list:
    return ([row.iteration]
            + [f"{v:.17g}" for v in (row.merit, row.objective,
                                     row.max_violation, row.proj_grad_norm)]
            + [f"{v:.6f}" for v in (row.eval_seconds, row.solver_seconds_cum,
                                    row.eval_seconds_cum)])


class IterationLogWriter:
    """Streams iteration rows to a CSV file as the solver produces them.

    Pass as solve()'s log_sink; usable as a context manager.
    """

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(_LOG_COLUMNS)

    def __call__(self, row: IterationLog) -> None:
        self._writer.writerow(_format_row(row))
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def write_iteration_log(log, path) -> None:
    """Iteration log as CSV; value columns use full float precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_LOG_COLUMNS)
        for row in log:
            writer.writerow(_format_row(row))
