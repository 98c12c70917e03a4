"""Values and analytic gradients for every optimization-function kind.

All dose-based kinds see the variables only through d = A x, so their
gradient with respect to x is A^T (df/dd) by the chain rule. Gradients at
the penalty kinks (d exactly at the threshold) take the one-sided
subgradient 0, which keeps the squared-hinge penalties C^1.

Partial sums over an index subset are the unit of distribution: a worker
owning a subset of terms calls the same `weighted_objective_partial` /
`constraint_partial` code the serial path uses over all indices, which is
what makes single-worker runs bit-identical to serial ones.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import model
from .errors import DomainError, EvalError
from .model import FunctionSpec, TreatmentProblem
from .sparse import matvec, matvec_transpose

# exp arguments beyond this overflow float64; surfaced as an error because
# an Inf objective silently poisons line searches
EXP_ARG_LIMIT = 700.0


@dataclass
class FunctionValueGrad:
    value: float
    grad_x: np.ndarray | None = None


@dataclass
class EvalTimer:
    """Accumulates seconds spent in matvec kernels vs dose-to-value work."""

    matvec_seconds: float = 0.0
    dose_eval_seconds: float = 0.0


def _ltcp_from_dose(spec, d, want_grad):
    t = -spec.alpha * (d - spec.dose_target)
    if t.size and float(np.max(t)) > EXP_ARG_LIMIT:
        raise EvalError(
            f"ltcp exponent {float(np.max(t)):.3g} exceeds {EXP_ARG_LIMIT:g}")
    e = np.exp(t)
    n = d.shape[0]
    grad = (-spec.alpha / n) * e if want_grad else None
    return float(e.mean()), grad


def _min_dose_penalty_from_dose(spec, d, want_grad):
    r = np.minimum(d - spec.dose_target, 0.0)
    n = d.shape[0]
    grad = (2.0 / n) * r if want_grad else None
    return float(r @ r) / n, grad


def _max_dose_penalty_from_dose(spec, d, want_grad):
    r = np.maximum(d - spec.dose_target, 0.0)
    n = d.shape[0]
    grad = (2.0 / n) * r if want_grad else None
    return float(r @ r) / n, grad


def _mean_dose_from_dose(spec, d, want_grad):
    n = d.shape[0]
    grad = np.full(n, 1.0 / n) if want_grad else None
    return float(d.mean()), grad


def _generalized_mean_from_dose(spec, d, want_grad):
    a = spec.power
    if np.any(d < 0):
        raise DomainError("generalized mean requires nonnegative dose")
    if a < 1 and np.any(d == 0):
        raise DomainError(
            f"generalized mean with power {a:g} requires strictly positive dose")
    n = d.shape[0]
    powered = d ** a
    s = float(powered.mean())
    if not np.isfinite(s):
        raise EvalError(f"generalized mean overflow (power {a:g})")
    if s == 0.0:
        # all-zero dose with a > 1: value 0, subgradient 0 at the origin
        return 0.0, (np.zeros(n) if want_grad else None)
    value = s ** (1.0 / a)
    grad = (s ** (1.0 / a - 1.0) / n) * d ** (a - 1.0) if want_grad else None
    return value, grad


_FROM_DOSE = {
    model.LTCP: _ltcp_from_dose,
    model.MIN_DOSE_PENALTY: _min_dose_penalty_from_dose,
    model.MAX_DOSE_PENALTY: _max_dose_penalty_from_dose,
    model.MEAN_DOSE: _mean_dose_from_dose,
    model.GENERALIZED_MEAN: _generalized_mean_from_dose,
}


def value_grad_from_dose(spec: FunctionSpec, d: np.ndarray, want_grad: bool):
    """(value, df/dd) for a dose-based term, given the dose vector directly."""
    if spec.kind == model.QUADRATIC:
        raise DomainError("quadratic terms are not functions of dose")
    if d.shape[0] < 1:
        raise DomainError(f"{spec.label()}: empty dose vector")
    return _FROM_DOSE[spec.kind](spec, np.asarray(d, dtype=np.float64), want_grad)


def _eval_quadratic(spec, x, want_grad, timer):
    t0 = time.perf_counter()
    ax = matvec(spec.quad_matrix, x)
    t1 = time.perf_counter()
    value = 0.5 * float(x @ ax) + float(spec.quad_linear @ x) + spec.quad_constant
    t2 = time.perf_counter()
    grad = None
    if want_grad:
        # symmetrized gradient: correct whether or not the matrix is symmetric
        atx = matvec_transpose(spec.quad_matrix, x)
        grad = 0.5 * (ax + atx) + spec.quad_linear
    t3 = time.perf_counter()
    if timer is not None:
        timer.matvec_seconds += (t1 - t0) + (t3 - t2)
        timer.dose_eval_seconds += t2 - t1
    return FunctionValueGrad(value, grad)


def eval_function(spec: FunctionSpec, x: np.ndarray, want_grad: bool = False,
                  timer: EvalTimer | None = None) -> FunctionValueGrad:
    """Evaluate one term at x (without its objective weight or constraint rhs)."""
    if spec.kind == model.QUADRATIC:
        return _eval_quadratic(spec, x, want_grad, timer)
    t0 = time.perf_counter()
    d = matvec(spec.roi.matrix, x)
    t1 = time.perf_counter()
    value, grad_d = _FROM_DOSE[spec.kind](spec, d, want_grad)
    t2 = time.perf_counter()
    grad_x = matvec_transpose(spec.roi.matrix, grad_d) if want_grad else None
    t3 = time.perf_counter()
    if timer is not None:
        timer.matvec_seconds += (t1 - t0) + (t3 - t2)
        timer.dose_eval_seconds += t2 - t1
    return FunctionValueGrad(value, grad_x)


def weighted_objective_partial(problem: TreatmentProblem, indices, x,
                               want_grad: bool = False,
                               timer: EvalTimer | None = None):
    """sum_i w_i f_i(x) over the given objective indices, in ascending order.

    Returns (value, grad_or_None). Term failures are re-raised as EvalError
    tagged with the term index.
    """
    value = 0.0
    grad = np.zeros(problem.num_vars) if want_grad else None
    for idx in indices:
        spec = problem.objectives[idx]
        try:
            fv = eval_function(spec, x, want_grad, timer)
        except EvalError as exc:
            raise EvalError(f"objective {spec.label()}: {exc.message}",
                            term_id=idx) from exc
        except DomainError as exc:
            raise EvalError(f"objective {spec.label()}: {exc}", term_id=idx) from exc
        value += spec.weight * fv.value
        if want_grad:
            grad += spec.weight * fv.grad_x
    return value, grad


def constraint_partial(problem: TreatmentProblem, indices, x,
                       want_grad: bool = False,
                       timer: EvalTimer | None = None):
    """Constraint residuals g_i(x) = f_i(x) - rhs_i for the given indices.

    Returns a list of (index, value, grad_or_None) in ascending index order.
    """
    out = []
    for idx in indices:
        spec = problem.constraints[idx]
        try:
            fv = eval_function(spec, x, want_grad, timer)
        except EvalError as exc:
            raise EvalError(f"constraint {spec.label()}: {exc.message}",
                            term_id=idx) from exc
        except DomainError as exc:
            raise EvalError(f"constraint {spec.label()}: {exc}", term_id=idx) from exc
        out.append((idx, fv.value - spec.rhs, fv.grad_x))
    return out


def eval_weighted_objective(problem: TreatmentProblem, x,
                            want_grad: bool = False) -> FunctionValueGrad:
    """Full weighted objective sum, in objective-list order."""
    value, grad = weighted_objective_partial(
        problem, range(len(problem.objectives)), x, want_grad)
    return FunctionValueGrad(value, grad)


def eval_constraints(problem: TreatmentProblem, x, want_grad: bool = False):
    """All constraint residuals and (optionally) their Jacobian rows.

    Returns (values, rows) where values is a float64 vector in problem order
    and rows is a list of gradient vectors (or None when want_grad=False).
    """
    entries = constraint_partial(problem, range(len(problem.constraints)),
                                 x, want_grad)
    values = np.array([v for _, v, _ in entries], dtype=np.float64)
    rows = [g for _, _, g in entries] if want_grad else None
    return values, rows
