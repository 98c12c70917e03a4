"""Shared test utilities: oracles and small problem builders."""

import numpy as np

from rtopt.model import (CONSTRAINT, OBJECTIVE, QUADRATIC, FunctionSpec, Roi,
                         TreatmentProblem)
from rtopt.sparse import from_dense


def central_diff_grad(f, x, rel_h=1e-5):
    """Central finite differences with h = rel_h * max(1, |x_j|) per coordinate."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for j in range(x.size):
        h = rel_h * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        g[j] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def grad_close(analytic, fd, tol=1e-6):
    """Gradient agreement: worst element error relative to the gradient scale."""
    analytic = np.asarray(analytic)
    fd = np.asarray(fd)
    scale = max(1.0, float(np.abs(analytic).max(initial=0.0)))
    return float(np.abs(analytic - fd).max(initial=0.0)) <= tol * scale


def dense_roi(name, dense, kind="organ_at_risk"):
    """Roi wrapping a dense matrix."""
    m = from_dense(dense)
    return Roi(name=name, kind=kind, voxel_count=m.rows, matrix=m)


def single_roi_problem(dense, spec_kwargs, num_vars=None, role=OBJECTIVE,
                       weight=1.0, rhs=0.0):
    """One-ROI problem with a single function term on it."""
    dense = np.asarray(dense, dtype=np.float64)
    num_vars = num_vars or dense.shape[1]
    roi = dense_roi("roi", dense)
    if role == OBJECTIVE:
        spec = FunctionSpec(role=OBJECTIVE, roi=roi, weight=weight, **spec_kwargs)
        return TreatmentProblem(num_vars=num_vars, rois=[roi],
                                objectives=[spec], constraints=[]).validate()
    spec = FunctionSpec(role=CONSTRAINT, roi=roi, rhs=rhs, **spec_kwargs)
    mean = FunctionSpec(kind="mean_dose", role=OBJECTIVE, roi=roi, weight=1.0)
    return TreatmentProblem(num_vars=num_vars, rois=[roi],
                            objectives=[mean], constraints=[spec]).validate()


def quadratic_problem(a, b, c, weight=1.0):
    """Pure-quadratic problem: minimize weight * (x^T A x / 2 + b^T x + c)."""
    b = np.asarray(b, dtype=np.float64)
    spec = FunctionSpec(kind=QUADRATIC, role=OBJECTIVE, weight=weight,
                        quad_matrix=from_dense(a), quad_linear=b,
                        quad_constant=float(c))
    return TreatmentProblem(num_vars=b.shape[0], rois=[], objectives=[spec],
                            constraints=[]).validate()


class RecordingEngine:
    """Engine proxy capturing every x passed to evaluate()."""

    def __init__(self, inner):
        self.inner = inner
        self.xs = []

    @property
    def num_workers(self):
        return self.inner.num_workers

    def evaluate(self, x, want_grad=True):
        self.xs.append(np.array(x))
        return self.inner.evaluate(x, want_grad)

    def shutdown(self):
        return self.inner.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()
        return False
