"""Dose-volume histograms and per-ROI dose metrics.

The volume-at-dose V(t) of an ROI is the fraction of its voxels receiving
at least dose t (ties count as covered). A DVH samples V on an ascending
dose grid, one curve per ROI, which is the standard way to eyeball and
compare plan quality.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .model import TreatmentProblem
from .sparse import matvec

__all__ = ["DvhCurve", "DoseMetrics", "volume_at_dose", "dvh",
           "plan_metrics", "export_dvh_csv", "export_dvh_comparison_csv"]

DEFAULT_GRID_POINTS = 200


@dataclass
class DvhCurve:
    roi_name: str
    dose_grid: np.ndarray
    volume_fraction: np.ndarray


@dataclass
class DoseMetrics:
    min_dose: float
    max_dose: float
    mean_dose: float


def volume_at_dose(d: np.ndarray, dose_level: float) -> float:
    """Fraction of voxels with dose >= dose_level."""
    d = np.asarray(d, dtype=np.float64)
    if d.size < 1:
        raise DomainError("volume_at_dose needs at least one voxel")
    return float(np.count_nonzero(d >= dose_level)) / d.size


def _curve(name: str, d: np.ndarray, grid: np.ndarray) -> DvhCurve:
    d_sorted = np.sort(d)
    covered = d.size - np.searchsorted(d_sorted, grid, side="left")
    return DvhCurve(name, grid, covered / d.size)


def dvh(problem: TreatmentProblem, x: np.ndarray,
        grid_points: int = DEFAULT_GRID_POINTS) -> list:
    """One curve per ROI on a shared grid spanning 1.05x the peak dose."""
    doses = [matvec(roi.matrix, x) for roi in problem.rois]
    peak = max((float(d.max()) for d in doses if d.size), default=0.0)
    upper = 1.05 * peak if peak > 0 else 1.0
    grid = np.linspace(0.0, upper, grid_points)
    return [_curve(roi.name, d, grid)
            for roi, d in zip(problem.rois, doses)]


def plan_metrics(problem: TreatmentProblem, x: np.ndarray) -> dict:
    """Per-ROI min/max/mean dose, keyed by ROI name."""
    out = {}
    for roi in problem.rois:
        d = matvec(roi.matrix, x)
        if d.size < 1:
            raise DomainError(f"roi {roi.name!r} has no voxels")
        out[roi.name] = DoseMetrics(min_dose=float(d.min()),
                                    max_dose=float(d.max()),
                                    mean_dose=float(d.mean()))
    return out


_CSV_HEADER = ("roi", "dose", "volume_fraction", "plan_label")


def _write_rows(writer, curves, label):
    for curve in curves:
        for dose, vf in zip(curve.dose_grid, curve.volume_fraction):
            writer.writerow([curve.roi_name, f"{dose:.9g}", f"{vf:.9g}", label])


def export_dvh_csv(curves, path, plan_label: str = "plan") -> None:
    """Long-format CSV: roi, dose, volume_fraction, plan_label."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        _write_rows(writer, curves, plan_label)


def export_dvh_comparison_csv(curves_a, label_a, curves_b, label_b, path) -> None:
    """Two plans side by side in one CSV, distinguished by plan_label."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        _write_rows(writer, curves_a, label_a)
        _write_rows(writer, curves_b, label_b)
