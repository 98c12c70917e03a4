import csv

import numpy as np
import pytest

from helpers import dense_roi
from rtopt.errors import DomainError
from rtopt.model import OBJECTIVE, FunctionSpec, TreatmentProblem
from rtopt.quality import (dvh, export_dvh_comparison_csv, export_dvh_csv,
                           plan_metrics, volume_at_dose)
from rtopt.sparse import matvec


def brute_force_volume(d, level):
    count = 0
    for di in d:
        if di >= level:
            count += 1
    return count / len(d)


def roi_problem(dense_rows):
    rois = [dense_roi(f"roi_{i}", rows) for i, rows in enumerate(dense_rows)]
    objectives = [FunctionSpec(kind="mean_dose", role=OBJECTIVE, roi=rois[0],
                               weight=1.0)]
    num_vars = np.asarray(dense_rows[0]).shape[1]
    return TreatmentProblem(num_vars=num_vars, rois=rois,
                            objectives=objectives, constraints=[]).validate()


def test_volume_at_dose_half():
    assert volume_at_dose(np.array([1.0, 2.0, 3.0, 4.0]), 2.5) == 0.5


def test_volume_at_dose_zero_level_covers_everything():
    assert volume_at_dose(np.array([0.0, 1.0, 5.0]), 0.0) == 1.0


def test_volume_at_dose_ties_count_as_covered():
    assert volume_at_dose(np.array([2.0, 2.0, 1.0]), 2.0) == pytest.approx(2 / 3)


def test_volume_at_dose_empty_is_an_error():
    with pytest.raises(DomainError):
        volume_at_dose(np.array([]), 1.0)


def test_volume_at_dose_matches_brute_force(rng):
    for _ in range(100):
        n = int(rng.integers(1, 40))
        d = rng.uniform(0.0, 10.0, n)
        level = float(rng.uniform(-1.0, 11.0))
        assert volume_at_dose(d, level) == brute_force_volume(d, level)


def test_volume_at_dose_non_increasing_in_level(rng):
    d = rng.uniform(0.0, 10.0, 30)
    levels = np.sort(rng.uniform(0.0, 12.0, 20))
    values = [volume_at_dose(d, t) for t in levels]
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_dvh_at_zero_intensity():
    p = roi_problem([np.eye(3), np.full((2, 3), 0.5)])
    curves = dvh(p, np.zeros(3), grid_points=50)
    for curve in curves:
        assert curve.volume_fraction[0] == 1.0  # everything gets >= 0 dose
        assert np.all(curve.volume_fraction[1:] == 0.0)


def test_dvh_single_voxel_is_a_step():
    p = roi_problem([[[10.0]]])
    curves = dvh(p, np.ones(1), grid_points=100)
    curve = curves[0]
    below = curve.dose_grid <= 10.0
    assert np.all(curve.volume_fraction[below] == 1.0)
    assert np.all(curve.volume_fraction[~below] == 0.0)
    assert curve.dose_grid[-1] == pytest.approx(10.5)  # 1.05 * peak


def test_dvh_matches_pointwise_oracle(small_problem, rng):
    x = rng.uniform(0.0, 2.0, small_problem.num_vars)
    curves = dvh(small_problem, x, grid_points=40)
    assert len(curves) == len(small_problem.rois)
    for roi, curve in zip(small_problem.rois, curves):
        d = matvec(roi.matrix, x)
        for level, vf in zip(curve.dose_grid, curve.volume_fraction):
            assert vf == volume_at_dose(d, level)


def test_dvh_curves_are_monotone(small_problem, rng):
    x = rng.uniform(0.0, 2.0, small_problem.num_vars)
    for curve in dvh(small_problem, x, grid_points=64):
        assert np.all(np.diff(curve.volume_fraction) <= 0)
        assert curve.volume_fraction[0] == 1.0
        assert len(curve.dose_grid) == 64


def test_dvh_invariant_under_voxel_permutation(rng):
    dense = rng.uniform(0.0, 1.0, (9, 4))
    x = rng.uniform(0.5, 1.5, 4)
    c1 = dvh(roi_problem([dense]), x, grid_points=30)[0]
    c2 = dvh(roi_problem([dense[rng.permutation(9)]]), x, grid_points=30)[0]
    assert np.array_equal(c1.volume_fraction, c2.volume_fraction)


def test_volume_drops_past_a_voxel_dose(rng):
    dense = rng.uniform(0.2, 1.0, (8, 3))
    x = rng.uniform(0.5, 1.5, 3)
    d = dense @ x
    n = len(d)
    for di in d:
        before = brute_force_volume(d, di)
        after = brute_force_volume(d, np.nextafter(di, np.inf))
        assert before - after >= 1.0 / n


def test_plan_metrics():
    p = roi_problem([np.diag([1.0, 2.0, 3.0])])
    metrics = plan_metrics(p, np.ones(3))
    m = metrics["roi_0"]
    assert (m.min_dose, m.max_dose, m.mean_dose) == (1.0, 3.0, 2.0)


def test_plan_metrics_match_oracle(small_problem, rng):
    x = rng.uniform(0.0, 2.0, small_problem.num_vars)
    metrics = plan_metrics(small_problem, x)
    for roi in small_problem.rois:
        d = matvec(roi.matrix, x)
        m = metrics[roi.name]
        assert m.min_dose == d.min()
        assert m.max_dose == d.max()
        assert m.mean_dose == pytest.approx(d.mean(), rel=1e-15)


def test_csv_export_schema(tmp_path, small_problem):
    curves = dvh(small_problem, np.ones(small_problem.num_vars), grid_points=10)
    path = tmp_path / "dvh.csv"
    export_dvh_csv(curves, path, plan_label="test")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    assert header == ["roi", "dose", "volume_fraction", "plan_label"]
    assert len(rows) == len(small_problem.rois) * 10
    assert all(r[3] == "test" for r in rows)
    # 9 significant digits, parseable floats
    for r in rows[:20]:
        float(r[1]), float(r[2])
        assert len(r[1].replace(".", "").replace("-", "").lstrip("0")) <= 10


def test_csv_export_is_deterministic(tmp_path, small_problem):
    curves = dvh(small_problem, np.ones(small_problem.num_vars), grid_points=10)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    export_dvh_csv(curves, p1)
    export_dvh_csv(curves, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_comparison_export(tmp_path, small_problem):
    x1 = np.ones(small_problem.num_vars)
    x2 = 0.5 * x1
    c1 = dvh(small_problem, x1, grid_points=8)
    c2 = dvh(small_problem, x2, grid_points=8)
    path = tmp_path / "cmp.csv"
    export_dvh_comparison_csv(c1, "ours", c2, "reference", path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    labels = {r["plan_label"] for r in rows}
    assert labels == {"ours", "reference"}
    assert len(rows) == 2 * len(small_problem.rois) * 8
