import csv

import pytest

from rtopt.bench import run_bench, write_bench_csv
from rtopt.engine import amdahl_predict
from rtopt.errors import ConfigError
from rtopt.model import GeneratorConfig, generate


@pytest.fixture(scope="module")
def bench_problem():
    return generate(GeneratorConfig(num_vars=100, num_rois=6,
                                    nnz_range=(200, 5000), seed=4))


def test_serial_only_bench_has_unit_speedup(bench_problem):
    report = run_bench(bench_problem, [0], repeats=2, iterations=3)
    assert len(report.rows) == 1
    row = report.rows[0]
    assert row.workers == 0
    assert row.speedup_vs_serial == 1.0
    assert row.amdahl_seconds == amdahl_predict(row.mean_solver_seconds,
                                                row.mean_eval_seconds, 1)


def test_bench_always_includes_serial_baseline(bench_problem):
    report = run_bench(bench_problem, [2], repeats=1, iterations=3)
    assert [r.workers for r in report.rows] == [0, 2]
    base = report.rows[0]
    for row in report.rows:
        assert row.amdahl_seconds == pytest.approx(
            amdahl_predict(base.mean_solver_seconds, base.mean_eval_seconds,
                           max(row.workers, 1)))
        assert row.speedup_vs_serial == pytest.approx(
            base.mean_wall_seconds / row.mean_wall_seconds)


def test_bench_rejects_bad_arguments(bench_problem):
    with pytest.raises(ConfigError):
        run_bench(bench_problem, [0], repeats=0, iterations=3)
    with pytest.raises(ConfigError):
        run_bench(bench_problem, [0], repeats=1, iterations=0)


def test_bench_csv_round_trip(bench_problem, tmp_path):
    report = run_bench(bench_problem, [0, 1], repeats=1, iterations=3)
    path = tmp_path / "bench.csv"
    write_bench_csv(report, path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["workers"]) for r in rows] == [0, 1]
    for got, row in zip(rows, report.rows):
        assert float(got["mean_wall_seconds"]) == pytest.approx(
            row.mean_wall_seconds, abs=1e-6)
        assert float(got["speedup_vs_serial"]) == pytest.approx(
            row.speedup_vs_serial, abs=1e-6)
