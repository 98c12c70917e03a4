"""Wall-clock scaling benchmark with an Amdahl's-law reference.

Each worker count runs the solver for a fixed iteration budget several
times; the serial (K = 0) run supplies the solver/evaluation time split
from which the Amdahl prediction for every K is derived. A warm-up run
is discarded so kernel compilation and caches do not pollute the numbers.
"""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, field

import numpy as np

from .engine import amdahl_predict, start_workers
from .errors import ConfigError
from .model import TreatmentProblem
from .partition import partition_problem
from .solver import SolverConfig, solve

__all__ = ["BenchRow", "BenchReport", "run_bench", "write_bench_csv"]


@dataclass
class BenchRow:
    workers: int
    repeats: int
    mean_wall_seconds: float
    std_wall_seconds: float
    mean_eval_seconds: float
    mean_solver_seconds: float
    amdahl_seconds: float
    speedup_vs_serial: float


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)
    iterations: int = 0
    serial_eval_fraction: float = 0.0


def _one_run(problem, num_workers, transport, iterations, x0):
    assignment = partition_problem(problem, num_workers) if num_workers else None
    cfg = SolverConfig(max_iterations=iterations, grad_tolerance=0.0,
                       log_every=max(1, iterations))
    with start_workers(problem, assignment, transport) as engine:
        result = solve(problem, engine, cfg, x0=x0)
    return result.wall_seconds, result.eval_seconds, result.solver_seconds


def run_bench(problem: TreatmentProblem, worker_counts, repeats: int,
              iterations: int, transport: str = "in_process",
              x0: np.ndarray | None = None, warmup: bool = True) -> BenchReport:
    """Benchmark the given worker counts; K = 0 is always run as the baseline."""
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    if iterations < 1:
        raise ConfigError("iterations must be >= 1")
    counts = sorted(set(int(k) for k in worker_counts) | {0})

    if warmup:
        _one_run(problem, max(counts), transport, min(iterations, 3), x0)

    measured = {}
    for k in counts:
        runs = [_one_run(problem, k, transport, iterations, x0)
                for _ in range(repeats)]
        walls = [r[0] for r in runs]
        measured[k] = (
            statistics.mean(walls),
            statistics.stdev(walls) if len(walls) > 1 else 0.0,
            statistics.mean(r[1] for r in runs),
            statistics.mean(r[2] for r in runs),
        )

    base_wall, _, base_eval, base_solver = measured[0]
    report = BenchReport(iterations=iterations,
                         serial_eval_fraction=base_eval / base_wall)
    for k in counts:
        wall, std, eval_s, solver_s = measured[k]
        report.rows.append(BenchRow(
            workers=k, repeats=repeats,
            mean_wall_seconds=wall, std_wall_seconds=std,
            mean_eval_seconds=eval_s, mean_solver_seconds=solver_s,
            amdahl_seconds=amdahl_predict(base_solver, base_eval, max(k, 1)),
            speedup_vs_serial=base_wall / wall))
    return report


_CSV_COLUMNS = ("workers", "repeats", "mean_wall_seconds", "std_wall_seconds",
                "mean_eval_seconds", "mean_solver_seconds", "amdahl_seconds",
                "speedup_vs_serial")


def write_bench_csv(report: BenchReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_COLUMNS)
        for row in report.rows:
            writer.writerow([row.workers, row.repeats]
                            + [f"{getattr(row, c):.6f}" for c in _CSV_COLUMNS[2:]])
