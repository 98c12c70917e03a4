import numpy as np

from rtopt.bench import run_bench
from rtopt.partition import partition_problem
from rtopt.plots import plot_bench, plot_dvh, plot_partition
from rtopt.quality import dvh


def test_dvh_plot_with_comparison(small_problem, tmp_path):
    c1 = dvh(small_problem, np.ones(small_problem.num_vars), grid_points=20)
    c2 = dvh(small_problem, 0.5 * np.ones(small_problem.num_vars), grid_points=20)
    path = tmp_path / "dvh.png"
    plot_dvh(c1, path, compare=c2, labels=("ours", "ref"))
    assert path.stat().st_size > 1000


def test_partition_plot(small_problem, tmp_path):
    asg = partition_problem(small_problem, 3)
    obj = [(i, s.nnz_weight()) for i, s in enumerate(small_problem.objectives)]
    cons = [(i, s.nnz_weight()) for i, s in enumerate(small_problem.constraints)]
    path = tmp_path / "partition.png"
    plot_partition(asg, obj, cons, path)
    assert path.stat().st_size > 1000


def test_bench_plot(small_problem, tmp_path):
    report = run_bench(small_problem, [0, 1], repeats=1, iterations=2)
    path = tmp_path / "bench.png"
    plot_bench(report, path)
    assert path.stat().st_size > 1000
