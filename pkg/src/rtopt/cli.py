"""Command-line interface.

Subcommands: generate, partition, evaluate, optimize, dvh, bench, and the
internal worker entry used by the socket transport (the leader self-execs
this binary so one executable serves both roles). Report commands write CSV
and, unless --no-plot is given, a PNG figure next to it.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import fileio, quality, solver
from .engine import run_socket_worker, start_workers
from .errors import RtoptError
from .model import GeneratorConfig, generate
from .partition import partition_problem

TRANSPORTS = {"inproc": "in_process", "socket": "socket"}


def _parse_nnz_range(text: str):
    try:
        lo, hi = (float(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected MIN,MAX (e.g. 1e2,1e5), got {text!r}")
    return lo, hi


def _parse_hostport(text: str):
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def _parse_worker_list(text: str):
    try:
        return [int(part) for part in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected K0,K1,... got {text!r}")


def _figure_path(out: str) -> Path:
    return Path(out).with_suffix(".png")


def _load_x(args, problem) -> np.ndarray:
    if getattr(args, "x", None):
        x = fileio.read_vector(args.x)
        return x
    return np.zeros(problem.num_vars)


def cmd_generate(args) -> int:
    cfg = GeneratorConfig(num_vars=args.num_vars, num_rois=args.rois,
                          nnz_range=args.nnz_range, seed=args.seed,
                          fraction_constraints=args.fraction_constraints,
                          dose_scale=args.dose_scale)
    problem = generate(cfg)
    fileio.save_problem(problem, args.out)
    print(f"wrote {args.out}: {problem.num_vars} variables, "
          f"{len(problem.rois)} rois, {len(problem.objectives)} objectives, "
          f"{len(problem.constraints)} constraints, "
          f"{problem.total_nnz():,} total nnz")
    print(f"{'roi':<12} {'kind':<15} {'voxels':>8} {'nnz':>10}")
    for roi in problem.rois:
        print(f"{roi.name:<12} {roi.kind:<15} {roi.voxel_count:>8} "
              f"{roi.matrix.nnz:>10}")
    return 0


def cmd_partition(args) -> int:
    problem = fileio.load_problem(args.problem)
    assignment = partition_problem(problem, args.workers)
    lines = ["worker,objective_nnz,constraint_nnz,total_nnz"]
    for w in range(args.workers):
        lines.append(f"{w},{assignment.objectives.sums[w]},"
                     f"{assignment.constraints.sums[w]},"
                     f"{assignment.per_worker_nnz[w]}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    if args.out and not args.no_plot:
        from .plots import plot_partition

        obj_items = [(i, s.nnz_weight()) for i, s in enumerate(problem.objectives)]
        cons_items = [(i, s.nnz_weight()) for i, s in enumerate(problem.constraints)]
        fig = _figure_path(args.out)
        plot_partition(assignment, obj_items, cons_items, fig)
        print(f"wrote {fig}")
    return 0


def cmd_evaluate(args) -> int:
    problem = fileio.load_problem(args.problem)
    x = _load_x(args, problem)
    assignment = partition_problem(problem, args.workers) if args.workers else None
    with start_workers(problem, assignment, TRANSPORTS[args.transport],
                       listen=args.listen) as engine:
        result = engine.evaluate(x, want_grad=args.grad)
    lines = ["quantity,index,value"]
    lines.append(f"objective,,{result.objective:.17g}")
    for i, v in enumerate(result.constraint_values):
        lines.append(f"constraint,{i},{v:.17g}")
    if args.grad:
        gnorm = float(np.abs(result.objective_grad).max())
        lines.append(f"objective_grad_inf_norm,,{gnorm:.17g}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_optimize(args) -> int:
    problem = fileio.load_problem(args.problem)
    assignment = partition_problem(problem, args.workers) if args.workers else None
    cfg = solver.SolverConfig(max_iterations=args.iters,
                              grad_tolerance=args.grad_tol,
                              penalty_weight=args.penalty_mu,
                              penalty_growth=args.penalty_growth,
                              lbfgs_memory=args.memory,
                              log_every=args.log_every)
    sink = solver.IterationLogWriter(args.log_out) if args.log_out else None
    try:
        with start_workers(problem, assignment, TRANSPORTS[args.transport],
                           listen=args.listen, problem_path=args.problem) as engine:
            result = solver.solve(problem, engine, cfg, log_sink=sink)
    finally:
        if sink is not None:
            sink.close()
    fileio.write_vector(args.out, result.x)
    print(f"status={result.status} iterations={result.iterations} "
          f"objective={result.objective:.6g} "
          f"max_violation={result.max_violation:.3g} "
          f"wall={result.wall_seconds:.2f}s "
          f"(eval {result.eval_seconds:.2f}s / solver {result.solver_seconds:.2f}s)")
    print(f"wrote {args.out}")
    if args.log_out:
        print(f"wrote {args.log_out}")
    return 0


def cmd_dvh(args) -> int:
    problem = fileio.load_problem(args.problem)
    x = _load_x(args, problem)
    curves = quality.dvh(problem, x, args.grid_points)
    compare_curves = None
    if args.compare:
        x2 = fileio.read_vector(args.compare)
        compare_curves = quality.dvh(problem, x2, args.grid_points)
        quality.export_dvh_comparison_csv(curves, args.labels[0],
                                          compare_curves, args.labels[1],
                                          args.out)
    else:
        quality.export_dvh_csv(curves, args.out, plan_label=args.labels[0])
    print(f"wrote {args.out}")
    metrics = quality.plan_metrics(problem, x)
    print(f"{'roi':<12} {'min':>9} {'max':>9} {'mean':>9}")
    for name, m in metrics.items():
        print(f"{name:<12} {m.min_dose:>9.3f} {m.max_dose:>9.3f} "
              f"{m.mean_dose:>9.3f}")
    if not args.no_plot:
        from .plots import plot_dvh

        fig = _figure_path(args.out)
        plot_dvh(curves, fig, compare=compare_curves, labels=args.labels)
        print(f"wrote {fig}")
    return 0


def cmd_bench(args) -> int:
    problem = fileio.load_problem(args.problem)
    report = bench_mod.run_bench(problem, args.workers, repeats=args.repeats,
                                 iterations=args.iters,
                                 transport=TRANSPORTS[args.transport])
    bench_mod.write_bench_csv(report, args.out)
    print(f"wrote {args.out} "
          f"(serial eval fraction {report.serial_eval_fraction:.1%})")
    for row in report.rows:
        print(f"K={row.workers}: {row.mean_wall_seconds:.3f}s "
              f"(std {row.std_wall_seconds:.3f}) "
              f"speedup {row.speedup_vs_serial:.2f}x "
              f"amdahl {row.amdahl_seconds:.3f}s")
    if not args.no_plot:
        from .plots import plot_bench

        fig = _figure_path(args.out)
        plot_bench(report, fig)
        print(f"wrote {fig}")
    return 0


def cmd_worker(args) -> int:
    problem = fileio.load_problem(args.problem)
    return run_socket_worker(problem, args.connect)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rtopt",
        description="Treatment-plan optimization with distributed "
                    "objective/constraint evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic problem file")
    p.add_argument("--out", required=True, help="output problem file")
    p.add_argument("--num-vars", type=int, default=600)
    p.add_argument("--rois", type=int, default=20)
    p.add_argument("--nnz-range", type=_parse_nnz_range, default=(1e2, 1e5),
                   metavar="MIN,MAX")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fraction-constraints", type=float, default=0.5)
    p.add_argument("--dose-scale", type=float, default=60.0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("partition", help="distribute terms across workers")
    p.add_argument("--problem", required=True)
    p.add_argument("--workers", type=int, required=True)
    p.add_argument("--out", help="CSV of per-worker totals (default: stdout)")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("evaluate", help="evaluate objective and constraints once")
    p.add_argument("--problem", required=True)
    p.add_argument("--x", help="binary solution vector (default: zeros)")
    p.add_argument("--workers", type=int, default=0)
    p.add_argument("--transport", choices=sorted(TRANSPORTS), default="inproc")
    p.add_argument("--listen", type=_parse_hostport, metavar="HOST:PORT")
    p.add_argument("--grad", action="store_true", help="also compute gradients")
    p.add_argument("--out", help="CSV output (default: stdout)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("optimize", help="run the solver")
    p.add_argument("--problem", required=True)
    p.add_argument("--workers", type=int, default=0)
    p.add_argument("--transport", choices=sorted(TRANSPORTS), default="inproc")
    p.add_argument("--listen", type=_parse_hostport, metavar="HOST:PORT")
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--grad-tol", type=float, default=1e-5)
    p.add_argument("--penalty-mu", type=float, default=10.0)
    p.add_argument("--penalty-growth", type=float, default=10.0)
    p.add_argument("--memory", type=int, default=10)
    p.add_argument("--log-every", type=int, default=1)
    p.add_argument("--out", required=True, help="binary output vector")
    p.add_argument("--log-out", help="iteration log CSV")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("dvh", help="dose-volume histogram export")
    p.add_argument("--problem", required=True)
    p.add_argument("--x", help="binary solution vector (default: zeros)")
    p.add_argument("--compare", help="second solution vector to compare against")
    p.add_argument("--labels", nargs=2, default=("plan", "reference"))
    p.add_argument("--grid-points", type=int, default=quality.DEFAULT_GRID_POINTS)
    p.add_argument("--out", required=True, help="CSV output")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_dvh)

    p = sub.add_parser("bench", help="scaling benchmark across worker counts")
    p.add_argument("--problem", required=True)
    p.add_argument("--workers", type=_parse_worker_list, default=[0, 1, 2, 4],
                   metavar="K0,K1,...")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--transport", choices=sorted(TRANSPORTS), default="inproc")
    p.add_argument("--out", required=True, help="CSV output")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("worker", help="internal: socket-transport follower")
    p.add_argument("--connect", type=_parse_hostport, required=True,
                   metavar="HOST:PORT")
    p.add_argument("--problem", required=True)
    p.set_defaults(func=cmd_worker)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RtoptError as exc:
        print(f"rtopt {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"rtopt {args.command}: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())
