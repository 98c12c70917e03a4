"""Treatment-plan optimization with distributed function evaluation.

Library layout:
    sparse     CSR matrices and the d = Ax / A^T y kernels
    model      problem data model and synthetic generator
    fileio     problem file format, solution vectors
    functions  per-kind values and analytic gradients
    partition  greedy nnz-balanced work distribution
    engine     leader/follower evaluation (serial, threads, sockets)
    solver     projected L-BFGS with quadratic constraint penalties
    quality    dose-volume histograms and dose metrics
    bench      scaling benchmark with Amdahl reference
    cli        the `rtopt` command
"""

from . import errors
from .bench import BenchReport, run_bench
from .engine import (EvalResult, TimingRecord, amdahl_predict, start_workers)
from .fileio import load_problem, read_vector, save_problem, write_vector
from .functions import (FunctionValueGrad, eval_constraints, eval_function,
                        eval_weighted_objective)
from .model import (FunctionSpec, GeneratorConfig, Roi, TreatmentProblem,
                    generate)
from .partition import WorkerAssignment, greedy_partition, partition_problem
from .quality import DvhCurve, dvh, export_dvh_csv, plan_metrics, volume_at_dose
from .solver import SolveResult, SolverConfig, merit_and_grad, solve
from .sparse import SparseMatrix, TripletList, assemble, matvec, matvec_transpose

__version__ = "0.1.0"

__all__ = [
    "errors", "__version__",
    "SparseMatrix", "TripletList", "assemble", "matvec", "matvec_transpose",
    "Roi", "FunctionSpec", "TreatmentProblem", "GeneratorConfig", "generate",
    "load_problem", "save_problem", "read_vector", "write_vector",
    "FunctionValueGrad", "eval_function", "eval_weighted_objective",
    "eval_constraints",
    "WorkerAssignment", "greedy_partition", "partition_problem",
    "EvalResult", "TimingRecord", "start_workers", "amdahl_predict",
    "SolverConfig", "SolveResult", "solve", "merit_and_grad",
    "DvhCurve", "volume_at_dose", "dvh", "plan_metrics", "export_dvh_csv",
    "BenchReport", "run_bench",
]
