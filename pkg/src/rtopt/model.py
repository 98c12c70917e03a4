"""Problem data model and the synthetic problem generator.

A treatment problem is a set of ROIs, each with its own sparse dose
influence matrix, plus weighted objective terms and inequality constraint
terms drawn from a small catalog of function kinds. The generator produces
problems whose per-ROI matrix sizes span orders of magnitude, which is the
property that makes work distribution interesting in the first place.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ValidationError
from .sparse import SparseMatrix

ROI_KINDS = ("target", "organ_at_risk", "other")

LTCP = "ltcp"
MIN_DOSE_PENALTY = "min_dose_penalty"
MAX_DOSE_PENALTY = "max_dose_penalty"
MEAN_DOSE = "mean_dose"
GENERALIZED_MEAN = "generalized_mean"
QUADRATIC = "quadratic"

FUNCTION_KINDS = (LTCP, MIN_DOSE_PENALTY, MAX_DOSE_PENALTY,
                  MEAN_DOSE, GENERALIZED_MEAN, QUADRATIC)

OBJECTIVE = "objective"
CONSTRAINT = "constraint"


@dataclass
class Roi:
    """One region of interest: name, classification, and its dose matrix."""

    name: str
    kind: str
    voxel_count: int
    matrix: SparseMatrix

    def validate(self):
        if self.kind not in ROI_KINDS:
            raise ValidationError(f"roi {self.name!r}: unknown kind {self.kind!r}")
        if self.voxel_count != self.matrix.rows:
            raise ValidationError(
                f"roi {self.name!r}: voxel_count {self.voxel_count} != matrix rows "
                f"{self.matrix.rows}")
        self.matrix.validate()
        return self


@dataclass
class FunctionSpec:
    """One objective or constraint term.

    kind-specific parameters:
      ltcp               -> alpha, dose_target
      min/max_dose_penalty -> dose_target
      mean_dose          -> (none)
      generalized_mean   -> power
      quadratic          -> quad_matrix, quad_linear, quad_constant (no roi)
    role parameters: weight (objective, > 0) or rhs (constraint, finite).
    """

    kind: str
    role: str
    roi: Roi | None = None
    weight: float | None = None
    rhs: float | None = None
    alpha: float | None = None
    dose_target: float | None = None
    power: float | None = None
    quad_matrix: SparseMatrix | None = None
    quad_linear: np.ndarray | None = None
    quad_constant: float | None = None

    _PARAMS = {
        LTCP: ("alpha", "dose_target"),
        MIN_DOSE_PENALTY: ("dose_target",),
        MAX_DOSE_PENALTY: ("dose_target",),
        MEAN_DOSE: (),
        GENERALIZED_MEAN: ("power",),
        QUADRATIC: ("quad_matrix", "quad_linear", "quad_constant"),
    }

    def nnz_weight(self) -> int:
        """Partitioning cost proxy: nnz of the matrix this term multiplies by."""
        if self.kind == QUADRATIC:
            return self.quad_matrix.nnz
        return self.roi.matrix.nnz

    def label(self) -> str:
        roi = self.roi.name if self.roi is not None else "-"
        return f"{self.kind}({roi})"

    def validate(self, num_vars: int):
        if self.kind not in FUNCTION_KINDS:
            raise ValidationError(f"unknown function kind {self.kind!r}")
        if self.role not in (OBJECTIVE, CONSTRAINT):
            raise ValidationError(f"unknown role {self.role!r}")
        wanted = self._PARAMS[self.kind]
        all_params = ("alpha", "dose_target", "power",
                      "quad_matrix", "quad_linear", "quad_constant")
        for name in all_params:
            value = getattr(self, name)
            if name in wanted and value is None:
                raise ValidationError(f"{self.label()}: missing parameter {name!r}")
            if name not in wanted and value is not None:
                raise ValidationError(f"{self.label()}: unexpected parameter {name!r}")
        if self.kind == QUADRATIC:
            if self.roi is not None:
                raise ValidationError("quadratic terms do not reference an ROI")
            if self.quad_matrix.rows != num_vars or self.quad_matrix.cols != num_vars:
                raise ValidationError(
                    f"quadratic matrix is {self.quad_matrix.rows}x{self.quad_matrix.cols},"
                    f" expected {num_vars}x{num_vars}")
            if np.asarray(self.quad_linear).shape != (num_vars,):
                raise ValidationError("quadratic linear term has wrong length")
        else:
            if self.roi is None:
                raise ValidationError(f"{self.kind} term requires an ROI")
        if self.kind == GENERALIZED_MEAN and self.power == 0:
            raise ValidationError("generalized mean requires power != 0")
        if self.role == OBJECTIVE:
            if self.rhs is not None:
                raise ValidationError(f"{self.label()}: objective carries no rhs")
            if self.weight is None or not (self.weight > 0):
                raise ValidationError(f"{self.label()}: objective weight must be > 0")
        else:
            if self.weight is not None:
                raise ValidationError(f"{self.label()}: constraint carries no weight")
            if self.rhs is None or not math.isfinite(self.rhs):
                raise ValidationError(f"{self.label()}: constraint rhs must be finite")
        return self


@dataclass
class TreatmentProblem:
    """Full optimization problem over beamlet weights x >= 0."""

    num_vars: int
    rois: list[Roi]
    objectives: list[FunctionSpec]
    constraints: list[FunctionSpec]

    def validate(self) -> "TreatmentProblem":
        if self.num_vars < 1:
            raise ValidationError("num_vars must be >= 1")
        seen = set()
        for roi in self.rois:
            roi.validate()
            if roi.name in seen:
                raise ValidationError(f"duplicate roi name {roi.name!r}")
            seen.add(roi.name)
            if roi.matrix.cols != self.num_vars:
                raise ValidationError(
                    f"roi {roi.name!r}: matrix has {roi.matrix.cols} columns,"
                    f" problem has {self.num_vars} variables")
        if not self.objectives:
            raise ValidationError("problem needs at least one objective")
        for spec in self.objectives:
            if spec.role != OBJECTIVE:
                raise ValidationError("objective list contains a non-objective term")
            spec.validate(self.num_vars)
        for spec in self.constraints:
            if spec.role != CONSTRAINT:
                raise ValidationError("constraint list contains a non-constraint term")
            spec.validate(self.num_vars)
        return self

    def roi_by_name(self, name: str) -> Roi:
        for roi in self.rois:
            if roi.name == name:
                return roi
        raise KeyError(name)

    def total_nnz(self) -> int:
        return sum(r.matrix.nnz for r in self.rois) + sum(
            s.quad_matrix.nnz for s in self.objectives + self.constraints
            if s.kind == QUADRATIC)

    def content_hash(self) -> bytes:
        """sha256 over the canonical serialized form; used in worker handshakes."""
        from .fileio import problem_to_bytes

        return hashlib.sha256(problem_to_bytes(self)).digest()


@dataclass
class GeneratorConfig:
    """Knobs for the synthetic problem generator. The seed fixes everything."""

    num_vars: int = 600
    num_rois: int = 20
    nnz_range: tuple = (1e2, 1e5)
    seed: int = 0
    fraction_constraints: float = 0.5
    dose_scale: float = 60.0

    def validate(self) -> "GeneratorConfig":
        lo, hi = self.nnz_range
        if self.num_vars < 1 or self.num_rois < 1:
            raise ConfigError("num_vars and num_rois must be >= 1")
        if not (1 <= lo <= hi):
            raise ConfigError("nnz_range must satisfy 1 <= min <= max")
        if not (0.0 <= self.fraction_constraints <= 1.0):
            raise ConfigError("fraction_constraints must lie in [0, 1]")
        if not (self.dose_scale > 0):
            raise ConfigError("dose_scale must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        return self


def _random_roi_matrix(rng, num_vars: int, nnz: int,
                       row_sum_scale: float) -> SparseMatrix:
    """Random nonnegative CSR matrix with roughly `nnz` non-zeros.

    Each ROI draws its columns from its own random beamlet subset (real
    influence matrices have spatial structure; without it every ROI's dose
    would collapse to the same multiple of mean(x) and min/max constraints
    on different ROIs would conflict structurally). Row density sits in a
    1-10% band of num_vars and row sums land near row_sum_scale, so x near
    1 produces doses near that level.
    """
    support_size = int(round(rng.uniform(0.3, 0.7) * num_vars))
    support_size = max(1, support_size)
    support = rng.choice(num_vars, size=support_size, replace=False)

    density = rng.uniform(0.01, 0.10)
    row_nnz = int(np.clip(round(density * num_vars), 1, support_size))
    # enough rows that no row needs more than the support offers
    voxel_count = max(1, round(nnz / row_nnz), -(-nnz // support_size))
    base = nnz // voxel_count
    counts = np.full(voxel_count, base, dtype=np.int64)
    counts[: nnz - base * voxel_count] += 1

    offsets = np.zeros(voxel_count + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    total = int(offsets[-1])
    col_indices = np.empty(total, dtype=np.int32)
    values = np.empty(total, dtype=np.float64)
    for i in range(voxel_count):
        c = int(counts[i])
        cols = rng.choice(support, size=c, replace=False)
        cols.sort()
        col_indices[offsets[i]:offsets[i + 1]] = cols
        # per-entry scale keeps each row sum near row_sum_scale
        values[offsets[i]:offsets[i + 1]] = rng.uniform(0.8, 1.2, c) * (row_sum_scale / c)
    return SparseMatrix(voxel_count, num_vars, offsets, col_indices, values)


def generate(cfg: GeneratorConfig) -> TreatmentProblem:
    """Deterministic synthetic problem with heterogeneous per-ROI matrix sizes.

    ROI 0 is the target and receives an underdose-penalizing objective plus
    min/max dose-penalty constraints; the remaining ROIs are organs at risk
    with mean-dose or generalized-mean objectives and, for a configurable
    fraction, max-dose-penalty constraints.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.nnz_range
    nnz_targets = np.exp(rng.uniform(math.log(lo), math.log(hi), cfg.num_rois))
    nnz_targets = np.maximum(1, np.round(nnz_targets)).astype(np.int64)

    rois = []
    roi_scales = []
    for i in range(cfg.num_rois):
        name = "ptv" if i == 0 else f"oar_{i:02d}"
        kind = "target" if i == 0 else "organ_at_risk"
        # organs at risk sit off-axis and absorb less dose per unit intensity
        scale = 1.0 if i == 0 else float(rng.uniform(0.3, 0.8))
        matrix = _random_roi_matrix(rng, cfg.num_vars, int(nnz_targets[i]),
                                    scale * cfg.dose_scale)
        rois.append(Roi(name=name, kind=kind, voxel_count=matrix.rows, matrix=matrix))
        roi_scales.append(scale)

    penalty_rhs = (0.03 * cfg.dose_scale) ** 2
    objectives = [FunctionSpec(kind=LTCP, role=OBJECTIVE, roi=rois[0], weight=1.0,
                               alpha=0.25, dose_target=cfg.dose_scale)]
    constraints = [
        FunctionSpec(kind=MIN_DOSE_PENALTY, role=CONSTRAINT, roi=rois[0],
                     rhs=penalty_rhs, dose_target=0.93 * cfg.dose_scale),
        FunctionSpec(kind=MAX_DOSE_PENALTY, role=CONSTRAINT, roi=rois[0],
                     rhs=penalty_rhs, dose_target=1.10 * cfg.dose_scale),
    ]
    for roi, scale in zip(rois[1:], roi_scales[1:]):
        weight = float(rng.uniform(0.02, 0.2))
        if rng.random() < 0.5:
            objectives.append(FunctionSpec(kind=MEAN_DOSE, role=OBJECTIVE,
                                           roi=roi, weight=weight))
        else:
            power = float(rng.choice([2.0, 3.0, 4.0, 6.0]))
            objectives.append(FunctionSpec(kind=GENERALIZED_MEAN, role=OBJECTIVE,
                                           roi=roi, weight=weight, power=power))
        if rng.random() < cfg.fraction_constraints:
            # cap sits just under this organ's natural dose level: binding
            # but satisfiable by dimming its non-shared beamlets
            dose_target = float(rng.uniform(0.85, 1.1)) * scale * cfg.dose_scale
            constraints.append(FunctionSpec(kind=MAX_DOSE_PENALTY, role=CONSTRAINT,
                                            roi=roi, rhs=penalty_rhs,
                                            dose_target=dose_target))
    problem = TreatmentProblem(num_vars=cfg.num_vars, rois=rois,
                               objectives=objectives, constraints=constraints)
    return problem.validate()
