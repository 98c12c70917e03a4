"""Greedy multi-way partitioning of function terms across workers.

The cost proxy for a term is the nnz of the matrix it multiplies by, since
the matvec dominates evaluation time. Objective terms and constraint terms
are partitioned independently. The greedy rule (sort descending, assign to
the currently lightest partition) guarantees max-min discrepancy no larger
than the largest single item.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import TreatmentProblem

__all__ = ["Partition", "WorkerAssignment", "greedy_partition",
           "partition_problem"]


@dataclass(frozen=True)
class Partition:
    """One greedy partition family: term index -> worker, plus per-worker sums."""

    num_workers: int
    owner: dict
    sums: np.ndarray

    def owned_by(self, worker: int) -> list:
        return sorted(t for t, w in self.owner.items() if w == worker)

    def discrepancy(self) -> int:
        if self.num_workers == 0:
            return 0
        return int(self.sums.max() - self.sums.min())


def greedy_partition(weights, num_workers: int) -> Partition:
    """Assign (term_id, weight) items to the lightest of num_workers bins.

    Items are placed in descending weight order (ties by lowest term id);
    load ties go to the lowest worker id. Fully deterministic.
    """
    if num_workers < 1:
        raise ConfigError("greedy_partition requires at least one worker")
    items = [(int(t), int(w)) for t, w in weights]
    for t, w in items:
        if w < 0:
            raise ConfigError(f"negative weight {w} for term {t}")
    items.sort(key=lambda tw: (-tw[1], tw[0]))
    heap = [(0, w) for w in range(num_workers)]
    owner = {}
    sums = np.zeros(num_workers, dtype=np.int64)
    for term, weight in items:
        load, worker = heapq.heappop(heap)
        owner[term] = worker
        sums[worker] += weight
        heapq.heappush(heap, (load + weight, worker))
    return Partition(num_workers, owner, sums)


@dataclass(frozen=True)
class WorkerAssignment:
    """Ownership of objective and constraint terms across K workers."""

    num_workers: int
    objectives: Partition
    constraints: Partition

    @property
    def objective_owner(self) -> dict:
        return self.objectives.owner

    @property
    def constraint_owner(self) -> dict:
        return self.constraints.owner

    @property
    def per_worker_nnz(self) -> np.ndarray:
        return self.objectives.sums + self.constraints.sums

    def owned_objectives(self, worker: int) -> list:
        return self.objectives.owned_by(worker)

    def owned_constraints(self, worker: int) -> list:
        return self.constraints.owned_by(worker)


def partition_problem(problem: TreatmentProblem, num_workers: int) -> WorkerAssignment:
    """Two independent greedy runs: one over objectives, one over constraints."""
    obj_weights = [(i, s.nnz_weight()) for i, s in enumerate(problem.objectives)]
    cons_weights = [(i, s.nnz_weight()) for i, s in enumerate(problem.constraints)]
    return WorkerAssignment(
        num_workers=num_workers,
        objectives=greedy_partition(obj_weights, num_workers),
        constraints=greedy_partition(cons_weights, num_workers),
    )
