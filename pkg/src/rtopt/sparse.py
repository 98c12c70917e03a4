"""Compressed-row sparse matrices and the two kernels everything rides on.

The dose in an ROI is d = A x for that ROI's influence matrix A, and every
gradient pulls back through A^T. Both kernels accumulate in a fixed order
(row-major, ascending column within a row) so distributed and serial
evaluation paths can be compared down to the last bit. The inner loops are
compiled with numba and release the GIL, which is what lets in-process
worker threads actually run in parallel.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DimensionMismatch, IndexOutOfRange, ParseError, ValidationError

__all__ = [
    "SparseMatrix",
    "TripletList",
    "assemble",
    "matvec",
    "matvec_transpose",
    "to_triplets",
    "from_dense",
    "to_dense",
    "write_block",
    "read_block",
    "block_nbytes",
]


@njit(nogil=True, cache=True)
def _csr_matvec(row_offsets, col_indices, values, x, out):
    for i in range(out.shape[0]):
        acc = 0.0
        for k in range(row_offsets[i], row_offsets[i + 1]):
            acc += values[k] * x[col_indices[k]]
        out[i] = acc


@njit(nogil=True, cache=True)
def _csr_matvec_transpose(row_offsets, col_indices, values, y, out):
    for i in range(y.shape[0]):
        yi = y[i]
        if yi != 0.0:
            for k in range(row_offsets[i], row_offsets[i + 1]):
                out[col_indices[k]] += values[k] * yi


@dataclass(frozen=True)
class SparseMatrix:
    """Immutable CSR matrix.

    row_offsets has length rows+1 with row_offsets[0] == 0 and
    row_offsets[rows] == nnz; col_indices are strictly increasing within
    each row; values are finite float64.
    """

    rows: int
    cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_offsets",
                           np.ascontiguousarray(self.row_offsets, dtype=np.int64))
        object.__setattr__(self, "col_indices",
                           np.ascontiguousarray(self.col_indices, dtype=np.int32))
        object.__setattr__(self, "values",
                           np.ascontiguousarray(self.values, dtype=np.float64))
        for arr in (self.row_offsets, self.col_indices, self.values):
            arr.setflags(write=False)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    def validate(self) -> "SparseMatrix":
        """Check the CSR invariants, raising ValidationError on the first failure."""
        off = self.row_offsets
        if self.rows < 0 or self.cols < 0:
            raise ValidationError("negative matrix dimensions")
        if off.shape[0] != self.rows + 1:
            raise ValidationError(
                f"row_offsets has length {off.shape[0]}, expected rows+1={self.rows + 1}")
        if self.rows >= 0 and (off[0] != 0 or off[-1] != self.nnz):
            raise ValidationError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(off) < 0):
            raise ValidationError("row_offsets must be non-decreasing")
        if self.col_indices.shape[0] != self.nnz:
            raise ValidationError("col_indices length does not match values")
        if self.nnz:
            if int(self.col_indices.min()) < 0 or int(self.col_indices.max()) >= self.cols:
                raise ValidationError("column index out of range")
            # strictly increasing columns within each row
            deltas = np.diff(self.col_indices)
            row_starts = off[1:-1]
            row_starts = row_starts[(row_starts > 0) & (row_starts < self.nnz)]
            interior = np.ones(self.nnz - 1, dtype=bool)
            interior[row_starts - 1] = False
            if np.any(deltas[interior] <= 0):
                raise ValidationError("column indices must be strictly increasing within a row")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("matrix values contain NaN or Inf")
        return self

    def __eq__(self, other):
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (self.rows == other.rows and self.cols == other.cols
                and np.array_equal(self.row_offsets, other.row_offsets)
                and np.array_equal(self.col_indices, other.col_indices)
                and np.array_equal(self.values, other.values))


@dataclass
class TripletList:
    """Assembly format: (row, col, value) entries, duplicates summed on assemble."""

    rows: int
    cols: int
    entries: list = field(default_factory=list)

    def add(self, row: int, col: int, value: float) -> None:
        self.entries.append((row, col, value))


def assemble(t: TripletList) -> SparseMatrix:
    """Build a canonical CSR matrix from triplets.

    Duplicate (row, col) entries are summed; columns come out sorted within
    each row. Raises IndexOutOfRange naming the offending entry.
    """
    for entry in t.entries:
        r, c, _ = entry
        if not (0 <= r < t.rows and 0 <= c < t.cols):
            raise IndexOutOfRange(
                f"entry {entry!r} outside {t.rows}x{t.cols} matrix")
    if not t.entries:
        return SparseMatrix(t.rows, t.cols,
                            np.zeros(t.rows + 1, dtype=np.int64),
                            np.zeros(0, dtype=np.int32),
                            np.zeros(0, dtype=np.float64))
    rows = np.array([e[0] for e in t.entries], dtype=np.int64)
    cols = np.array([e[1] for e in t.entries], dtype=np.int64)
    vals = np.array([e[2] for e in t.entries], dtype=np.float64)
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    keys = rows * t.cols + cols
    first = np.ones(keys.shape[0], dtype=bool)
    first[1:] = keys[1:] != keys[:-1]
    starts = np.flatnonzero(first)
    summed = np.add.reduceat(vals, starts)
    rows, cols = rows[starts], cols[starts]
    offsets = np.zeros(t.rows + 1, dtype=np.int64)
    np.add.at(offsets, rows + 1, 1)
    np.cumsum(offsets, out=offsets)
    return SparseMatrix(t.rows, t.cols, offsets,
                        cols.astype(np.int32), summed)


def to_triplets(a: SparseMatrix) -> TripletList:
    """Inverse of assemble for canonical matrices."""
    t = TripletList(a.rows, a.cols)
    for i in range(a.rows):
        for k in range(a.row_offsets[i], a.row_offsets[i + 1]):
            t.add(i, int(a.col_indices[k]), float(a.values[k]))
    return t


def from_dense(arr) -> SparseMatrix:
    """Canonical CSR from a dense 2-D array, dropping exact zeros."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatch("expected a 2-D array")
    t = TripletList(arr.shape[0], arr.shape[1])
    for i, j in zip(*np.nonzero(arr)):
        t.add(int(i), int(j), float(arr[i, j]))
    return assemble(t)


def to_dense(a: SparseMatrix) -> np.ndarray:
    out = np.zeros((a.rows, a.cols))
    for i in range(a.rows):
        for k in range(a.row_offsets[i], a.row_offsets[i + 1]):
            out[i, a.col_indices[k]] += a.values[k]
    return out


def matvec(a: SparseMatrix, x: np.ndarray) -> np.ndarray:
    """d = A x, accumulated in row-major order."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (a.cols,):
        raise DimensionMismatch(
            f"matvec: x has shape {x.shape}, matrix has {a.cols} columns")
    out = np.empty(a.rows, dtype=np.float64)
    _csr_matvec(a.row_offsets, a.col_indices, a.values, x, out)
    return out


def matvec_transpose(a: SparseMatrix, y: np.ndarray) -> np.ndarray:
    """g = A^T y, scattered in row-major traversal order."""
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.shape != (a.rows,):
        raise DimensionMismatch(
            f"matvec_transpose: y has shape {y.shape}, matrix has {a.rows} rows")
    out = np.zeros(a.cols, dtype=np.float64)
    _csr_matvec_transpose(a.row_offsets, a.col_indices, a.values, y, out)
    return out


# On-disk matrix block, little-endian:
#   u64 rows, u64 cols, u64 nnz,
#   u64 x (rows+1) row_offsets, u32 x nnz col_indices, f64 x nnz values.

_BLOCK_HEADER = struct.Struct("<QQQ")


def block_nbytes(rows: int, nnz: int) -> int:
    """Size in bytes of one serialized matrix block."""
    return _BLOCK_HEADER.size + 8 * (rows + 1) + 4 * nnz + 8 * nnz


def write_block(a: SparseMatrix, fh) -> int:
    """Serialize one matrix block to a binary file object; returns bytes written."""
    fh.write(_BLOCK_HEADER.pack(a.rows, a.cols, a.nnz))
    fh.write(a.row_offsets.astype("<u8").tobytes())
    fh.write(a.col_indices.astype("<u4").tobytes())
    fh.write(a.values.astype("<f8").tobytes())
    return block_nbytes(a.rows, a.nnz)


def read_exact(fh, n: int) -> bytes:
    """Read exactly n bytes or raise ParseError at the current offset."""
    data = fh.read(n)
    if len(data) != n:
        raise ParseError(
            f"unexpected end of file: wanted {n} bytes, got {len(data)}")
    return data


def read_block(fh) -> SparseMatrix:
    """Read one matrix block written by write_block."""
    rows, cols, nnz = _BLOCK_HEADER.unpack(read_exact(fh, _BLOCK_HEADER.size))
    offsets = np.frombuffer(read_exact(fh, 8 * (rows + 1)), dtype="<u8").astype(np.int64)
    cols_idx = np.frombuffer(read_exact(fh, 4 * nnz), dtype="<u4").astype(np.int32)
    values = np.frombuffer(read_exact(fh, 8 * nnz), dtype="<f8").astype(np.float64)
    return SparseMatrix(int(rows), int(cols), offsets, cols_idx, values).validate()
