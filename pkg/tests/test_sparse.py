import io

import numpy as np
import pytest

from rtopt.errors import DimensionMismatch, IndexOutOfRange, ValidationError
from rtopt.sparse import (SparseMatrix, TripletList, assemble, from_dense,
                          matvec, matvec_transpose, read_block, to_dense,
                          to_triplets, write_block)


def test_duplicate_entries_are_summed():
    t = TripletList(1, 1, [(0, 0, 1.0), (0, 0, 2.0)])
    a = assemble(t)
    assert a.nnz == 1
    assert a.values[0] == 3.0


def test_empty_triplets_give_zero_matvec():
    a = assemble(TripletList(2, 2))
    assert a.nnz == 0
    assert np.array_equal(matvec(a, np.array([1.0, 2.0])), np.zeros(2))


def test_assemble_matches_dense_oracle(rng):
    dense = rng.random((3, 3))
    dense[rng.random((3, 3)) < 0.5] = 0.0
    t = TripletList(3, 3)
    for i in range(3):
        for j in range(3):
            if dense[i, j]:
                t.add(i, j, dense[i, j])
    a = assemble(t)
    assert np.array_equal(to_dense(a), dense)


def test_assemble_rejects_out_of_range():
    with pytest.raises(IndexOutOfRange, match=r"\(2, 0, 1.0\)"):
        assemble(TripletList(2, 2, [(2, 0, 1.0)]))
    with pytest.raises(IndexOutOfRange):
        assemble(TripletList(2, 2, [(0, -1, 1.0)]))


def test_matvec_identity():
    a = from_dense(np.eye(2))
    assert np.array_equal(matvec(a, np.array([3.0, 7.0])), [3.0, 7.0])


def test_matvec_small_case():
    a = from_dense([[1.0, 2.0], [0.0, 4.0]])
    assert np.array_equal(matvec(a, np.array([1.0, 1.0])), [3.0, 4.0])


def test_matvec_dimension_mismatch():
    a = from_dense(np.eye(2))
    with pytest.raises(DimensionMismatch):
        matvec(a, np.zeros(3))
    with pytest.raises(DimensionMismatch):
        matvec_transpose(a, np.zeros(5))


def test_matvec_transpose_cases():
    a = from_dense(np.eye(2))
    assert np.array_equal(matvec_transpose(a, np.array([1.0, 2.0])), [1.0, 2.0])
    b = from_dense([[1.0, 2.0], [0.0, 4.0]])
    assert np.array_equal(matvec_transpose(b, np.array([1.0, 1.0])), [1.0, 6.0])
    assert np.array_equal(matvec_transpose(b, np.zeros(2)), np.zeros(2))


def test_kernels_match_dense_reference(rng):
    for _ in range(30):
        rows = int(rng.integers(1, 9))
        cols = int(rng.integers(1, 9))
        dense = rng.random((rows, cols))
        dense[rng.random((rows, cols)) < 0.4] = 0.0
        a = from_dense(dense)
        x = rng.normal(size=cols)
        y = rng.normal(size=rows)
        ref = dense @ x
        got = matvec(a, x)
        assert np.all(np.abs(got - ref) <= 1e-14 * np.maximum(1.0, np.abs(ref)))
        ref_t = dense.T @ y
        got_t = matvec_transpose(a, y)
        assert np.all(np.abs(got_t - ref_t) <= 1e-14 * np.maximum(1.0, np.abs(ref_t)))


def test_adjoint_identity(rng):
    # <Ax, y> == <x, A^T y>
    for _ in range(20):
        dense = rng.random((6, 5))
        dense[rng.random((6, 5)) < 0.5] = 0.0
        a = from_dense(dense)
        x = rng.normal(size=5)
        y = rng.normal(size=6)
        lhs = float(matvec(a, x) @ y)
        rhs = float(x @ matvec_transpose(a, y))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_triplet_round_trip(rng):
    dense = rng.random((4, 6))
    dense[rng.random((4, 6)) < 0.5] = 0.0
    a = from_dense(dense)
    b = assemble(to_triplets(a))
    assert a == b


def test_validate_rejects_broken_matrices():
    good = from_dense([[1.0, 0.0], [0.0, 2.0]])
    good.validate()
    bad_offsets = SparseMatrix(2, 2, np.array([0, 2, 1]), good.col_indices,
                               good.values)
    with pytest.raises(ValidationError):
        bad_offsets.validate()
    bad_col = SparseMatrix(2, 2, good.row_offsets, np.array([0, 5]), good.values)
    with pytest.raises(ValidationError):
        bad_col.validate()
    with pytest.raises(ValidationError, match="NaN"):
        SparseMatrix(2, 2, good.row_offsets, good.col_indices,
                     np.array([1.0, np.nan])).validate()
    unsorted = SparseMatrix(1, 3, np.array([0, 2]), np.array([2, 1]),
                            np.array([1.0, 2.0]))
    with pytest.raises(ValidationError, match="strictly increasing"):
        unsorted.validate()


def test_block_round_trip(rng):
    dense = rng.random((5, 7))
    dense[rng.random((5, 7)) < 0.6] = 0.0
    a = from_dense(dense)
    buf = io.BytesIO()
    write_block(a, buf)
    buf.seek(0)
    b = read_block(buf)
    assert a == b
    # every float bit-exact
    assert a.values.tobytes() == b.values.tobytes()


def test_matrices_are_immutable():
    a = from_dense(np.eye(2))
    with pytest.raises(ValueError):
        a.values[0] = 5.0
