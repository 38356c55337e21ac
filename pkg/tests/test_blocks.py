import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aduca.blocks import (BlockPartition, DiagonalScaling, UsageError, as_sizes, block_sq_norms,
                          inverse_scaled_norm, prefix_splice, scaled_norm)


def scaling(diag, sizes=None):
    diag = np.asarray(diag, dtype=float)
    return DiagonalScaling(diag, BlockPartition(tuple(sizes or (diag.shape[0],))))


# partitions

def test_partition_offsets_and_slices():
    p = BlockPartition((2, 3, 1))
    assert p.offsets == (0, 2, 5, 6)
    assert p.d == 6 and p.m == 3
    assert p.block(1) == slice(2, 5)


def test_partition_rejects_empty_and_nonpositive():
    with pytest.raises(UsageError):
        BlockPartition(())
    with pytest.raises(UsageError):
        BlockPartition((2, 0))


def test_even_split_sizes_differ_by_at_most_one():
    assert BlockPartition.even(123, 4).sizes == (31, 31, 31, 30)
    assert BlockPartition.even(5, 5).sizes == (1, 1, 1, 1, 1)
    with pytest.raises(UsageError):
        BlockPartition.even(3, 4)


def test_as_sizes_accepts_count_or_sizes():
    assert as_sizes(2, 5).sizes == (3, 2)
    assert as_sizes([1, 4]).sizes == (1, 4)
    with pytest.raises(UsageError):
        as_sizes(2)


def test_scaling_rejects_nonpositive_entries():
    with pytest.raises(UsageError):
        scaling([1.0, 0.0])
    with pytest.raises(UsageError):
        scaling([1.0, -2.0])


def test_scaling_is_read_only():
    s = scaling([1.0, 2.0])
    with pytest.raises(ValueError):
        s.diag[0] = 5.0


# norms

def test_scaled_norm_identity():
    assert scaled_norm([3.0, 4.0], scaling([1.0, 1.0])) == 5.0


def test_scaled_norm_weighted():
    assert scaled_norm([1.0, 2.0], scaling([4.0, 1.0])) == pytest.approx(2.8284271, abs=1e-7)


def test_scaled_norm_zero_vector():
    assert scaled_norm([0.0, 0.0], scaling([7.0, 0.5])) == 0.0


def test_inverse_scaled_norm_weighted():
    assert inverse_scaled_norm([2.0, 0.0], scaling([4.0, 1.0])) == 1.0


def test_inverse_scaled_norm_identity_and_zero():
    assert inverse_scaled_norm([3.0, 4.0], scaling([1.0, 1.0])) == 5.0
    assert inverse_scaled_norm([0.0, 0.0], scaling([3.0, 1.0])) == 0.0


def test_norm_dimension_mismatch():
    with pytest.raises(UsageError):
        scaled_norm([1.0, 2.0, 3.0], scaling([1.0, 1.0]))
    with pytest.raises(UsageError):
        inverse_scaled_norm([1.0], scaling([1.0, 1.0]))


# splicing

def test_splice_first_block_keeps_old_vector():
    p = BlockPartition((1, 1))
    assert prefix_splice([1.0, 2.0], [9.0, 9.0], 0, p).tolist() == [9.0, 9.0]


def test_splice_last_block_of_two():
    p = BlockPartition((1, 1))
    assert prefix_splice([1.0, 2.0], [9.0, 9.0], 1, p).tolist() == [1.0, 9.0]


def test_splice_index_out_of_range():
    p = BlockPartition((1, 1))
    with pytest.raises(UsageError):
        prefix_splice([1.0, 2.0], [9.0, 9.0], 2, p)
    with pytest.raises(UsageError):
        prefix_splice([1.0, 2.0], [9.0, 9.0], -1, p)


# properties

sizes_st = st.lists(st.integers(1, 5), min_size=1, max_size=6)
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
positive = st.floats(1e-3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def vectors_with_scaling(draw, count=1):
    sizes = draw(sizes_st)
    d = sum(sizes)
    diag = draw(arrays(np.float64, d, elements=positive))
    vs = [draw(arrays(np.float64, d, elements=finite)) for _ in range(count)]
    return DiagonalScaling(diag, BlockPartition(tuple(sizes))), vs


@settings(max_examples=200, deadline=None)
@given(vectors_with_scaling())
def test_block_decomposition_of_squared_norm(case):
    s, (v,) = case
    total = scaled_norm(v, s) ** 2
    assert math.isclose(block_sq_norms(v, s).sum(), total, rel_tol=1e-12, abs_tol=1e-300)


@settings(max_examples=200, deadline=None)
@given(vectors_with_scaling(count=2))
def test_generalized_cauchy_schwarz(case):
    s, (v, w) = case
    lhs = abs(float(np.dot(v, w)))
    assert scaled_norm(v, s) * inverse_scaled_norm(w, s) >= lhs * (1 - 1e-12) - 1e-300


@settings(max_examples=200, deadline=None)
@given(vectors_with_scaling(), st.data())
def test_splice_of_equal_vectors_is_identity(case, data):
    s, (v,) = case
    i = data.draw(st.integers(0, s.partition.m - 1))
    assert np.array_equal(prefix_splice(v, v, i, s.partition), v)


@settings(max_examples=100, deadline=None)
@given(vectors_with_scaling())
def test_norm_zero_iff_vector_zero(case):
    s, (v,) = case
    assert (scaled_norm(v, s) == 0.0) == (not np.any(v))
