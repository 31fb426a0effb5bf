"""Kernel tests: every operation is checked against an independent oracle
(exhaustive loops over index tuples, elementwise definitions) rather than a
second path through the same code."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tensorreg.errors import ShapeMismatchError
from tensorreg.tensors import (
    CPFactors,
    DenseTensor,
    batch_design_matrix,
    batch_matricize,
    batch_vectorize,
    cofactor_matrix,
    cp_inner,
    cp_reconstruct,
    design_row,
    inner_product,
    khatri_rao,
    matricize,
    vectorize,
)

# --- oracles -----------------------------------------------------------------


def loop_inner_product(x: DenseTensor, y: DenseTensor) -> float:
    """Plain nested-loop sum over all index tuples."""
    total = 0.0
    ax, ay = x.array, y.array
    for idx in itertools.product(*(range(d) for d in x.dims)):
        total += ax[idx] * ay[idx]
    return total


def index_map_matricize(x: DenseTensor, mode: int) -> np.ndarray:
    """Place every entry by explicit index arithmetic: row = i_mode, column
    counts the remaining indices with lower modes fastest."""
    dims = x.dims
    other = [m for m in range(len(dims)) if m != mode]
    out = np.zeros((dims[mode], int(np.prod([dims[m] for m in other])) if other else 1))
    ax = x.array
    for idx in itertools.product(*(range(d) for d in dims)):
        col, stride = 0, 1
        for m in other:
            col += idx[m] * stride
            stride *= dims[m]
        out[idx[mode], col] = ax[idx]
    return out


def elementwise_khatri_rao(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    i, k = a.shape
    j = b.shape[0]
    out = np.zeros((i * j, k))
    for r in range(k):
        for ii in range(i):
            for jj in range(j):
                out[ii + jj * i, r] = a[ii, r] * b[jj, r]
    return out


def random_tensor(rng, dims) -> DenseTensor:
    return DenseTensor.from_array(rng.normal(size=dims))


def random_cp(rng, dims, rank) -> CPFactors:
    return CPFactors(rank, tuple(rng.normal(size=(d, rank)) for d in dims))


# --- inner_product -----------------------------------------------------------


def test_inner_product_identity_trace():
    eye = DenseTensor.from_array(np.eye(2))
    assert inner_product(eye, eye) == 2.0


def test_inner_product_zeros():
    rng = np.random.default_rng(0)
    x = random_tensor(rng, (3, 2))
    z = DenseTensor.from_array(np.zeros((3, 2)))
    assert inner_product(x, z) == 0.0


def test_inner_product_matches_loop_oracle():
    rng = np.random.default_rng(42)
    x = random_tensor(rng, (3, 4, 2))
    y = random_tensor(rng, (3, 4, 2))
    expected = loop_inner_product(x, y)
    assert inner_product(x, y) == pytest.approx(expected, rel=1e-12)
    assert inner_product(x, y) == inner_product(y, x)
    assert inner_product(x, x) >= 0


def test_inner_product_dim_mismatch_names_both():
    x = DenseTensor.from_array(np.zeros((2, 3)))
    y = DenseTensor.from_array(np.zeros((3, 2)))
    with pytest.raises(ShapeMismatchError) as err:
        inner_product(x, y)
    assert "(2, 3)" in str(err.value) and "(3, 2)" in str(err.value)


# --- matricize / vectorize ---------------------------------------------------


def test_matricize_matrix_modes():
    rng = np.random.default_rng(1)
    x = random_tensor(rng, (3, 5))
    np.testing.assert_array_equal(matricize(x, 0), x.array)
    np.testing.assert_array_equal(matricize(x, 1), x.array.T)


def test_matricize_storage_order_example():
    # entries 1..8 laid out in storage order (first index fastest)
    x = DenseTensor(dims=(2, 2, 2), data=np.arange(1.0, 9.0))
    expected = index_map_matricize(x, 1)
    np.testing.assert_array_equal(matricize(x, 1), expected)


@pytest.mark.parametrize("dims", [(2, 3), (2, 3, 4), (2, 2, 3, 2)])
def test_matricize_matches_index_map_oracle(dims):
    rng = np.random.default_rng(3)
    x = random_tensor(rng, dims)
    for m in range(len(dims)):
        np.testing.assert_array_equal(matricize(x, m), index_map_matricize(x, m))


def test_matricize_mode_out_of_range():
    x = DenseTensor.from_array(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        matricize(x, 2)
    with pytest.raises(ValueError):
        matricize(x, -1)


def test_vectorize_identity_first_index_fastest():
    eye = DenseTensor.from_array(np.eye(2))
    np.testing.assert_array_equal(vectorize(eye), [1.0, 0.0, 0.0, 1.0])


def test_vectorize_order1_is_own_data():
    x = DenseTensor.from_array(np.array([3.0, 1.0, 4.0]))
    np.testing.assert_array_equal(vectorize(x), [3.0, 1.0, 4.0])


def test_vectorize_dot_equals_inner_product():
    rng = np.random.default_rng(4)
    x = random_tensor(rng, (3, 4, 2))
    y = random_tensor(rng, (3, 4, 2))
    assert float(np.dot(vectorize(x), vectorize(y))) == inner_product(x, y)


# --- khatri_rao ----------------------------------------------------------------


def test_khatri_rao_scalar_first_factor():
    a = np.array([[1.0]])
    b = np.array([[2.0], [3.0]])
    np.testing.assert_array_equal(khatri_rao(a, b), [[2.0], [3.0]])


def test_khatri_rao_identity_unit_columns():
    eye = np.eye(2)
    out = khatri_rao(eye, eye)
    assert out.shape == (4, 2)
    assert out.sum() == 2.0
    # column k = kron(e_k, e_k): entry at position k + k*2
    assert out[0, 0] == 1.0 and out[3, 1] == 1.0


def test_khatri_rao_column_count_mismatch():
    with pytest.raises(ShapeMismatchError):
        khatri_rao(np.zeros((3, 2)), np.zeros((2, 3)))


def test_khatri_rao_matches_elementwise_oracle():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(2, 3))
    np.testing.assert_array_equal(khatri_rao(a, b), elementwise_khatri_rao(a, b))
    assert khatri_rao(a, b).shape == (8, 3)


# --- cp_reconstruct ------------------------------------------------------------


def test_cp_reconstruct_rank1_outer_product():
    w = CPFactors(1, (np.array([[1.0], [2.0]]), np.array([[3.0], [4.0]])))
    np.testing.assert_allclose(cp_reconstruct(w).array, [[3.0, 4.0], [6.0, 8.0]])


def test_cp_reconstruct_zero_component_is_inert():
    u1 = np.array([[1.0, 0.0], [2.0, 0.0]])
    u2 = np.array([[3.0, 0.0], [4.0, 0.0]])
    w2 = CPFactors(2, (u1, u2))
    w1 = CPFactors(1, (u1[:, :1], u2[:, :1]))
    np.testing.assert_array_equal(cp_reconstruct(w2).array, cp_reconstruct(w1).array)


def test_cp_reconstruct_full_chain_identity():
    rng = np.random.default_rng(7)
    w = random_cp(rng, (4, 3, 2), 3)
    chain = khatri_rao(khatri_rao(w.factors[0], w.factors[1]), w.factors[2])
    expected = chain @ np.ones(3)
    np.testing.assert_allclose(vectorize(cp_reconstruct(w)), expected, atol=1e-10)


def test_cp_reconstruct_order1_row_sum():
    f = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    w = CPFactors(2, (f,))
    np.testing.assert_array_equal(vectorize(cp_reconstruct(w)), f.sum(axis=1))


def test_unfolding_cofactor_identity_all_modes():
    rng = np.random.default_rng(8)
    for dims, rank in [((4, 3, 2), 3), ((5, 2), 2), ((3, 2, 2, 2), 2), ((6,), 3)]:
        w = random_cp(rng, dims, rank)
        full = cp_reconstruct(w)
        for m in range(len(dims)):
            lhs = matricize(full, m)
            rhs = w.factors[m] @ cofactor_matrix(w, m).T
            np.testing.assert_allclose(lhs, rhs, atol=1e-10)


# --- cp_inner ------------------------------------------------------------------


def test_cp_inner_zero_factors():
    x = DenseTensor.from_array(np.random.default_rng(9).normal(size=(3, 3)))
    w = CPFactors(2, (np.zeros((3, 2)), np.zeros((3, 2))))
    assert cp_inner(x, w) == 0.0


def test_cp_inner_rank1_bilinear_form():
    rng = np.random.default_rng(10)
    u, v = rng.normal(size=3), rng.normal(size=4)
    x = random_tensor(rng, (3, 4))
    w = CPFactors(1, (u[:, None], v[:, None]))
    assert cp_inner(x, w) == pytest.approx(u @ x.array @ v, rel=1e-12)


def test_cp_inner_matches_reconstruction_oracle():
    rng = np.random.default_rng(11)
    x = random_tensor(rng, (5, 6))
    w = random_cp(rng, (5, 6), 2)
    expected = inner_product(x, cp_reconstruct(w))
    assert cp_inner(x, w) == pytest.approx(expected, rel=1e-9)


def test_cp_inner_dim_mismatch():
    x = DenseTensor.from_array(np.zeros((2, 2)))
    w = CPFactors(1, (np.zeros((3, 1)), np.zeros((2, 1))))
    with pytest.raises(ShapeMismatchError):
        cp_inner(x, w)


# --- design_row ----------------------------------------------------------------


def test_design_row_zero_input():
    w = CPFactors(2, (np.ones((3, 2)), np.ones((4, 2))))
    x = DenseTensor.from_array(np.zeros((3, 4)))
    np.testing.assert_array_equal(design_row(x, w, 0), np.zeros(6))


def test_design_row_order1_tiles_vectorization():
    rng = np.random.default_rng(12)
    x = random_tensor(rng, (5,))
    w = random_cp(rng, (5,), 3)
    row = design_row(x, w, 0)
    np.testing.assert_array_equal(row, np.tile(vectorize(x), 3))
    lhs = row @ w.factors[0].reshape(-1, order="F")
    assert lhs == pytest.approx(cp_inner(x, w), rel=1e-9)


def test_design_row_contracts_to_cp_inner():
    rng = np.random.default_rng(3)
    x = random_tensor(rng, (4, 3))
    w = random_cp(rng, (4, 3), 2)
    for m in range(2):
        lhs = design_row(x, w, m) @ w.factors[m].reshape(-1, order="F")
        assert lhs == pytest.approx(cp_inner(x, w), rel=1e-9)


# --- randomized equivalence invariants -------------------------------------------


def test_inner_product_equivalences_200_random_pairs():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        order = int(rng.integers(1, 5))
        dims = tuple(int(rng.integers(1, 5)) for _ in range(order))
        x, y = random_tensor(rng, dims), random_tensor(rng, dims)
        ip = inner_product(x, y)
        bound = 1e-12 * np.linalg.norm(x.data) * np.linalg.norm(y.data) + 1e-300
        assert abs(ip - float(np.dot(vectorize(x), vectorize(y)))) <= bound
        for m in range(order):
            frob = float(np.sum(matricize(x, m) * matricize(y, m)))
            assert abs(ip - frob) <= bound


def test_cp_inner_equivalence_random_instances():
    rng = np.random.default_rng(77)
    for _ in range(50):
        order = int(rng.integers(1, 4))
        dims = tuple(int(rng.integers(2, 5)) for _ in range(order))
        rank = int(rng.integers(1, 4))
        x, w = random_tensor(rng, dims), random_cp(rng, dims, rank)
        direct = cp_inner(x, w)
        via_full = inner_product(x, cp_reconstruct(w))
        assert direct == pytest.approx(via_full, rel=1e-9, abs=1e-12)


def test_order1_inner_is_plain_dot():
    rng = np.random.default_rng(13)
    a, b = rng.normal(size=7), rng.normal(size=7)
    x, y = DenseTensor.from_array(a), DenseTensor.from_array(b)
    assert inner_product(x, y) == float(np.dot(a, b))


@settings(deadline=None, max_examples=50)
@given(
    dims=st.lists(st.integers(1, 4), min_size=1, max_size=4).map(tuple),
    seed=st.integers(0, 2**31),
)
def test_vectorize_matricize_consistency_property(dims, seed):
    rng = np.random.default_rng(seed)
    x, y = random_tensor(rng, dims), random_tensor(rng, dims)
    ip = inner_product(x, y)
    bound = 1e-12 * np.linalg.norm(x.data) * np.linalg.norm(y.data) + 1e-300
    assert abs(ip - float(np.dot(vectorize(x), vectorize(y)))) <= bound
    for m in range(len(dims)):
        assert abs(ip - float(np.sum(matricize(x, m) * matricize(y, m)))) <= bound


# --- stacked helpers -------------------------------------------------------------


def test_batch_helpers_match_single_sample_ops():
    rng = np.random.default_rng(14)
    dims = (3, 4, 2)
    batch = rng.normal(size=(5,) + dims)
    tensors = [DenseTensor.from_array(batch[n]) for n in range(5)]
    vec = batch_vectorize(batch)
    for n, t in enumerate(tensors):
        np.testing.assert_array_equal(vec[n], vectorize(t))
    for m in range(len(dims)):
        unf = batch_matricize(batch, m)
        for n, t in enumerate(tensors):
            np.testing.assert_array_equal(unf[n], matricize(t, m))
    w = random_cp(rng, dims, 2)
    for m in range(len(dims)):
        phi = batch_design_matrix(batch_matricize(batch, m), cofactor_matrix(w, m))
        for n, t in enumerate(tensors):
            np.testing.assert_array_equal(phi[n], design_row(t, w, m))


# --- construction invariants -----------------------------------------------------


def test_dense_tensor_validates_length():
    with pytest.raises(ShapeMismatchError):
        DenseTensor(dims=(2, 3), data=np.zeros(5))


def test_dense_tensor_immutable():
    t = DenseTensor.from_array(np.eye(2))
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_cp_factors_validate_rank_consistency():
    with pytest.raises(ShapeMismatchError):
        CPFactors(2, (np.zeros((3, 2)), np.zeros((3, 3))))
    with pytest.raises(ValueError):
        CPFactors(0, (np.zeros((3, 1)),))
