"""Dense tensors, CP-factored weights, and the multilinear kernel.

Conventions (fixed once, everything else is derived from them):

* Flat storage and ``vectorize`` order entries with the *first* index varying
  fastest (column-major for matrices).
* ``matricize(X, mode)`` puts mode ``mode`` on the rows; columns run over the
  remaining modes in increasing order, lower modes varying fastest.
* ``khatri_rao(A, B)`` takes columnwise Kronecker products in which the first
  factor's index varies fastest, matching ``vectorize``.
* The co-factor chain for mode ``m`` multiplies the remaining factor matrices
  in increasing mode order, so that
  ``matricize(cp_reconstruct(W), m) == W.factors[m] @ cofactor_matrix(W, m).T``
  holds exactly for every mode.  For order-1 tensors the chain is the 1 x R
  all-ones matrix, which makes vectors a plain special case.

All arrays are float64; tensors and factor sets are immutable after
construction and safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeMismatchError

__all__ = [
    "DenseTensor",
    "CPFactors",
    "inner_product",
    "matricize",
    "vectorize",
    "khatri_rao",
    "cofactor_matrix",
    "cp_reconstruct",
    "cp_inner",
    "design_row",
    "random_factors",
    "stack_tensors",
    "batch_vectorize",
    "batch_matricize",
    "batch_design_matrix",
]


def _frozen_f64(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class DenseTensor:
    """Order-M real tensor with explicit dimensions and flat storage.

    ``data[i_1 + i_2*I_1 + i_3*I_1*I_2 + ...]`` holds entry ``(i_1, ..., i_M)``:
    the first index varies fastest.
    """

    dims: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 1 or any(d < 1 for d in dims):
            raise ValueError(f"dims must be a non-empty tuple of positive ints, got {dims}")
        data = _frozen_f64(np.ravel(self.data), "tensor data")
        if data.size != int(np.prod(dims)):
            raise ShapeMismatchError(
                f"data length {data.size} does not match prod(dims)={int(np.prod(dims))} "
                f"for dims {dims}"
            )
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, arr) -> "DenseTensor":
        """Build from an M-dimensional array (entry (i_1..i_M) = arr[i_1, ..., i_M])."""
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim == 0:
            a = a.reshape(1)
        return cls(dims=a.shape, data=a.reshape(-1, order="F"))

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def array(self) -> np.ndarray:
        """Multi-index view of the flat storage (read-only)."""
        return self.data.reshape(self.dims, order="F")


@dataclass(frozen=True)
class CPFactors:
    """Rank-R CP representation: one I_m x R factor matrix per mode."""

    rank: int
    factors: tuple[np.ndarray, ...]

    def __post_init__(self):
        rank = int(self.rank)
        if rank < 1:
            raise ValueError(f"rank must be positive, got {rank}")
        mats = []
        for m, f in enumerate(self.factors):
            f = np.atleast_2d(np.asarray(f, dtype=np.float64))
            if f.ndim != 2:
                raise ShapeMismatchError(f"factor {m} must be a matrix, got ndim={f.ndim}")
            if f.shape[1] != rank:
                raise ShapeMismatchError(
                    f"factor {m} has {f.shape[1]} columns, expected rank {rank}"
                )
            mats.append(_frozen_f64(f, f"factor {m}"))
        if not mats:
            raise ValueError("at least one factor matrix is required")
        object.__setattr__(self, "rank", rank)
        object.__setattr__(self, "factors", tuple(mats))

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def order(self) -> int:
        return len(self.factors)


def _check_same_dims(a: Sequence[int], b: Sequence[int]):
    if tuple(a) != tuple(b):
        raise ShapeMismatchError(f"dimension mismatch: {tuple(a)} vs {tuple(b)}")


def inner_product(x: DenseTensor, y: DenseTensor) -> float:
    """Sum of elementwise products over all index tuples.

    Both operands must have identical dims.  The reduction runs over the flat
    storage in numpy's deterministic single-threaded order, so repeated calls
    on the same data are bit-identical.
    """
    _check_same_dims(x.dims, y.dims)
    return float(np.dot(x.data, y.data))


def vectorize(x: DenseTensor) -> np.ndarray:
    """Flat view of the tensor, first index fastest (read-only)."""
    return x.data


def matricize(x: DenseTensor, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding: rows index the chosen mode (0-based).

    Columns run over the remaining modes in increasing order with lower modes
    varying fastest.
    """
    if not 0 <= mode < x.order:
        raise ValueError(f"mode {mode} out of range for an order-{x.order} tensor")
    return np.reshape(np.moveaxis(x.array, mode, 0), (x.dims[mode], -1), order="F")


def khatri_rao(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Columnwise Kronecker product; the first factor's index varies fastest.

    ``out[i + j*I, k] == a[i, k] * b[j, k]`` for a of shape (I, K), b of
    shape (J, K).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatchError("khatri_rao expects two matrices")
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatchError(
            f"column-count mismatch: {a.shape} vs {b.shape}"
        )
    i, k = a.shape
    j = b.shape[0]
    return np.einsum("ir,jr->jir", a, b).reshape(i * j, k)


def cofactor_matrix(w: CPFactors, mode: int) -> np.ndarray:
    """Khatri-Rao chain of every factor except ``mode`` (increasing mode order).

    Row ordering matches the column ordering of ``matricize``; for order-1
    factor sets the chain is the 1 x R all-ones matrix.
    """
    if not 0 <= mode < w.order:
        raise ValueError(f"mode {mode} out of range for an order-{w.order} factor set")
    others = [w.factors[m] for m in range(w.order) if m != mode]
    if not others:
        return np.ones((1, w.rank))
    return reduce(khatri_rao, others)


def cp_reconstruct(w: CPFactors) -> DenseTensor:
    """Materialize the sum of R rank-one tensors described by the factors."""
    full_chain = reduce(khatri_rao, w.factors)
    flat = full_chain @ np.ones(w.rank)
    return DenseTensor(dims=w.dims, data=flat)


def cp_inner(x: DenseTensor, w: CPFactors) -> float:
    """Inner product of a dense tensor with a CP-factored tensor.

    Evaluated as the Frobenius product of ``X_(0) @ cofactor`` with the mode-0
    factor; the full weight tensor is never materialized.
    """
    _check_same_dims(x.dims, w.dims)
    z = matricize(x, 0) @ cofactor_matrix(w, 0)
    return float(np.sum(z * w.factors[0]))


def design_row(x: DenseTensor, w: CPFactors, mode: int) -> np.ndarray:
    """vec(X_(mode) @ cofactor) — the row a sample contributes to the mode's
    least-squares design.  Satisfies
    ``design_row(x, w, m) @ vec(w.factors[m]) == cp_inner(x, w)``
    where vec stacks columns (first index fastest).
    """
    _check_same_dims(x.dims, w.dims)
    z = matricize(x, mode) @ cofactor_matrix(w, mode)
    return z.reshape(-1, order="F")


def random_factors(
    dims: Sequence[int], rank: int, rng: np.random.Generator
) -> CPFactors:
    """Seeded factor initialization: entries i.i.d. normal(0, 1/sqrt(I_m * R))."""
    mats = [rng.normal(0.0, 1.0 / np.sqrt(d * rank), size=(d, rank)) for d in dims]
    return CPFactors(rank=rank, factors=tuple(mats))


# --- stacked-sample helpers ------------------------------------------------
#
# Fits operate on all samples at once; these mirror the single-tensor
# operations on arrays of shape (N, I_1, ..., I_M).


def stack_tensors(tensors: Iterable[DenseTensor]) -> np.ndarray:
    """Stack same-dims tensors into an (N, I_1, ..., I_M) array."""
    tensors = list(tensors)
    if not tensors:
        raise ValueError("cannot stack an empty tensor list")
    dims = tensors[0].dims
    for t in tensors[1:]:
        _check_same_dims(dims, t.dims)
    return np.stack([t.array for t in tensors])


def batch_vectorize(batch: np.ndarray) -> np.ndarray:
    """Per-sample vectorization of an (N, I_1, ..., I_M) stack -> (N, prod I)."""
    n = batch.shape[0]
    rev = (0,) + tuple(range(batch.ndim - 1, 0, -1))
    return batch.transpose(rev).reshape(n, -1)


def batch_matricize(batch: np.ndarray, mode: int) -> np.ndarray:
    """Per-sample mode unfolding of an (N, I_1, ..., I_M) stack -> (N, I_m, P)."""
    if not 0 <= mode < batch.ndim - 1:
        raise ValueError(f"mode {mode} out of range for stacked order-{batch.ndim - 1} tensors")
    t = np.moveaxis(batch, mode + 1, 1)
    rev = (0, 1) + tuple(range(t.ndim - 1, 1, -1))
    t = t.transpose(rev)
    return np.ascontiguousarray(t).reshape(batch.shape[0], batch.shape[mode + 1], -1)


def batch_design_matrix(unfolded: np.ndarray, cofactor: np.ndarray) -> np.ndarray:
    """Rows ``vec(X_n,(m) @ cofactor)`` for a pre-unfolded (N, I_m, P) stack."""
    z = unfolded @ cofactor  # (N, I_m, R)
    n, i_m, r = z.shape
    return z.transpose(0, 2, 1).reshape(n, i_m * r)
