"""Datasets of tensor inputs with vector targets, plus label utilities."""

from __future__ import annotations

from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import DataError, ShapeMismatchError
from .tensors import DenseTensor, batch_matricize, batch_vectorize, stack_tensors

__all__ = ["RegressionDataset", "soft_labels", "one_hot"]


class RegressionDataset:
    """N tensor inputs (same dims), an N x D target matrix, optional weights.

    Inputs are held as one stacked (N, I_1, ..., I_M) array; ``tensor(n)``
    returns sample ``n`` as a :class:`DenseTensor`.  Unfoldings and the
    vectorized view are computed lazily and cached — they are reused heavily
    by the alternating solvers.
    """

    def __init__(
        self,
        inputs: Union[np.ndarray, Sequence[DenseTensor]],
        targets,
        sample_weights: Optional[Iterable[float]] = None,
    ):
        if isinstance(inputs, np.ndarray):
            batch = np.asarray(inputs, dtype=np.float64)
            if batch.ndim < 2:
                raise ShapeMismatchError(
                    "stacked inputs need at least 2 axes: (N, I_1, ..., I_M)"
                )
        else:
            batch = stack_tensors(inputs)
        if batch.shape[0] < 1:
            raise DataError("dataset needs at least one sample")
        if not np.all(np.isfinite(batch)):
            raise DataError("inputs contain non-finite values")

        y = np.asarray(targets, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2 or y.shape[0] != batch.shape[0]:
            raise ShapeMismatchError(
                f"targets must be (N, D) with N={batch.shape[0]}, got {y.shape}"
            )
        if not np.all(np.isfinite(y)):
            raise DataError("targets contain non-finite values")

        if sample_weights is None:
            w = None
        else:
            w = np.asarray(list(sample_weights) if not isinstance(sample_weights, np.ndarray) else sample_weights, dtype=np.float64)
            if w.shape != (batch.shape[0],):
                raise ShapeMismatchError(
                    f"sample_weights must have shape ({batch.shape[0]},), got {w.shape}"
                )
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise DataError("sample_weights must be finite and nonnegative")
            if w.sum() <= 0:
                raise DataError("sample_weights must have positive sum")

        self._batch = batch
        self.targets = y
        self.sample_weights = w
        self._unfoldings: dict[int, np.ndarray] = {}
        self._vectorized: Optional[np.ndarray] = None
        self._gram: Optional[np.ndarray] = None

    # -- basic shape info ---------------------------------------------------

    @property
    def n_samples(self) -> int:
        return self._batch.shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        return self._batch.shape[1:]

    @property
    def order(self) -> int:
        return self._batch.ndim - 1

    @property
    def n_outputs(self) -> int:
        return self.targets.shape[1]

    @property
    def inputs(self) -> np.ndarray:
        """Stacked inputs, shape (N, I_1, ..., I_M)."""
        return self._batch

    def tensor(self, n: int) -> DenseTensor:
        return DenseTensor.from_array(self._batch[n])

    def weights_or_ones(self) -> np.ndarray:
        if self.sample_weights is None:
            return np.ones(self.n_samples)
        return self.sample_weights

    # -- cached derived views -----------------------------------------------

    def unfolding(self, mode: int) -> np.ndarray:
        """(N, I_m, P) stack of per-sample mode unfoldings (cached)."""
        if mode not in self._unfoldings:
            self._unfoldings[mode] = batch_matricize(self._batch, mode)
        return self._unfoldings[mode]

    def vectorized(self) -> np.ndarray:
        """(N, prod I) matrix of per-sample vectorizations (cached)."""
        if self._vectorized is None:
            self._vectorized = np.ascontiguousarray(batch_vectorize(self._batch))
        return self._vectorized

    def gram(self) -> np.ndarray:
        """N x N Gram matrix of vectorized inputs (cached; used by dual solves)."""
        if self._gram is None:
            v = self.vectorized()
            self._gram = v @ v.T
        return self._gram

    def with_weights(self, sample_weights) -> "RegressionDataset":
        """Same data, different sample weights; caches are shared."""
        ds = RegressionDataset.__new__(RegressionDataset)
        ds._batch = self._batch
        ds.targets = self.targets
        w = np.asarray(sample_weights, dtype=np.float64)
        if w.shape != (self.n_samples,):
            raise ShapeMismatchError(
                f"sample_weights must have shape ({self.n_samples},), got {w.shape}"
            )
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise DataError("sample_weights must be finite and nonnegative")
        if w.sum() <= 0:
            raise DataError("sample_weights must have positive sum")
        ds.sample_weights = w
        ds._unfoldings = self._unfoldings
        ds._vectorized = self._vectorized
        ds._gram = self._gram
        return ds

    def output_dim(self, d: int) -> "RegressionDataset":
        """Scalar-target view selecting output dimension ``d``; caches are shared."""
        if not 0 <= d < self.n_outputs:
            raise ValueError(f"output dim {d} out of range for D={self.n_outputs}")
        ds = RegressionDataset.__new__(RegressionDataset)
        ds._batch = self._batch
        ds.targets = self.targets[:, d : d + 1]
        ds.sample_weights = self.sample_weights
        ds._unfoldings = self._unfoldings
        ds._vectorized = self._vectorized
        ds._gram = self._gram
        return ds

    def flattened(self) -> "RegressionDataset":
        """Order-1 copy: every input vectorized (for the vector baselines)."""
        ds = RegressionDataset(self.vectorized().copy(), self.targets, self.sample_weights)
        return ds


def soft_labels(labels) -> np.ndarray:
    """Validate an N x C soft-label matrix: nonnegative rows summing to 1."""
    arr = np.asarray(labels, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"soft labels must be an N x C matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("soft labels contain non-finite values")
    if np.any(arr < 0):
        raise DataError("soft labels must be nonnegative")
    sums = arr.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-9):
        bad = int(np.argmax(np.abs(sums - 1.0)))
        raise DataError(f"soft-label row {bad} sums to {sums[bad]!r}, expected 1")
    return arr


def one_hot(class_indices, n_classes: int) -> np.ndarray:
    """Hard labels as the 0/1 special case of soft labels."""
    idx = np.asarray(class_indices)
    if idx.ndim != 1:
        raise ShapeMismatchError("class indices must be a 1-D sequence")
    if np.any((idx < 0) | (idx >= n_classes)):
        raise DataError(f"class indices must lie in [0, {n_classes})")
    out = np.zeros((idx.size, n_classes))
    out[np.arange(idx.size), idx.astype(int)] = 1.0
    return out
