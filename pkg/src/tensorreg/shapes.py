"""Binary 2D-shape ground truth and the synthetic weight-recovery generator.

The generator draws i.i.d. standard-normal matrices and produces scalar
targets from a two-expert mixture whose gate weight is a cross, and whose
expert weights are a disk and a t-shape, all with zero biases; Gaussian noise
is added at a chosen fraction of the empirical standard deviation of the
noiseless targets.  Recovery error is measured entrywise against the true
masks, minimized over the expert permutation (with the matching gate sign
flip).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import RegressionDataset
from .errors import ShapeMismatchError
from .mixture import TMEModel
from .tensors import cp_reconstruct

__all__ = [
    "SHAPE_KINDS",
    "make_shape",
    "ShapeTruth",
    "gen_shape_dataset",
    "weight_rmse",
    "recovered_weight_matrices",
]

SHAPE_KINDS = ("cross", "disk", "tshape")


def make_shape(kind: str, size: int = 64) -> np.ndarray:
    """Centered binary mask of the requested kind on a size x size grid.

    cross and tshape are unions of two axis-aligned bars (matrix rank 2);
    the disk has no low-rank structure (rank > 3 for size >= 8).
    """
    if size < 8:
        raise ValueError(f"size must be at least 8, got {size}")
    mask = np.zeros((size, size))
    band = slice(size // 2 - size // 8, size // 2 + size // 8)
    if kind == "cross":
        mask[band, :] = 1.0
        mask[:, band] = 1.0
    elif kind == "tshape":
        top = slice(size // 8, size // 8 + size // 4)
        stem_rows = slice(size // 8 + size // 4, 7 * size // 8)
        mask[top, :] = 1.0
        mask[stem_rows, band] = 1.0
    elif kind == "disk":
        c = (size - 1) / 2.0
        ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        mask[(ii - c) ** 2 + (jj - c) ** 2 <= (size / 4.0) ** 2] = 1.0
    else:
        raise ValueError(f"unknown shape kind {kind!r}; expected one of {SHAPE_KINDS}")
    return mask


@dataclass(frozen=True)
class ShapeTruth:
    """Ground-truth weight matrices: gate, expert 1, expert 2."""

    gate: np.ndarray
    expert1: np.ndarray
    expert2: np.ndarray

    @classmethod
    def default(cls, size: int = 64) -> "ShapeTruth":
        return cls(
            gate=make_shape("cross", size),
            expert1=make_shape("disk", size),
            expert2=make_shape("tshape", size),
        )

    @property
    def size(self) -> int:
        return self.gate.shape[0]


def gen_shape_dataset(
    n_samples: int,
    noise_ratio: float,
    seed: int,
    size: int = 64,
    truth: "ShapeTruth | None" = None,
) -> tuple[RegressionDataset, ShapeTruth]:
    """Draw the two-expert synthetic dataset.

    Inputs are i.i.d. standard normal size x size matrices.  The noiseless
    target mixes the two expert responses with a logistic gate on the cross
    inner product; noise has standard deviation ``noise_ratio`` times the
    empirical std of the noiseless targets (drawn after all of them are
    known).  Deterministic given the seed.
    """
    if truth is None:
        truth = ShapeTruth.default(size)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_samples, size, size))
    g = np.einsum("nij,ij->n", x, truth.gate)
    s1 = np.einsum("nij,ij->n", x, truth.expert1)
    s2 = np.einsum("nij,ij->n", x, truth.expert2)
    p = 1.0 / (1.0 + np.exp(-g))
    y_mean = p * s1 + (1.0 - p) * s2
    sigma = noise_ratio * float(np.std(y_mean))
    y = y_mean + rng.normal(0.0, 1.0, size=n_samples) * sigma if sigma > 0 else y_mean.copy()
    return RegressionDataset(x, y), truth


def _recovered_matrices(model: TMEModel, size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if model.n_experts != 2 or model.n_outputs != 1:
        raise ValueError(
            f"weight recovery needs a 2-expert scalar-output model, got "
            f"C={model.n_experts}, D={model.n_outputs}"
        )
    dims = model.dims
    if dims not in ((size, size), (size * size,)):
        raise ValueError(f"model dims {dims} do not match a {size}x{size} truth")

    # the flat weight vector is first-index-fastest, so folding the vector
    # baseline's order-1 weights back onto the grid is the same reshape
    def as_matrix(flat: np.ndarray) -> np.ndarray:
        return flat.reshape((size, size), order="F")
    gate_diff = as_matrix(
        cp_reconstruct(model.gate.weights[0]).data - cp_reconstruct(model.gate.weights[1]).data
    )
    w1 = as_matrix(cp_reconstruct(model.experts[0].mean_weights[0]).data)
    w2 = as_matrix(cp_reconstruct(model.experts[1].mean_weights[0]).data)
    return gate_diff, w1, w2


def weight_rmse(truth: ShapeTruth, model: TMEModel) -> float:
    """Entrywise recovery RMSE over (gate difference, expert 1, expert 2).

    The gate is compared as the class-0-minus-class-1 difference because
    softmax weights are shift-invariant.  Both expert orderings are scored
    (swapping experts negates the gate difference); the smaller RMSE wins.
    """
    gate_diff, w1, w2 = _recovered_matrices(model, truth.size)
    direct = np.concatenate(
        [(gate_diff - truth.gate).ravel(), (w1 - truth.expert1).ravel(), (w2 - truth.expert2).ravel()]
    )
    swapped = np.concatenate(
        [(-gate_diff - truth.gate).ravel(), (w2 - truth.expert1).ravel(), (w1 - truth.expert2).ravel()]
    )
    return float(
        min(np.sqrt(np.mean(direct**2)), np.sqrt(np.mean(swapped**2)))
    )


def recovered_weight_matrices(model: TMEModel, size: int) -> dict[str, np.ndarray]:
    """Recovered (gate difference, expert) matrices keyed for report images."""
    gate_diff, w1, w2 = _recovered_matrices(model, size)
    return {"gate": gate_diff, "expert1": w1, "expert2": w2}
