"""Multi-class logistic regression with CP-factored per-class weight tensors.

Class scores are inner products with factored weights plus biases, pushed
through a max-subtracted softmax.  Labels may be soft (row-stochastic), so the
same trainer fits hard classification problems and the mixture gate.  Training
minimizes the regularized negative log-likelihood with exact analytic
gradients under a limited-memory quasi-Newton method.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.optimize

from .data import RegressionDataset, soft_labels
from .errors import DataError, NumericalError, ShapeMismatchError
from .tensors import (
    CPFactors,
    DenseTensor,
    cofactor_matrix,
    cp_inner,
    cp_reconstruct,
    random_factors,
)

__all__ = [
    "LogisticFitOptions",
    "LogisticFitReport",
    "TLRModel",
    "tlr_posterior",
    "tlr_posterior_many",
    "tlr_nll_and_grad",
    "tlr_fit",
]


@dataclass(frozen=True)
class LogisticFitOptions:
    """Quasi-Newton controls: gradient infinity-norm tolerance, iteration cap,
    RNG seed, and L-BFGS history length."""

    gtol: float = 1e-5
    max_iters: int = 500
    seed: int = 0
    lbfgs_history: int = 10


@dataclass
class LogisticFitReport:
    initial_nll: float = float("nan")
    final_nll: float = float("nan")
    n_iters: int = 0
    grad_inf_norm: float = float("nan")
    converged: bool = False


@dataclass(frozen=True)
class TLRModel:
    """Per-class CP weight factors and biases for a softmax classifier."""

    weights: tuple[CPFactors, ...]
    biases: np.ndarray
    reg: float
    report: Optional[LogisticFitReport] = None

    def __post_init__(self):
        # C=1 is allowed as the degenerate gate of a single-expert mixture
        # (posterior identically 1); fitting requires C >= 2.
        if len(self.weights) < 1:
            raise ValueError("a softmax model needs at least 1 class")
        dims = self.weights[0].dims
        rank = self.weights[0].rank
        for i, w in enumerate(self.weights[1:], start=1):
            if w.dims != dims or w.rank != rank:
                raise ShapeMismatchError(
                    f"class {i} factors have dims {w.dims} rank {w.rank}, "
                    f"expected dims {dims} rank {rank}"
                )
        biases = np.asarray(self.biases, dtype=np.float64)
        if biases.shape != (len(self.weights),):
            raise ShapeMismatchError(
                f"biases shape {biases.shape} does not match {len(self.weights)} classes"
            )
        biases = biases.copy()
        biases.flags.writeable = False
        object.__setattr__(self, "biases", biases)

    @property
    def n_classes(self) -> int:
        return len(self.weights)

    @property
    def rank(self) -> int:
        return self.weights[0].rank

    @property
    def dims(self) -> tuple[int, ...]:
        return self.weights[0].dims


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _dense_class_weights(model: TLRModel) -> np.ndarray:
    """(prod dims, C) matrix of reconstructed class weight vectors."""
    return np.column_stack([cp_reconstruct(w).data for w in model.weights])


def tlr_posterior(model: TLRModel, x: DenseTensor) -> np.ndarray:
    """Class posterior probabilities for one input (sums to 1)."""
    scores = np.array([cp_inner(x, w) for w in model.weights]) + model.biases
    return _softmax_rows(scores)


def tlr_posterior_many(model: TLRModel, data: RegressionDataset) -> np.ndarray:
    """(N, C) posterior matrix for a dataset."""
    if data.dims != model.dims:
        raise ShapeMismatchError(f"dimension mismatch: {data.dims} vs {model.dims}")
    scores = data.vectorized() @ _dense_class_weights(model) + model.biases
    return _softmax_rows(scores)


# --- flat parameter packing -------------------------------------------------
#
# Order: for each class, each mode's factor matrix (columns stacked, first
# index fastest), then that class's bias.  The order is fixed so seeded runs
# are reproducible; nothing observable depends on it.


def _pack(weights: Sequence[CPFactors], biases: np.ndarray) -> np.ndarray:
    parts = []
    for w, b in zip(weights, biases):
        for f in w.factors:
            parts.append(f.reshape(-1, order="F"))
        parts.append(np.array([b]))
    return np.concatenate(parts)


def _unpack(
    theta: np.ndarray, dims: tuple[int, ...], rank: int, n_classes: int
) -> tuple[list[CPFactors], np.ndarray]:
    weights = []
    biases = np.empty(n_classes)
    pos = 0
    for i in range(n_classes):
        mats = []
        for d in dims:
            block = theta[pos : pos + d * rank]
            mats.append(block.reshape((d, rank), order="F"))
            pos += d * rank
        weights.append(CPFactors(rank, tuple(mats)))
        biases[i] = theta[pos]
        pos += 1
    return weights, biases


def _nll_and_grad_flat(
    theta: np.ndarray,
    data: RegressionDataset,
    labels: np.ndarray,
    dims: tuple[int, ...],
    rank: int,
    reg: float,
) -> tuple[float, np.ndarray]:
    n_classes = labels.shape[1]
    weights, biases = _unpack(theta, dims, rank, n_classes)
    xvec = data.vectorized()

    dense = np.column_stack([cp_reconstruct(w).data for w in weights])
    scores = xvec @ dense + biases
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1)) + scores.max(axis=1)
    nll = float(-(labels * scores).sum() + log_z.sum())
    penalty = 0.0
    for w in weights:
        for f in w.factors:
            penalty += float(np.sum(f * f))
    nll += reg * penalty

    post = _softmax_rows(scores)
    coef = post - labels  # (N, C)
    grad = np.empty_like(theta)
    pos = 0
    for i in range(n_classes):
        # sum_n coef[n, i] * X_n, folded back to tensor shape
        t_flat = xvec.T @ coef[:, i]
        t_arr = t_flat.reshape(dims, order="F")
        for m, d in enumerate(dims):
            unfolded = np.reshape(np.moveaxis(t_arr, m, 0), (d, -1), order="F")
            g = unfolded @ cofactor_matrix(weights[i], m) + 2.0 * reg * weights[i].factors[m]
            grad[pos : pos + d * rank] = g.reshape(-1, order="F")
            pos += d * rank
        grad[pos] = coef[:, i].sum()
        pos += 1
    return nll, grad


def tlr_nll_and_grad(
    model: TLRModel, data: RegressionDataset, labels
) -> tuple[float, tuple[list[list[np.ndarray]], np.ndarray]]:
    """Regularized negative log-likelihood and its exact gradient.

    Returns ``(nll, (factor_grads, bias_grads))`` where ``factor_grads[i][m]``
    matches the shape of class i's mode-m factor matrix.
    """
    labels = soft_labels(labels)
    if labels.shape[0] != data.n_samples:
        raise ShapeMismatchError(
            f"labels have {labels.shape[0]} rows for {data.n_samples} samples"
        )
    if labels.shape[1] != model.n_classes:
        raise ShapeMismatchError(
            f"labels have {labels.shape[1]} columns for {model.n_classes} classes"
        )
    theta = _pack(model.weights, model.biases)
    nll, flat_grad = _nll_and_grad_flat(
        theta, data, labels, model.dims, model.rank, model.reg
    )
    factor_grads: list[list[np.ndarray]] = []
    bias_grads = np.empty(model.n_classes)
    pos = 0
    rank = model.rank
    for i in range(model.n_classes):
        mats = []
        for d in model.dims:
            mats.append(flat_grad[pos : pos + d * rank].reshape((d, rank), order="F"))
            pos += d * rank
        factor_grads.append(mats)
        bias_grads[i] = flat_grad[pos]
        pos += 1
    return nll, (factor_grads, bias_grads)


def tlr_fit(
    data: RegressionDataset,
    labels,
    rank: int,
    reg: float,
    opts: LogisticFitOptions = LogisticFitOptions(),
    init: Optional[tuple[Sequence[CPFactors], np.ndarray]] = None,
) -> TLRModel:
    """Fit by L-BFGS on the regularized negative log-likelihood.

    Stops when the gradient infinity-norm drops below ``opts.gtol`` or after
    ``opts.max_iters`` iterations; the returned model's objective never
    exceeds the starting point's.  ``init`` warm-starts from existing
    parameters.
    """
    labels = soft_labels(labels)
    n, n_classes = labels.shape
    if n != data.n_samples:
        raise ShapeMismatchError(f"labels have {n} rows for {data.n_samples} samples")
    if n < n_classes:
        raise DataError(f"need at least as many samples ({n}) as classes ({n_classes})")
    if n_classes < 2:
        raise DataError("fitting needs at least 2 classes")
    if rank < 1:
        raise ValueError(f"rank must be positive, got {rank}")
    if reg < 0:
        raise ValueError(f"reg must be nonnegative, got {reg}")

    dims = data.dims
    if init is not None:
        weights, biases = init
        weights = list(weights)
        biases = np.asarray(biases, dtype=np.float64)
        if len(weights) != n_classes or biases.shape != (n_classes,):
            raise ShapeMismatchError("warm start must provide one factor set and bias per class")
        for w in weights:
            if w.dims != dims or w.rank != rank:
                raise ShapeMismatchError(
                    f"warm-start factors have dims {w.dims} rank {w.rank}, "
                    f"expected {dims} rank {rank}"
                )
    else:
        rng = np.random.default_rng(opts.seed)
        weights = [random_factors(dims, rank, rng) for _ in range(n_classes)]
        biases = np.zeros(n_classes)

    theta0 = _pack(weights, biases)
    f0, _ = _nll_and_grad_flat(theta0, data, labels, dims, rank, reg)
    if not np.isfinite(f0):
        raise NumericalError("objective is non-finite at the starting point")

    result = scipy.optimize.minimize(
        _nll_and_grad_flat,
        theta0,
        args=(data, labels, dims, rank, reg),
        method="L-BFGS-B",
        jac=True,
        options={
            "maxcor": opts.lbfgs_history,
            "maxiter": opts.max_iters,
            "gtol": opts.gtol,
            "ftol": 1e-13,
        },
    )
    if not np.isfinite(result.fun):
        raise NumericalError("optimizer diverged to a non-finite objective")

    # L-BFGS-B never accepts an ascent step, but guard the contract anyway.
    if result.fun <= f0:
        theta, final = result.x, float(result.fun)
    else:
        theta, final = theta0, f0
    fitted_weights, fitted_biases = _unpack(theta, dims, rank, n_classes)

    _, g = _nll_and_grad_flat(theta, data, labels, dims, rank, reg)
    grad_norm = float(np.max(np.abs(g)))
    report = LogisticFitReport(
        initial_nll=f0,
        final_nll=final,
        n_iters=int(result.nit),
        grad_inf_norm=grad_norm,
        converged=grad_norm <= opts.gtol,
    )
    return TLRModel(
        weights=tuple(fitted_weights),
        biases=fitted_biases,
        reg=reg,
        report=report,
    )
