"""Tensor-variate mixture of experts trained by expectation-maximization.

A softmax gate with CP-factored weights assigns input-dependent mixing
probabilities to Gaussian experts whose means are CP-factored linear models
(one weight tensor per output dimension).  The E-step computes
responsibilities in log space; the M-step reuses the weighted ridge fit for
every (expert, output-dim) pair, updates covariances in closed form, and
refits the gate on the responsibilities as soft labels.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import RegressionDataset, soft_labels
from .errors import (
    DataError,
    DegenerateComponentError,
    ModelIntegrityError,
    NumericalError,
    ShapeMismatchError,
)
from .logistic import LogisticFitOptions, TLRModel, tlr_fit, tlr_posterior
from .ridge import RidgeFitOptions, TRRModel, trr_fit
from .tensors import CPFactors, DenseTensor, cp_inner, cp_reconstruct

__all__ = [
    "MixtureFitOptions",
    "EMFitReport",
    "Expert",
    "TMEModel",
    "expert_mean",
    "tme_density",
    "tme_predict",
    "tme_predict_many",
    "e_step",
    "m_step",
    "tme_fit",
    "bic",
    "responsibility_floor",
]


@dataclass(frozen=True)
class MixtureFitOptions:
    """EM controls.

    ``expert_sweeps`` and ``gate_iters`` cap the inner fits per EM iteration
    (partial M-steps still ascend the penalized objective); ``cov_floor_scale``
    sets the covariance diagonal ridge relative to the output variance.
    """

    tol: float = 1e-5
    max_em_iters: int = 100
    max_restarts: int = 5
    expert_sweeps: int = 20
    gate_iters: int = 100
    seed: int = 0
    perturb_scale: float = 0.01
    cov_floor_scale: float = 1e-6


@dataclass
class EMFitReport:
    loglik_trace: list[float] = field(default_factory=list)
    n_iters: int = 0
    restarts: int = 0
    converged: bool = False


@dataclass(frozen=True)
class Expert:
    """Gaussian expert: one CP weight tensor per output dim, bias, covariance."""

    mean_weights: tuple[CPFactors, ...]
    bias: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        if not self.mean_weights:
            raise ValueError("an expert needs at least one output dimension")
        dims = self.mean_weights[0].dims
        rank = self.mean_weights[0].rank
        for w in self.mean_weights[1:]:
            if w.dims != dims or w.rank != rank:
                raise ShapeMismatchError("all output dims must share weight dims and rank")
        d = len(self.mean_weights)
        bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if bias.shape != (d,):
            raise ShapeMismatchError(f"bias must have length {d}, got {bias.shape}")
        cov = np.asarray(self.cov, dtype=np.float64)
        if cov.shape != (d, d):
            raise ShapeMismatchError(f"cov must be {d}x{d}, got {cov.shape}")
        if not np.all(np.isfinite(bias)) or not np.all(np.isfinite(cov)):
            raise ModelIntegrityError("expert parameters contain non-finite values")
        if np.max(np.abs(cov - cov.T)) > 1e-8 * max(1.0, np.max(np.abs(cov))):
            raise ModelIntegrityError("covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        bias.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "cov", cov)

    @property
    def n_outputs(self) -> int:
        return len(self.mean_weights)

    @property
    def rank(self) -> int:
        return self.mean_weights[0].rank

    @property
    def dims(self) -> tuple[int, ...]:
        return self.mean_weights[0].dims


@dataclass(frozen=True)
class TMEModel:
    """Softmax gate plus Gaussian experts over a shared tensor input space."""

    gate: TLRModel
    experts: tuple[Expert, ...]
    reg_weights: float
    report: Optional[EMFitReport] = None

    def __post_init__(self):
        if len(self.experts) != self.gate.n_classes:
            raise ShapeMismatchError(
                f"{len(self.experts)} experts for a {self.gate.n_classes}-class gate"
            )
        dims = self.gate.dims
        d = self.experts[0].n_outputs
        for e in self.experts:
            if e.dims != dims:
                raise ShapeMismatchError("experts and gate must share input dims")
            if e.n_outputs != d:
                raise ShapeMismatchError("experts must share the output dimension")

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    @property
    def n_outputs(self) -> int:
        return self.experts[0].n_outputs

    @property
    def dims(self) -> tuple[int, ...]:
        return self.gate.dims

    @property
    def expert_rank(self) -> int:
        return self.experts[0].rank


def responsibility_floor(n_samples: int, n_outputs: int) -> float:
    """Minimum responsibility mass below which a component cannot be refit."""
    return max(n_outputs + 1.0, 0.001 * n_samples)


def expert_mean(model: TMEModel, i: int, x: DenseTensor) -> np.ndarray:
    """Mean prediction of expert ``i`` (0-based): inner products plus bias."""
    if not 0 <= i < model.n_experts:
        raise ValueError(f"expert index {i} out of range for {model.n_experts} experts")
    e = model.experts[i]
    return np.array([cp_inner(x, w) for w in e.mean_weights]) + e.bias


def _dense_expert_weights(expert: Expert) -> np.ndarray:
    return np.column_stack([cp_reconstruct(w).data for w in expert.mean_weights])


def _log_gaussian(diff: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Row-wise log N(diff | 0, cov); raises ModelIntegrityError off the SPD cone."""
    d = cov.shape[0]
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ModelIntegrityError("covariance is not positive definite") from exc
    sol = np.linalg.solve(chol, diff.T)
    with np.errstate(over="ignore"):  # huge residuals legitimately go to -inf
        maha = np.sum(sol * sol, axis=0)
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return -0.5 * (d * np.log(2.0 * np.pi) + log_det + maha)


def _gate_log_posteriors(model: TMEModel, xvec: np.ndarray) -> np.ndarray:
    dense = np.column_stack([cp_reconstruct(w).data for w in model.gate.weights])
    scores = xvec @ dense + model.gate.biases
    shifted = scores - scores.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def tme_density(model: TMEModel, x: DenseTensor, y) -> float:
    """Mixture density at (x, y), evaluated in log space."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if y.shape != (model.n_outputs,):
        raise ShapeMismatchError(f"y must have length {model.n_outputs}, got {y.shape}")
    log_pi = np.log(tlr_posterior(model.gate, x))
    log_terms = np.empty(model.n_experts)
    for i, e in enumerate(model.experts):
        diff = (y - expert_mean(model, i, x))[None, :]
        log_terms[i] = _log_gaussian(diff, e.cov)[0]
    a = log_pi + log_terms
    m = a.max()
    if not np.isfinite(m):
        return 0.0
    return float(np.exp(m + np.log(np.exp(a - m).sum())))


def tme_predict(model: TMEModel, x: DenseTensor) -> np.ndarray:
    """Expectation of the mixture: gate-weighted sum of expert means."""
    pi = tlr_posterior(model.gate, x)
    out = np.zeros(model.n_outputs)
    for i in range(model.n_experts):
        out += pi[i] * expert_mean(model, i, x)
    return out


def tme_predict_many(model: TMEModel, data: RegressionDataset) -> np.ndarray:
    """(N, D) predictions for a dataset."""
    if data.dims != model.dims:
        raise ShapeMismatchError(f"dimension mismatch: {data.dims} vs {model.dims}")
    xvec = data.vectorized()
    pi = np.exp(_gate_log_posteriors(model, xvec))
    out = np.zeros((data.n_samples, model.n_outputs))
    for i, e in enumerate(model.experts):
        means = xvec @ _dense_expert_weights(e) + e.bias
        out += pi[:, i : i + 1] * means
    return out


def e_step(
    model: TMEModel, data: RegressionDataset
) -> tuple[np.ndarray, float, float]:
    """Responsibilities, expected complete-data log-likelihood Q, observed LL.

    Joint log-terms ``log pi + log N`` are normalized per row with
    log-sum-exp; a row whose every component underflows to -inf cannot be
    normalized and raises, naming the sample.
    """
    if data.dims != model.dims:
        raise ShapeMismatchError(f"dimension mismatch: {data.dims} vs {model.dims}")
    if data.n_outputs != model.n_outputs:
        raise ShapeMismatchError(
            f"targets have D={data.n_outputs}, model expects {model.n_outputs}"
        )
    xvec = data.vectorized()
    log_pi = _gate_log_posteriors(model, xvec)
    joint = np.empty_like(log_pi)
    for i, e in enumerate(model.experts):
        means = xvec @ _dense_expert_weights(e) + e.bias
        joint[:, i] = log_pi[:, i] + _log_gaussian(data.targets - means, e.cov)

    row_max = joint.max(axis=1)
    dead = ~np.isfinite(row_max)
    if np.any(dead):
        raise NumericalError(
            f"all mixture components underflowed for sample {int(np.argmax(dead))}"
        )
    lse = row_max + np.log(np.exp(joint - row_max[:, None]).sum(axis=1))
    resp = np.exp(joint - lse[:, None])
    loglik = float(lse.sum())
    with np.errstate(invalid="ignore"):
        q_terms = np.where(resp > 0, resp * joint, 0.0)
    return resp, float(q_terms.sum()), loglik


def m_step(
    model: TMEModel,
    data: RegressionDataset,
    resp: np.ndarray,
    opts: MixtureFitOptions = MixtureFitOptions(),
    degenerate: str = "raise",
) -> TMEModel:
    """One maximization step given responsibilities.

    Each non-degenerate expert is refit per output dimension by the weighted
    ridge solver (warm-started from its current factors), its covariance is
    recomputed from responsibility-weighted residuals plus the diagonal
    floor, and the gate is refit on the responsibilities as soft labels.
    Components whose responsibility mass falls below the floor either raise
    (``degenerate="raise"``, default) or are left untouched
    (``degenerate="keep"``).
    """
    resp = soft_labels(resp)
    if resp.shape != (data.n_samples, model.n_experts):
        raise ShapeMismatchError(
            f"responsibilities must be {(data.n_samples, model.n_experts)}, got {resp.shape}"
        )
    if degenerate not in ("raise", "keep"):
        raise ValueError(f"unknown degenerate policy {degenerate!r}")

    n, d_out = data.n_samples, model.n_outputs
    mass = resp.sum(axis=0)
    floor = responsibility_floor(n, d_out)
    low = np.flatnonzero(mass < floor)
    if low.size and degenerate == "raise":
        i = int(low[0])
        raise DegenerateComponentError(i, float(mass[i]), floor)
    low_set = set(int(i) for i in low)

    var = float(np.var(data.targets))
    cov_floor = opts.cov_floor_scale * (var if var > 0 else 1.0)
    # inner solves should not be coarser than the EM convergence target
    ridge_opts = RidgeFitOptions(
        tol=min(1e-6, opts.tol), max_sweeps=opts.expert_sweeps, seed=opts.seed
    )

    xvec = data.vectorized()
    new_experts = []
    for i, expert in enumerate(model.experts):
        if i in low_set:
            new_experts.append(expert)
            continue
        weighted = data.with_weights(resp[:, i])
        new_w = []
        new_b = np.empty(d_out)
        for d in range(d_out):
            fit = trr_fit(
                weighted.output_dim(d),
                rank=expert.rank,
                reg=model.reg_weights,
                opts=ridge_opts,
                init=(expert.mean_weights[d], float(expert.bias[d])),
            )
            new_w.append(fit.weights)
            new_b[d] = fit.bias
        new_expert_stub = Expert(tuple(new_w), new_b, expert.cov)
        means = xvec @ _dense_expert_weights(new_expert_stub) + new_b
        diff = data.targets - means
        cov = (resp[:, i : i + 1] * diff).T @ diff / mass[i]
        cov[np.diag_indices_from(cov)] += cov_floor
        new_experts.append(Expert(tuple(new_w), new_b, cov))

    if model.gate.n_classes >= 2:
        gate_opts = LogisticFitOptions(max_iters=opts.gate_iters, seed=opts.seed)
        gate = tlr_fit(
            data,
            resp,
            rank=model.gate.rank,
            reg=model.gate.reg,
            opts=gate_opts,
            init=(model.gate.weights, model.gate.biases),
        )
    else:
        gate = model.gate

    return TMEModel(
        gate=gate,
        experts=tuple(new_experts),
        reg_weights=model.reg_weights,
        report=model.report,
    )


def _perturbed(factors: CPFactors, scale: float, rng: np.random.Generator) -> CPFactors:
    mats = []
    for f in factors.factors:
        rms = float(np.sqrt(np.mean(f * f)))
        if rms == 0.0:
            rms = 1.0 / np.sqrt(f.shape[0] * factors.rank)
        mats.append(f + rng.normal(0.0, scale * rms, size=f.shape))
    return CPFactors(factors.rank, tuple(mats))


def _gate_init_factors(
    base: CPFactors, gate_rank: int, rng: np.random.Generator
) -> CPFactors:
    """Adapt the shared ridge solution to the gate rank: keep the leading
    columns, pad extra columns with small random entries."""
    keep = min(base.rank, gate_rank)
    mats = []
    for f in base.factors:
        cols = [f[:, :keep]]
        if gate_rank > keep:
            cols.append(
                rng.normal(0.0, 1.0 / np.sqrt(f.shape[0] * gate_rank), size=(f.shape[0], gate_rank - keep))
            )
        mats.append(np.column_stack(cols))
    return CPFactors(gate_rank, tuple(mats))


def _zero_factors(dims: tuple[int, ...], rank: int) -> CPFactors:
    return CPFactors(rank, tuple(np.zeros((d, rank)) for d in dims))


def tme_fit(
    data: RegressionDataset,
    n_experts: int,
    gate_rank: int,
    expert_rank: int,
    reg_weights: float = 0.1,
    reg_gate: float = 0.1,
    opts: MixtureFitOptions = MixtureFitOptions(),
) -> tuple[TMEModel, EMFitReport]:
    """Fit by EM from a shared ridge-regression initialization.

    Every expert starts from the same per-output-dim ridge fit with a small
    seeded perturbation to break the symmetry that would otherwise pin EM at
    a saddle point; the gate starts neutral (identical classes).  Alternates
    E and M steps until the observed log-likelihood's relative increase drops
    below ``opts.tol``.  A component whose responsibility mass collapses is
    re-perturbed from the shared ridge solution (counted as a restart, at
    most ``opts.max_restarts`` times).
    """
    if n_experts < 1:
        raise ValueError(f"need at least one expert, got {n_experts}")
    if data.n_samples < n_experts:
        raise DataError(
            f"need at least as many samples ({data.n_samples}) as experts ({n_experts})"
        )
    d_out = data.n_outputs
    rng = np.random.default_rng(opts.seed)

    base_opts = RidgeFitOptions(tol=1e-6, max_sweeps=100, seed=opts.seed)
    base_fits: list[TRRModel] = [
        trr_fit(data.output_dim(d), rank=expert_rank, reg=reg_weights, opts=base_opts)
        for d in range(d_out)
    ]
    var = float(np.var(data.targets))
    cov_floor = opts.cov_floor_scale * (var if var > 0 else 1.0)
    cov_init = np.diag([max(f.noise_var, cov_floor) for f in base_fits]) + cov_floor * np.eye(d_out)

    def fresh_expert() -> Expert:
        mw = tuple(_perturbed(base_fits[d].weights, opts.perturb_scale, rng) for d in range(d_out))
        bias = np.array([f.bias for f in base_fits])
        return Expert(mw, bias, cov_init)

    experts = tuple(fresh_expert() for _ in range(n_experts))
    gate_factors = _gate_init_factors(base_fits[0].weights, gate_rank, rng)
    gate = TLRModel(
        weights=(gate_factors,) * n_experts,
        biases=np.zeros(n_experts),
        reg=reg_gate,
    )
    model = TMEModel(gate=gate, experts=experts, reg_weights=reg_weights)

    report = EMFitReport()
    prev_ll = None
    iters = 0
    while iters < opts.max_em_iters:
        resp, _, loglik = e_step(model, data)
        report.loglik_trace.append(loglik)
        if prev_ll is not None and loglik - prev_ll <= opts.tol * max(abs(prev_ll), 1e-10):
            report.converged = True
            break
        prev_ll = loglik
        try:
            model = m_step(model, data, resp, opts)
        except DegenerateComponentError as exc:
            if report.restarts >= opts.max_restarts:
                raise
            report.restarts += 1
            revived = list(model.experts)
            revived[exc.component] = fresh_expert()
            model = dataclasses.replace(model, experts=tuple(revived))
            prev_ll = None
            continue
        iters += 1
    report.n_iters = iters
    model = dataclasses.replace(model, report=report)
    return model, report


def bic(model: TMEModel, data: RegressionDataset) -> float:
    """Bayesian information criterion from the unregularized observed LL.

    Parameter count: gate factors and biases for every class (zero when a
    single expert leaves the gate with no effective parameters), expert
    factors and biases per output dim, and the free entries of each
    covariance.
    """
    _, _, loglik = e_step(model, data)
    dims_sum = sum(model.dims)
    c = model.n_experts
    d = model.n_outputs
    k_gate = c * (model.gate.rank * dims_sum + 1) if c >= 2 else 0
    k_experts = c * d * (model.expert_rank * dims_sum + 1)
    k_cov = c * (d * (d + 1)) // 2
    return -2.0 * loglik + (k_gate + k_experts + k_cov) * np.log(data.n_samples)
