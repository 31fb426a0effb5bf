"""Sweep harness for the synthetic weight-recovery study.

Runs seeded grids over (gate rank, expert rank), sample size, and noise
level, recording recovery RMSE, BIC, and EM iteration counts per cell.  Cells
are independent; with ``jobs > 1`` they run in separate processes and results
are assembled in grid order either way, so outputs are identical.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import io as tio
from .mixture import MixtureFitOptions, bic, tme_fit
from .shapes import ShapeTruth, gen_shape_dataset, recovered_weight_matrices, weight_rmse

__all__ = [
    "ExperimentConfig",
    "CellResult",
    "run_rank_sweep",
    "run_size_noise_sweep",
    "write_rank_sweep_outputs",
    "write_size_noise_outputs",
]

PAPER_RANK_GRID = ((2, 1), (1, 2), (2, 2), (3, 3))
PAPER_N_GRID = (250, 500, 1000, 2000)
PAPER_NOISE_GRID = (0.01, 0.10, 0.50)


@dataclass(frozen=True)
class ExperimentConfig:
    """Configuration shared by both sweeps; defaults reproduce the reference
    setup (N=1000, 10% noise, reg 0.1, 5 seeds, 64x64 inputs)."""

    n_samples: int = 1000
    noise_ratio: float = 0.10
    size: int = 64
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    rank_grid: tuple[tuple[int, int], ...] = PAPER_RANK_GRID
    include_me_baseline: bool = True
    reg_weights: float = 0.1
    reg_gate: float = 0.1
    n_grid: tuple[int, ...] = PAPER_N_GRID
    noise_grid: tuple[float, ...] = PAPER_NOISE_GRID
    em: MixtureFitOptions = MixtureFitOptions()


@dataclass
class CellResult:
    """One sweep cell, aggregated over seeds (failures recorded, not fatal)."""

    label: str
    rank_gate: int
    rank_expert: int
    n_samples: int
    noise_ratio: float
    rmse_per_seed: list[float] = field(default_factory=list)
    bic_per_seed: list[float] = field(default_factory=list)
    iters_per_seed: list[int] = field(default_factory=list)
    restarts: int = 0
    errors: list[str] = field(default_factory=list)
    loglik_traces: list[list[float]] = field(default_factory=list)
    recovered: Optional[dict[str, np.ndarray]] = None

    @property
    def rmse_mean(self) -> float:
        return float(np.mean(self.rmse_per_seed)) if self.rmse_per_seed else float("nan")

    @property
    def rmse_std(self) -> float:
        return float(np.std(self.rmse_per_seed)) if self.rmse_per_seed else float("nan")

    @property
    def bic_mean(self) -> float:
        return float(np.mean(self.bic_per_seed)) if self.bic_per_seed else float("nan")

    @property
    def iters_mean(self) -> float:
        return float(np.mean(self.iters_per_seed)) if self.iters_per_seed else float("nan")


def _run_one(
    config: ExperimentConfig,
    label: str,
    rank_gate: int,
    rank_expert: int,
    n_samples: int,
    noise_ratio: float,
    seed: int,
) -> dict:
    """Fit one (cell, seed) job; returns a plain dict so it can cross processes."""
    data, truth = gen_shape_dataset(n_samples, noise_ratio, seed=seed, size=config.size)
    if label == "me":
        data = data.flattened()
    em = dataclasses.replace(config.em, seed=seed)
    model, report = tme_fit(
        data,
        n_experts=2,
        gate_rank=rank_gate,
        expert_rank=rank_expert,
        reg_weights=config.reg_weights,
        reg_gate=config.reg_gate,
        opts=em,
    )
    return {
        "rmse": weight_rmse(truth, model),
        "bic": bic(model, data),
        "iters": report.n_iters,
        "restarts": report.restarts,
        "trace": list(report.loglik_trace),
        "recovered": recovered_weight_matrices(model, truth.size),
    }


def _collect(
    config: ExperimentConfig, specs: list[tuple], jobs: int
) -> dict[tuple, dict]:
    """specs entries: (key, label, rg, re, n, noise, seed); returns key->result."""
    results: dict[tuple, dict] = {}
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                pool.submit(_run_one, config, label, rg, re, n, noise, seed): key
                for key, label, rg, re, n, noise, seed in specs
            }
            for fut in concurrent.futures.as_completed(futures):
                key = futures[fut]
                try:
                    results[key] = fut.result()
                except Exception as exc:  # recorded per cell, sweep continues
                    results[key] = {"error": f"{type(exc).__name__}: {exc}"}
    else:
        for key, label, rg, re, n, noise, seed in specs:
            try:
                results[key] = _run_one(config, label, rg, re, n, noise, seed)
            except Exception as exc:
                results[key] = {"error": f"{type(exc).__name__}: {exc}"}
    return results


def _aggregate(cell: CellResult, per_seed: list[dict]):
    for res in per_seed:
        if "error" in res:
            cell.errors.append(res["error"])
            continue
        cell.rmse_per_seed.append(res["rmse"])
        cell.bic_per_seed.append(res["bic"])
        cell.iters_per_seed.append(res["iters"])
        cell.restarts += res["restarts"]
        cell.loglik_traces.append(res["trace"])
        if cell.recovered is None:
            cell.recovered = res["recovered"]


def run_rank_sweep(config: ExperimentConfig = ExperimentConfig(), jobs: int = 1) -> list[CellResult]:
    """Fit every rank-grid cell (plus the flattened-input baseline) on the
    default-size data, seed by seed; cells appear in grid order."""
    cells: list[CellResult] = []
    specs = []
    grid: list[tuple[str, int, int]] = []
    if config.include_me_baseline:
        grid.append(("me", 1, 1))
    grid.extend(("tme", rg, re) for rg, re in config.rank_grid)
    for label, rg, re in grid:
        cells.append(
            CellResult(
                label=label,
                rank_gate=rg,
                rank_expert=re,
                n_samples=config.n_samples,
                noise_ratio=config.noise_ratio,
            )
        )
        for seed in config.seeds:
            key = (label, rg, re, seed)
            specs.append((key, label, rg, re, config.n_samples, config.noise_ratio, seed))
    results = _collect(config, specs, jobs)
    for cell in cells:
        per_seed = [results[(cell.label, cell.rank_gate, cell.rank_expert, s)] for s in config.seeds]
        _aggregate(cell, per_seed)
    return cells


def run_size_noise_sweep(
    config: ExperimentConfig = ExperimentConfig(),
    rank_gate: int = 2,
    rank_expert: int = 2,
    jobs: int = 1,
) -> list[CellResult]:
    """Fit a fixed-rank model over the (sample size x noise level) grid."""
    cells: list[CellResult] = []
    specs = []
    for n in config.n_grid:
        for noise in config.noise_grid:
            cells.append(
                CellResult(
                    label="tme",
                    rank_gate=rank_gate,
                    rank_expert=rank_expert,
                    n_samples=n,
                    noise_ratio=noise,
                )
            )
            for seed in config.seeds:
                key = (n, noise, seed)
                specs.append((key, "tme", rank_gate, rank_expert, n, noise, seed))
    results = _collect(config, specs, jobs)
    for cell in cells:
        per_seed = [results[(cell.n_samples, cell.noise_ratio, s)] for s in config.seeds]
        _aggregate(cell, per_seed)
    return cells


_CSV_HEADER = [
    "model",
    "rank_gate",
    "rank_expert",
    "n_samples",
    "noise_ratio",
    "n_seeds_ok",
    "rmse_mean",
    "rmse_std",
    "bic_mean",
    "em_iters_mean",
    "restarts",
    "errors",
]


def _csv_rows(cells: list[CellResult]) -> list[list]:
    rows = []
    for c in cells:
        rows.append(
            [
                c.label,
                c.rank_gate,
                c.rank_expert,
                c.n_samples,
                c.noise_ratio,
                len(c.rmse_per_seed),
                c.rmse_mean,
                c.rmse_std,
                c.bic_mean,
                c.iters_mean,
                c.restarts,
                ";".join(c.errors),
            ]
        )
    return rows


def write_rank_sweep_outputs(cells: list[CellResult], out_dir: str):
    """CSV summary plus recovered-weight images (first seed of each cell)."""
    os.makedirs(out_dir, exist_ok=True)
    tio.write_report_csv(os.path.join(out_dir, "rank_sweep.csv"), _CSV_HEADER, _csv_rows(cells))
    for c in cells:
        if c.recovered is None:
            continue
        tag = c.label if c.label == "me" else f"tme_rg{c.rank_gate}_re{c.rank_expert}"
        for name, matrix in c.recovered.items():
            tio.write_weight_image(os.path.join(out_dir, f"weights_{tag}_{name}.pgm"), matrix)


def write_size_noise_outputs(cells: list[CellResult], out_dir: str):
    """CSV summary plus an RMSE-vs-N line chart (one series per noise level)."""
    os.makedirs(out_dir, exist_ok=True)
    tio.write_report_csv(os.path.join(out_dir, "size_noise.csv"), _CSV_HEADER, _csv_rows(cells))
    n_values = sorted({c.n_samples for c in cells})
    noise_values = sorted({c.noise_ratio for c in cells})
    series = {}
    for noise in noise_values:
        by_n = {c.n_samples: c.rmse_mean for c in cells if c.noise_ratio == noise}
        series[f"noise {100 * noise:g}%"] = [by_n[n] for n in n_values]
    tio.write_svg_lines(
        os.path.join(out_dir, "size_noise.svg"),
        n_values,
        series,
        x_label="sample size",
        y_label="weight recovery RMSE",
        title="Recovery error vs sample size",
    )
