"""Command-line harness: data generation, fitting, evaluation, experiments.

Exit codes: 0 success, 1 usage error, 2 data or numeric error.  All
randomness flows from ``--seed``; identical invocations produce identical
artifacts.  The vector baselines ``rr`` and ``me`` are the tensor models on
inputs flattened at this boundary, so the core stays uniform in tensor order.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import io as tio
from .data import RegressionDataset, one_hot, soft_labels
from .errors import DataError
from .experiments import (
    ExperimentConfig,
    run_rank_sweep,
    run_size_noise_sweep,
    write_rank_sweep_outputs,
    write_size_noise_outputs,
)
from .logistic import LogisticFitOptions, TLRModel, tlr_fit, tlr_posterior_many
from .mixture import MixtureFitOptions, TMEModel, tme_fit, tme_predict_many
from .ridge import RidgeFitOptions, TRRModel, trr_fit, trr_predict_many
from .shapes import SHAPE_KINDS, ShapeTruth, gen_shape_dataset, make_shape, weight_rmse

__all__ = ["main", "dispatch"]


class _UsageError(Exception):
    def __init__(self, message: str, usage: str):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message, self.format_usage())


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _rank_grid(text: str) -> tuple[tuple[int, int], ...]:
    cells = []
    for item in text.split(","):
        rg, _, re = item.partition("x")
        cells.append((int(rg), int(re)))
    return tuple(cells)


def _build_parser() -> tuple[_Parser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="tensorreg", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")
    registry: dict[str, argparse.ArgumentParser] = {}
    original_add = sub.add_parser

    def add_parser(name, **kwargs):
        p = original_add(name, **kwargs)
        registry[name] = p
        return p

    sub.add_parser = add_parser

    p = sub.add_parser("gen-shapes", help="write the ground-truth shape masks as PGM images")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_gen_shapes)

    p = sub.add_parser("gen-data", help="generate a synthetic shape-mixture dataset")
    p.add_argument("--shape-config", choices=["default"], default="default")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--noise", type=float, default=0.10)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output dataset file")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("fit", help="fit a model to a dataset file")
    p.add_argument("--kind", required=True, choices=["trr", "tlr", "tme", "rr", "me"])
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--rank", type=int, default=1, help="CP rank (trr/rr/tlr)")
    p.add_argument("--rg", type=int, default=2, help="gate rank (tme/me)")
    p.add_argument("--re", type=int, default=2, help="expert rank (tme/me)")
    p.add_argument("--reg", type=float, default=0.1, help="weight regularization")
    p.add_argument("--reg-gate", type=float, default=0.1, help="gate regularization (tme/me)")
    p.add_argument("--classes", type=int, default=None, help="class count (tlr)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=None, help="primary fit tolerance override")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("predict", help="write model predictions for a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output CSV file")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("eval", help="score recovered weights against the shape truth")
    p.add_argument("--model", required=True)
    p.add_argument("--truth", choices=["shapes"], default="shapes")
    p.add_argument("--report", required=True, help="output CSV file")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("experiment-rank-sweep", help="rank-grid recovery study")
    _add_experiment_args(p)
    p.add_argument("--grid", type=_rank_grid, default=None, help="e.g. 2x1,1x2,2x2,3x3")
    p.add_argument("--no-me-baseline", action="store_true")
    p.set_defaults(func=_cmd_rank_sweep)

    p = sub.add_parser("experiment-size-noise", help="sample-size x noise recovery study")
    _add_experiment_args(p)
    p.add_argument("--n-grid", type=_int_list, default=None, help="e.g. 250,500,1000,2000")
    p.add_argument("--noise-grid", type=_float_list, default=None, help="e.g. 0.01,0.1,0.5")
    p.add_argument("--rg", type=int, default=2)
    p.add_argument("--re", type=int, default=2)
    p.set_defaults(func=_cmd_size_noise)

    return parser, registry


def _add_experiment_args(p: argparse.ArgumentParser):
    p.add_argument("--paper-defaults", action="store_true",
                   help="N=1000, noise 10%%, reg 0.1, reference rank grid, 5 seeds")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--noise", type=float, default=0.10)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seeds", type=_int_list, default=(0, 1, 2, 3, 4))
    p.add_argument("--reg", type=float, default=0.1)
    p.add_argument("--reg-gate", type=float, default=0.1)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")


def _cmd_gen_shapes(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    for kind in SHAPE_KINDS:
        tio.write_weight_image(os.path.join(args.out, f"{kind}.pgm"), make_shape(kind, args.size))
    return 0


def _cmd_gen_data(args) -> int:
    data, _ = gen_shape_dataset(args.n, args.noise, seed=args.seed, size=args.size)
    tio.save_dataset(args.out, data)
    return 0


def _labels_from_targets(data: RegressionDataset, n_classes: Optional[int]) -> np.ndarray:
    y = data.targets
    if y.shape[1] > 1:
        return soft_labels(y)
    idx = y[:, 0]
    if not np.all(idx == np.round(idx)) or np.any(idx < 0):
        raise DataError("tlr needs integer class labels >= 0 (or an N x C soft-label matrix)")
    c = n_classes if n_classes is not None else int(idx.max()) + 1
    return one_hot(idx.astype(int), c)


def _cmd_fit(args) -> int:
    data = tio.load_dataset(args.data)
    if args.kind in ("rr", "me"):
        data = data.flattened()

    if args.kind in ("trr", "rr"):
        opts = RidgeFitOptions(seed=args.seed)
        if args.tol is not None:
            opts = RidgeFitOptions(tol=args.tol, seed=args.seed)
        model = trr_fit(data, rank=args.rank, reg=args.reg, opts=opts)
    elif args.kind == "tlr":
        opts = LogisticFitOptions(seed=args.seed)
        if args.tol is not None:
            opts = LogisticFitOptions(gtol=args.tol, seed=args.seed)
        labels = _labels_from_targets(data, args.classes)
        model = tlr_fit(data, labels, rank=args.rank, reg=args.reg, opts=opts)
    else:  # tme / me
        opts = MixtureFitOptions(seed=args.seed)
        if args.tol is not None:
            opts = MixtureFitOptions(tol=args.tol, seed=args.seed)
        model, _ = tme_fit(
            data,
            n_experts=2 if args.classes is None else args.classes,
            gate_rank=args.rg,
            expert_rank=args.re,
            reg_weights=args.reg,
            reg_gate=args.reg_gate,
            opts=opts,
        )
    tio.save_model(args.out, model)
    return 0


def _cmd_predict(args) -> int:
    model = tio.load_model(args.model)
    data = tio.load_dataset(args.data)
    if isinstance(model, TRRModel):
        if data.dims != model.dims:
            data = data.flattened()
        preds = trr_predict_many(model, data)[:, None]
        header = ["y0"]
    elif isinstance(model, TMEModel):
        if data.dims != model.dims:
            data = data.flattened()
        preds = tme_predict_many(model, data)
        header = [f"y{d}" for d in range(preds.shape[1])]
    elif isinstance(model, TLRModel):
        if data.dims != model.dims:
            data = data.flattened()
        preds = tlr_posterior_many(model, data)
        header = [f"p{c}" for c in range(preds.shape[1])]
    else:
        raise DataError(f"cannot predict with {type(model).__name__}")
    tio.write_report_csv(args.out, header, [list(row) for row in preds])
    return 0


def _cmd_eval(args) -> int:
    model = tio.load_model(args.model)
    if not isinstance(model, TMEModel):
        raise DataError("eval --truth shapes expects a mixture model")
    p = int(np.prod(model.dims))
    size = model.dims[0] if len(model.dims) == 2 else int(round(np.sqrt(p)))
    truth = ShapeTruth.default(size)
    rmse = weight_rmse(truth, model)
    tio.write_report_csv(
        args.report,
        ["model", "rank_gate", "rank_expert", "weight_rmse"],
        [["tme", model.gate.rank, model.expert_rank, rmse]],
    )
    return 0


def _experiment_config(args, rank_grid=None, include_me=True) -> ExperimentConfig:
    kwargs = dict(
        n_samples=args.n,
        noise_ratio=args.noise,
        size=args.size,
        seeds=tuple(args.seeds),
        reg_weights=args.reg,
        reg_gate=args.reg_gate,
        include_me_baseline=include_me,
    )
    if rank_grid is not None:
        kwargs["rank_grid"] = rank_grid
    if getattr(args, "n_grid", None) is not None:
        kwargs["n_grid"] = args.n_grid
    if getattr(args, "noise_grid", None) is not None:
        kwargs["noise_grid"] = args.noise_grid
    return ExperimentConfig(**kwargs)


def _cmd_rank_sweep(args) -> int:
    config = _experiment_config(
        args, rank_grid=args.grid, include_me=not args.no_me_baseline
    )
    cells = run_rank_sweep(config, jobs=args.jobs)
    write_rank_sweep_outputs(cells, args.out)
    return 0


def _cmd_size_noise(args) -> int:
    config = _experiment_config(args)
    cells = run_size_noise_sweep(config, rank_gate=args.rg, rank_expert=args.re, jobs=args.jobs)
    write_size_noise_outputs(cells, args.out)
    return 0


def dispatch(argv: Sequence[str]) -> int:
    """Run one invocation; returns the process exit code."""
    argv = list(argv)
    parser, registry = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        # point at the subcommand's flags when one was named
        usage = exc.usage
        if argv and argv[0] in registry:
            usage = registry[argv[0]].format_usage()
        print(f"error: {exc}", file=sys.stderr)
        print(usage, file=sys.stderr, end="")
        return 1
    except SystemExit as exc:  # --help and friends
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        print("error: missing command", file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return 1
    try:
        return args.func(args)
    except (ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
