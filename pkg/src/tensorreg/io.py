"""Text serialization: datasets, models, CSV reports, PGM images, SVG plots.

Formats are plain text for inspectability.  Floats are written with enough
decimal digits to round-trip float64 exactly, so load(save(x)) reproduces x
bit for bit.  Every writer goes through write-then-rename, so a failed write
never leaves a partial file at the target path.
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .data import RegressionDataset
from .errors import ParseError, ShapeMismatchError
from .logistic import LogisticFitReport, TLRModel
from .mixture import EMFitReport, Expert, TMEModel
from .ridge import RidgeFitReport, TRRModel
from .tensors import CPFactors

__all__ = [
    "save_dataset",
    "load_dataset",
    "save_model",
    "load_model",
    "write_report_csv",
    "write_weight_image",
    "write_svg_lines",
]

AnyModel = Union[TRRModel, TLRModel, TMEModel]

DATASET_MAGIC = "TDSET 1"
MODEL_FORMAT_VERSION = 1


def _atomic_write_text(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# --- datasets ----------------------------------------------------------------


def save_dataset(path: str, data: RegressionDataset):
    """Write the text dataset format: header, then one record per sample
    (D target values followed by the flat input values)."""
    lines = [
        DATASET_MAGIC,
        "dims: " + " ".join(str(d) for d in data.dims),
        f"n: {data.n_samples}",
        f"d: {data.n_outputs}",
    ]
    xvec = data.vectorized()
    y = data.targets
    for n in range(data.n_samples):
        vals = [_fmt(v) for v in y[n]] + [_fmt(v) for v in xvec[n]]
        lines.append(" ".join(vals))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def load_dataset(path: str) -> RegressionDataset:
    with open(path) as fh:
        lines = fh.read().splitlines()

    def header(idx: int, prefix: str) -> str:
        if idx >= len(lines):
            raise ParseError(f"line {idx + 1}: unexpected end of file, expected {prefix!r}")
        line = lines[idx]
        if not line.startswith(prefix):
            raise ParseError(f"line {idx + 1}: expected {prefix!r}, got {line!r}")
        return line[len(prefix):].strip()

    if not lines or lines[0].strip() != DATASET_MAGIC:
        raise ParseError(f"line 1: expected magic {DATASET_MAGIC!r}")
    try:
        dims = tuple(int(v) for v in header(1, "dims:").split())
        n = int(header(2, "n:"))
        d = int(header(3, "d:"))
    except ValueError as exc:
        raise ParseError(f"malformed header: {exc}") from exc
    if not dims or any(v < 1 for v in dims):
        raise ParseError(f"line 2: dims must be positive integers, got {dims}")
    if n < 1:
        raise ParseError(f"line 3: n must be positive, got {n}")
    if d < 1:
        raise ParseError(f"line 4: d must be positive, got {d}")

    p = int(np.prod(dims))
    records = [ln for ln in lines[4:] if ln.strip()]
    if len(records) != n:
        raise ParseError(f"expected {n} records, found {len(records)}")
    targets = np.empty((n, d))
    flat = np.empty((n, p))
    for i, rec in enumerate(records):
        parts = rec.split()
        if len(parts) != d + p:
            raise ParseError(
                f"record {i}: expected {d + p} values ({d} targets + {p} inputs), "
                f"got {len(parts)}"
            )
        try:
            vals = np.array([float(v) for v in parts])
        except ValueError as exc:
            raise ParseError(f"record {i}: {exc}") from exc
        targets[i] = vals[:d]
        flat[i] = vals[d:]

    # invert the per-sample first-index-fastest flattening
    batch = flat.reshape((n,) + dims[::-1])
    batch = batch.transpose((0,) + tuple(range(batch.ndim - 1, 0, -1)))
    return RegressionDataset(np.ascontiguousarray(batch), targets)


# --- models ------------------------------------------------------------------


def _factors_to_json(w: CPFactors) -> list:
    return [f.tolist() for f in w.factors]


def _factors_from_json(obj, what: str) -> CPFactors:
    try:
        mats = [np.asarray(f, dtype=np.float64) for f in obj]
        rank = mats[0].shape[1]
        return CPFactors(rank, tuple(mats))
    except (ValueError, IndexError, TypeError) as exc:
        raise ParseError(f"malformed factor block for {what}: {exc}") from exc


def _report_to_json(report) -> "dict | None":
    if report is None:
        return None
    out = {}
    for key, value in dataclasses.asdict(report).items():
        if isinstance(value, float) and not np.isfinite(value):
            value = None
        out[key] = value
    return out


def _report_from_json(obj, cls):
    if obj is None:
        return None
    fields = {f.name for f in dataclasses.fields(cls)}
    kwargs = {k: (float("nan") if v is None else v) for k, v in obj.items() if k in fields}
    return cls(**kwargs)


def _tlr_to_json(model: TLRModel) -> dict:
    return {
        "classes": model.n_classes,
        "rank": model.rank,
        "reg": model.reg,
        "biases": model.biases.tolist(),
        "factors": [_factors_to_json(w) for w in model.weights],
        "fit_report": _report_to_json(model.report),
    }


def _tlr_from_json(obj: dict) -> TLRModel:
    weights = tuple(
        _factors_from_json(block, f"class {i}") for i, block in enumerate(obj["factors"])
    )
    return TLRModel(
        weights=weights,
        biases=np.asarray(obj["biases"], dtype=np.float64),
        reg=float(obj["reg"]),
        report=_report_from_json(obj.get("fit_report"), LogisticFitReport),
    )


def save_model(path: str, model: AnyModel):
    """Write a model as a versioned JSON document (load gives back a model
    whose predictions are bit-identical)."""
    doc: dict = {"format": MODEL_FORMAT_VERSION}
    if isinstance(model, TRRModel):
        doc["kind"] = "trr"
        doc["dims"] = list(model.dims)
        doc["model"] = {
            "rank": model.rank,
            "reg": model.reg,
            "bias": model.bias,
            "noise_var": model.noise_var,
            "factors": _factors_to_json(model.weights),
            "fit_report": _report_to_json(model.report),
        }
    elif isinstance(model, TLRModel):
        doc["kind"] = "tlr"
        doc["dims"] = list(model.dims)
        doc["model"] = _tlr_to_json(model)
    elif isinstance(model, TMEModel):
        doc["kind"] = "tme"
        doc["dims"] = list(model.dims)
        doc["model"] = {
            "reg_weights": model.reg_weights,
            "gate": _tlr_to_json(model.gate),
            "experts": [
                {
                    "factors": [_factors_to_json(w) for w in e.mean_weights],
                    "bias": e.bias.tolist(),
                    "cov": e.cov.tolist(),
                }
                for e in model.experts
            ],
            "fit_report": _report_to_json(model.report),
        }
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    _atomic_write_text(path, json.dumps(doc, indent=1, allow_nan=False) + "\n")


def load_model(path: str) -> AnyModel:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT_VERSION:
        raise ParseError(f"unsupported model format {doc.get('format')!r}")
    kind = doc.get("kind")
    try:
        body = doc["model"]
        if kind == "trr":
            return TRRModel(
                weights=_factors_from_json(body["factors"], "weights"),
                bias=float(body["bias"]),
                noise_var=float(body["noise_var"]),
                reg=float(body["reg"]),
                report=_report_from_json(body.get("fit_report"), RidgeFitReport),
            )
        if kind == "tlr":
            return _tlr_from_json(body)
        if kind == "tme":
            experts = tuple(
                Expert(
                    mean_weights=tuple(
                        _factors_from_json(block, f"expert {i} dim {d}")
                        for d, block in enumerate(e["factors"])
                    ),
                    bias=np.asarray(e["bias"], dtype=np.float64),
                    cov=np.asarray(e["cov"], dtype=np.float64),
                )
                for i, e in enumerate(body["experts"])
            )
            return TMEModel(
                gate=_tlr_from_json(body["gate"]),
                experts=experts,
                reg_weights=float(body["reg_weights"]),
                report=_report_from_json(body.get("fit_report"), EMFitReport),
            )
    except KeyError as exc:
        raise ParseError(f"missing model field {exc}") from exc
    raise ParseError(f"unknown model kind {kind!r}")


# --- reports, images, plots ---------------------------------------------------


def write_report_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]):
    """Deterministic CSV: floats rendered with full round-trip precision."""
    def cell(v) -> str:
        if isinstance(v, (float, np.floating)):
            return _fmt(v)
        return str(v)

    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ShapeMismatchError(
                f"row has {len(row)} cells for {len(header)} columns"
            )
        lines.append(",".join(cell(v) for v in row))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def write_weight_image(path: str, matrix: np.ndarray):
    """8-bit grayscale PGM (ASCII P2), linearly mapped from [min, max].

    A constant matrix has an empty range and maps to all zeros.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatchError(f"weight image needs a matrix, got ndim={m.ndim}")
    lo, hi = float(m.min()), float(m.max())
    if hi > lo:
        pix = np.rint((m - lo) / (hi - lo) * 255.0).astype(int)
    else:
        pix = np.zeros(m.shape, dtype=int)
    rows, cols = m.shape
    lines = ["P2", f"{cols} {rows}", "255"]
    lines.extend(" ".join(str(v) for v in row) for row in pix)
    _atomic_write_text(path, "\n".join(lines) + "\n")


def write_svg_lines(
    path: str,
    x_values: Sequence[float],
    series: Mapping[str, Sequence[float]],
    x_label: str = "",
    y_label: str = "",
    title: str = "",
):
    """Self-contained SVG line chart: one polyline per named series."""
    x = np.asarray(x_values, dtype=np.float64)
    if x.size < 1:
        raise ValueError("need at least one x value")
    ys = {name: np.asarray(vals, dtype=np.float64) for name, vals in series.items()}
    for name, vals in ys.items():
        if vals.shape != x.shape:
            raise ShapeMismatchError(
                f"series {name!r} has {vals.size} points for {x.size} x values"
            )

    width, height = 640, 440
    ml, mr, mt, mb = 70, 160, 40, 55
    x_lo, x_hi = float(x.min()), float(x.max())
    all_y = np.concatenate(list(ys.values())) if ys else np.array([0.0])
    y_lo, y_hi = float(all_y.min()), float(all_y.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(v: float) -> float:
        return ml + (v - x_lo) / (x_hi - x_lo) * (width - ml - mr)

    def sy(v: float) -> float:
        return height - mb - (v - y_lo) / (y_hi - y_lo) * (height - mt - mb)

    palette = ["#1f6fb2", "#c23b22", "#caa02e", "#3c8c4e", "#7b4fa6", "#4e4e4e"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" y2="{height - mb}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="black"/>',
    ]
    if title:
        parts.append(
            f'<text x="{(ml + width - mr) / 2:.1f}" y="{mt - 14}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="15">{title}</text>'
        )
    for k in range(5):
        xv = x_lo + k * (x_hi - x_lo) / 4
        yv = y_lo + k * (y_hi - y_lo) / 4
        parts.append(
            f'<text x="{sx(xv):.1f}" y="{height - mb + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{xv:g}</text>'
        )
        parts.append(
            f'<text x="{ml - 8}" y="{sy(yv) + 4:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{yv:.4g}</text>'
        )
        parts.append(
            f'<line x1="{ml}" y1="{sy(yv):.1f}" x2="{width - mr}" y2="{sy(yv):.1f}" '
            f'stroke="#dddddd"/>'
        )
    if x_label:
        parts.append(
            f'<text x="{(ml + width - mr) / 2:.1f}" y="{height - 12}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="13">{x_label}</text>'
        )
    if y_label:
        parts.append(
            f'<text x="16" y="{(mt + height - mb) / 2:.1f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="13" '
            f'transform="rotate(-90 16 {(mt + height - mb) / 2:.1f})">{y_label}</text>'
        )
    for k, (name, vals) in enumerate(ys.items()):
        color = palette[k % len(palette)]
        pts = " ".join(f"{sx(xi):.2f},{sy(yi):.2f}" for xi, yi in zip(x, vals))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = mt + 18 * k
        parts.append(
            f'<line x1="{width - mr + 10}" y1="{ly}" x2="{width - mr + 34}" y2="{ly}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{width - mr + 40}" y="{ly + 4}" font-family="sans-serif" '
            f'font-size="12">{name}</text>'
        )
    parts.append("</svg>")
    _atomic_write_text(path, "\n".join(parts) + "\n")
