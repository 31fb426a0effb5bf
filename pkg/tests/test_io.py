"""Serialization round-trips must be bit-exact; malformed files must fail
with positions."""

import os

import numpy as np
import pytest

from tensorreg.data import RegressionDataset
from tensorreg.errors import ParseError
from tensorreg.io import (
    load_dataset,
    load_model,
    save_dataset,
    save_model,
    write_report_csv,
    write_svg_lines,
    write_weight_image,
)
from tensorreg.logistic import LogisticFitOptions, tlr_fit, tlr_posterior_many
from tensorreg.mixture import MixtureFitOptions, tme_fit, tme_predict_many
from tensorreg.data import one_hot
from tensorreg.ridge import RidgeFitOptions, trr_fit, trr_predict_many


def awkward_dataset(seed=0, n=7, dims=(3, 2, 2)):
    rng = np.random.default_rng(seed)
    # deliberately awkward values: subnormals-ish, negatives, many digits
    x = rng.normal(size=(n,) + dims) * np.exp(rng.normal(size=(n,) + dims) * 5)
    y = rng.normal(size=(n, 2)) * 1e-3
    return RegressionDataset(x, y)


def test_dataset_round_trip_bit_exact(tmp_path):
    ds = awkward_dataset()
    path = str(tmp_path / "d.tdset")
    save_dataset(path, ds)
    back = load_dataset(path)
    assert back.dims == ds.dims
    np.testing.assert_array_equal(back.inputs, ds.inputs)
    np.testing.assert_array_equal(back.targets, ds.targets)
    # a second save is byte-identical
    save_dataset(str(tmp_path / "d2.tdset"), back)
    assert (tmp_path / "d.tdset").read_bytes() == (tmp_path / "d2.tdset").read_bytes()


def test_dataset_bad_magic(tmp_path):
    p = tmp_path / "x.tdset"
    p.write_text("TDSET 9\ndims: 2\nn: 1\nd: 1\n0 0 0\n")
    with pytest.raises(ParseError, match="line 1"):
        load_dataset(str(p))


def test_dataset_bad_header_line(tmp_path):
    p = tmp_path / "x.tdset"
    p.write_text("TDSET 1\ndims: 2 2\nn: one\nd: 1\n")
    with pytest.raises(ParseError, match="header"):
        load_dataset(str(p))


def test_dataset_wrong_record_length(tmp_path):
    p = tmp_path / "x.tdset"
    p.write_text("TDSET 1\ndims: 2 2\nn: 2\nd: 1\n" + "0 1 2 3 4\n" + "0 1 2\n")
    with pytest.raises(ParseError, match="record 1"):
        load_dataset(str(p))


def test_dataset_missing_records(tmp_path):
    p = tmp_path / "x.tdset"
    p.write_text("TDSET 1\ndims: 2\nn: 3\nd: 1\n0 1 2\n")
    with pytest.raises(ParseError, match="records"):
        load_dataset(str(p))


def fitted_models(tmp_path):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(40, 3, 2))
    y = rng.normal(size=40)
    ds = RegressionDataset(x, y)
    trr = trr_fit(ds, rank=2, reg=0.1, opts=RidgeFitOptions(seed=0))
    labels = one_hot(rng.integers(0, 2, size=40), 2)
    tlr = tlr_fit(ds, labels, rank=1, reg=0.1, opts=LogisticFitOptions(seed=0, max_iters=50))
    tme, _ = tme_fit(ds, 2, 1, 1, opts=MixtureFitOptions(seed=0, max_em_iters=5))
    return ds, trr, tlr, tme


def test_model_round_trips_preserve_predictions(tmp_path):
    ds, trr, tlr, tme = fitted_models(tmp_path)
    rng = np.random.default_rng(2)
    probes = RegressionDataset(rng.normal(size=(100, 3, 2)), np.zeros(100))

    p = str(tmp_path / "trr.json")
    save_model(p, trr)
    trr2 = load_model(p)
    np.testing.assert_array_equal(trr_predict_many(trr, probes), trr_predict_many(trr2, probes))

    p = str(tmp_path / "tlr.json")
    save_model(p, tlr)
    tlr2 = load_model(p)
    np.testing.assert_array_equal(
        tlr_posterior_many(tlr, probes), tlr_posterior_many(tlr2, probes)
    )

    p = str(tmp_path / "tme.json")
    save_model(p, tme)
    tme2 = load_model(p)
    np.testing.assert_array_equal(tme_predict_many(tme, probes), tme_predict_many(tme2, probes))
    assert tme2.report is not None
    assert tme2.report.loglik_trace == tme.report.loglik_trace


def test_model_file_rejects_unknown_kind(tmp_path):
    p = tmp_path / "m.json"
    p.write_text('{"format": 1, "kind": "mystery", "model": {}}')
    with pytest.raises(ParseError, match="kind"):
        load_model(str(p))
    p.write_text('{"format": 2, "kind": "trr", "model": {}}')
    with pytest.raises(ParseError, match="format"):
        load_model(str(p))
    p.write_text("{not json")
    with pytest.raises(ParseError, match="line"):
        load_model(str(p))


def test_report_csv_deterministic(tmp_path):
    header = ["name", "value"]
    rows = [["a", 0.1], ["b", 2.0 / 3.0]]
    p1, p2 = str(tmp_path / "r1.csv"), str(tmp_path / "r2.csv")
    write_report_csv(p1, header, rows)
    write_report_csv(p2, header, rows)
    assert open(p1).read() == open(p2).read()
    text = open(p1).read()
    assert text.splitlines()[0] == "name,value"
    assert float(text.splitlines()[2].split(",")[1]) == 2.0 / 3.0


def test_weight_image_linear_map(tmp_path):
    p = str(tmp_path / "w.pgm")
    write_weight_image(p, np.array([[0.0, 1.0], [0.5, 0.25]]))
    lines = open(p).read().split()
    assert lines[0] == "P2"
    assert lines[1:4] == ["2", "2", "255"]
    assert lines[4:] == ["0", "255", "128", "64"]


def test_weight_image_constant_matrix_all_zero(tmp_path):
    p = str(tmp_path / "c.pgm")
    write_weight_image(p, np.full((3, 3), 7.0))
    vals = open(p).read().split()[4:]
    assert vals == ["0"] * 9


def test_svg_lines_self_contained(tmp_path):
    p = str(tmp_path / "plot.svg")
    write_svg_lines(
        p,
        [250, 500, 1000],
        {"1%": [0.3, 0.2, 0.1], "10%": [0.4, 0.3, 0.2]},
        x_label="N",
        y_label="RMSE",
    )
    text = open(p).read()
    assert text.startswith("<svg")
    assert text.rstrip().endswith("</svg>")
    assert text.count("<polyline") == 2
    assert "xmlns" in text


def test_atomic_write_leaves_no_partial_file(tmp_path):
    target = tmp_path / "out.csv"
    with pytest.raises(Exception):
        write_report_csv(str(target), ["a"], [["x", "too", "many"]])
    assert not target.exists()
    assert not any(f.name.startswith(".tmp-") for f in tmp_path.iterdir())
