"""Verification metrics against exact-arithmetic and brute-force oracles."""

import json
import math
from datetime import datetime, timezone
from fractions import Fraction

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gnetcast.container import DatasetContainer
from gnetcast.masks import masks_for_sample
from gnetcast.metrics import (ConfusionCounts, MetricsReport, binarize_hour,
                              confusion, csi, evaluate_model, f1, hss, mcc,
                              mse_per_leadtime, predict_mean)
from gnetcast.models import PersistenceModel
from gnetcast.pipeline import CropSpec, epoch_seconds


def counts(tp=0, fp=0, tn=0, fn=0):
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def exact_scores(c):
    """Fraction-arithmetic reference for every defined score."""
    out = {}
    if c.tp > 0:
        out["f1"] = Fraction(2 * c.tp, 2 * c.tp + c.fp + c.fn)
    if c.tp + c.fn + c.fp > 0:
        out["csi"] = Fraction(c.tp, c.tp + c.fn + c.fp)
    hss_denom = (c.tp + c.fn) * (c.fn + c.tn) + (c.tp + c.fp) * (c.fp + c.tn)
    if hss_denom > 0:
        out["hss"] = Fraction(c.tp * c.tn - c.fp * c.fn, hss_denom)
    mcc_denom = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if mcc_denom > 0:
        out["mcc_sq"] = Fraction((c.tp * c.tn - c.fp * c.fn) ** 2, mcc_denom)
        out["mcc_sign"] = (c.tp * c.tn - c.fp * c.fn >= 0)
    return out


# ------------------------------------------------------------------ fixtures

def test_score_fixture():
    c = counts(tp=6, fp=2, tn=90, fn=2)
    assert f1(c).value == pytest.approx(0.75)
    assert csi(c).value == pytest.approx(0.6)
    assert hss(c).value == pytest.approx(536 / 1472)
    assert mcc(c).value == pytest.approx(536 / 736)
    assert not any(fn_(c).undefined for fn_ in (f1, csi, hss, mcc))


def test_perfect_forecast_scores():
    c = counts(tp=50, tn=50)
    assert f1(c).value == 1.0
    assert csi(c).value == 1.0
    assert mcc(c).value == pytest.approx(1.0)
    # the protocol's variant omits the conventional factor 2
    assert hss(c).value == 0.5
    assert 2 * hss(c).value == pytest.approx(1.0)   # where the textbook form lands


def test_undefined_scores_are_flagged():
    empty = counts()
    no_positive = counts(tn=5)
    for score in (f1, csi, hss, mcc):
        assert score(empty) == (0.0, True)
        assert score(no_positive) == (0.0, True)
    assert f1(counts(fp=3, tn=5)).undefined       # no true or predicted positives... tp=0
    assert csi(counts(fp=3, tn=5)).value == 0.0   # defined: tp / (tp+fn+fp)
    assert not csi(counts(fp=3, tn=5)).undefined


def test_all_wrong_forecast():
    c = counts(fp=10, fn=10)
    assert csi(c).value == 0.0
    assert hss(c).value == pytest.approx(-0.5)
    assert mcc(c).value == pytest.approx(-1.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 1000), st.integers(0, 1000),
       st.integers(0, 1000), st.integers(0, 1000))
def test_scores_match_exact_arithmetic(tp, fp, tn, fn):
    c = counts(tp=tp, fp=fp, tn=tn, fn=fn)
    oracle = exact_scores(c)
    if "f1" in oracle:
        assert math.isclose(f1(c).value, float(oracle["f1"]), rel_tol=1e-12)
        assert not f1(c).undefined
    if "csi" in oracle:
        assert math.isclose(csi(c).value, float(oracle["csi"]),
                            rel_tol=1e-12, abs_tol=1e-15)
        assert not csi(c).undefined
    if "hss" in oracle:
        assert math.isclose(hss(c).value, float(oracle["hss"]),
                            rel_tol=1e-12, abs_tol=1e-15)
    if "mcc_sq" in oracle:
        v = mcc(c).value
        assert math.isclose(v * v, float(oracle["mcc_sq"]), rel_tol=1e-9, abs_tol=1e-15)
        assert (v >= 0) == oracle["mcc_sign"] or v == 0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 500), st.integers(0, 500), st.integers(0, 500), st.integers(0, 500))
def test_scores_symmetric_under_error_swap(tp, fp, tn, fn):
    a = counts(tp=tp, fp=fp, tn=tn, fn=fn)
    b = counts(tp=tp, fp=fn, tn=tn, fn=fp)
    for score in (f1, csi, hss, mcc):
        assert score(a) == score(b)


def test_counts_add_and_total():
    c = counts(1, 2, 3, 4) + counts(10, 20, 30, 40)
    assert (c.tp, c.fp, c.tn, c.fn) == (11, 22, 33, 44)
    assert c.total == 110
    assert c.to_dict() == {"tp": 11, "fp": 22, "tn": 33, "fn": 44}


# ----------------------------------------------------------------- confusion

def brute_confusion(pred, true, land=None):
    ref = ConfusionCounts()
    n, h, w = pred.shape
    for k in range(n):
        for i in range(h):
            for j in range(w):
                if land is not None and not land[i, j]:
                    continue
                p, t = bool(pred[k, i, j]), bool(true[k, i, j])
                if p and t:
                    ref.tp += 1
                elif p and not t:
                    ref.fp += 1
                elif not p and t:
                    ref.fn += 1
                else:
                    ref.tn += 1
    return ref


def test_confusion_matches_nested_loop():
    rng = np.random.default_rng(0)
    pred = rng.integers(0, 2, (3, 5, 5), dtype=np.uint8)
    true = rng.integers(0, 2, (3, 5, 5), dtype=np.uint8)
    land = rng.random((5, 5)) > 0.3
    assert confusion(pred, true) == brute_confusion(pred, true)
    got = confusion(pred, true, land)
    assert got == brute_confusion(pred, true, land)
    assert got.total == 3 * int(land.sum())


def test_confusion_shape_errors():
    with pytest.raises(ValueError):
        confusion(np.zeros((2, 4, 4)), np.zeros((2, 4, 5)))
    with pytest.raises(ValueError):
        confusion(np.zeros((2, 4, 4)), np.zeros((2, 4, 4)), np.ones((3, 3), bool))


# ----------------------------------------------------------------- binarize

def test_binarize_boundary_is_strict():
    seq = np.zeros((12, 2, 2), dtype=np.float32)
    seq[0] = 0.5                        # one frame carries the whole hour
    # norm_max 100 stored units -> accumulation multiplier exactly 1 mm
    assert binarize_hour(seq, 100.0, 0.5).max() == 0     # exactly at threshold
    seq[0] = 0.5001
    assert binarize_hour(seq, 100.0, 0.5).min() == 1


def test_binarize_accepts_negative_predictions():
    seq = np.full((12, 2, 2), -3.0, dtype=np.float32)
    out = binarize_hour(seq, 100.0, 0.5)
    assert out.dtype == np.uint8
    assert out.max() == 0


def test_binarize_rejects_nonpositive_threshold():
    with pytest.raises(ValueError):
        binarize_hour(np.zeros((12, 2, 2)), 100.0, 0.0)


# ------------------------------------------------------------ mse of leads

def test_mse_per_leadtime_isolates_bad_frame():
    preds = np.zeros((2, 12, 3, 3))
    targets = np.zeros((2, 12, 3, 3))
    preds[:, 7] = 1.0
    per_lead = mse_per_leadtime(preds, targets, norm_max=200.0)
    assert per_lead.shape == (12,)
    # error of 1.0 normalized = 2 mm at norm_max 200 stored units
    assert per_lead[7] == pytest.approx(4.0)
    assert all(per_lead[i] == 0 for i in range(12) if i != 7)


def test_mse_per_leadtime_decomposes_overall():
    rng = np.random.default_rng(1)
    preds = rng.random((4, 12, 6, 6))
    targets = rng.random((4, 12, 6, 6))
    per_lead = mse_per_leadtime(preds, targets, norm_max=5230.0)
    overall = (((preds - targets) * 52.30) ** 2).mean()
    assert per_lead.mean() == pytest.approx(overall, rel=1e-12)


def test_mse_per_leadtime_shape_errors():
    with pytest.raises(ValueError):
        mse_per_leadtime(np.zeros((2, 12, 3, 3)), np.zeros((2, 12, 3, 4)), 100.0)
    with pytest.raises(ValueError):
        mse_per_leadtime(np.zeros((2, 6, 3, 3)), np.zeros((2, 6, 3, 3)), 100.0)


# -------------------------------------------------------------- evaluation

def stationary_container(n=3, value=0.5, norm_max=100.0, t0s=None):
    """Every frame identical, so last-frame persistence is exact."""
    x = np.full((n, 12, 64, 64), value, dtype=np.float32)
    y = np.full((n, 12, 64, 64), value, dtype=np.float32)
    m = np.stack([masks_for_sample(x[i], norm_max) for i in range(n)])
    if t0s is None:
        t0s = [1_600_000_000 + 300 * i for i in range(n)]
    return DatasetContainer(
        split="test", x=x, m=m, y=y, t0=np.asarray(t0s, dtype=np.int64),
        norm_max=norm_max, crop=CropSpec(0, 0),
        landmask64=np.ones((64, 64), dtype=bool), provenance={},
    )


def test_persistence_on_stationary_data_is_perfect():
    data = stationary_container()
    report = evaluate_model(PersistenceModel(), data, runs=10)
    assert report.mse == 0.0
    assert all(v == 0.0 for v in report.per_leadtime_mse)
    # hour total is 6 mm: exceeds 0.5 everywhere, never reaches 10 or 20
    block = report.thresholds["0.5"]
    assert block["f1"] == 1.0 and not block["f1_undefined"]
    assert block["csi"] == 1.0
    # a one-class table leaves the tn-bearing scores undefined
    assert block["hss_undefined"] and block["mcc_undefined"]
    for thr in ("10.0", "20.0"):
        assert report.thresholds[thr]["f1_undefined"]
        assert report.thresholds[thr]["counts"]["tn"] == 3 * 64 * 64
    assert report.n_samples == 3
    assert report.model == "PersistenceModel"


def test_runs_collapse_for_deterministic_model():
    data = stationary_container(n=2)
    x = torch.as_tensor(data.x[:2])
    m = torch.as_tensor(data.m[:2], dtype=torch.float32)
    model = PersistenceModel()
    one = predict_mean(model, x, m, runs=1)
    many = predict_mean(model, x, m, runs=10, seed=0)
    assert torch.equal(one, many)
    with pytest.raises(ValueError):
        predict_mean(model, x, m, runs=0)


def test_per_season_grouping_uses_forecast_hour():
    # the input hour ends Feb 29 23:30 UTC; the forecast hour lies in March
    t_winter = epoch_seconds(datetime(2020, 2, 29, 23, 30, tzinfo=timezone.utc))
    t_summer = epoch_seconds(datetime(2020, 7, 10, 12, 0, tzinfo=timezone.utc))
    data = stationary_container(n=2, t0s=[t_winter, t_summer])
    report = evaluate_model(PersistenceModel(), data, runs=1, per_season=True)
    assert set(report.seasons) == {"spring", "summer"}
    assert report.seasons["spring"]["n_samples"] == 1
    assert report.seasons["summer"]["n_samples"] == 1
    assert report.seasons["spring"]["mse"] == 0.0


def test_report_json_roundtrip():
    report = evaluate_model(PersistenceModel(), stationary_container(), runs=2,
                            per_season=True)
    again = MetricsReport.from_json(report.to_json())
    assert again.mse == report.mse
    assert again.per_leadtime_mse == report.per_leadtime_mse
    assert again.thresholds == report.thresholds
    assert again.seasons == report.seasons
    assert again.model == report.model
    assert again.meta["units"] == "mm^2 per 5-minute frame"


def test_report_csv_is_long_form():
    report = evaluate_model(PersistenceModel(), stationary_container(), runs=1)
    lines = report.to_csv().strip().splitlines()
    assert lines[0] == "scope,threshold_mm,metric,value,undefined"
    rows = [line.split(",") for line in lines[1:]]
    assert ["all", "", "mse", "0.0", "False"] in rows
    metrics_at_half = {r[2] for r in rows if r[1] == "0.5"}
    assert metrics_at_half == {"f1", "csi", "hss", "mcc"}
    # 1 overall mse + 12 leads + 3 thresholds x 4 metrics
    assert len(rows) == 1 + 12 + 12


def test_evaluate_rejects_empty_split():
    data = stationary_container(n=1)
    empty = DatasetContainer(split="test", x=data.x[:0], m=data.m[:0], y=data.y[:0],
                             t0=data.t0[:0], norm_max=100.0, crop=CropSpec(0, 0),
                             landmask64=data.landmask64, provenance={})
    with pytest.raises(ValueError):
        evaluate_model(PersistenceModel(), empty)


def test_landmask_excludes_sea_pixels_from_counts():
    data = stationary_container(n=1)
    data.landmask64[:32] = False
    report = evaluate_model(PersistenceModel(), data, runs=1)
    assert report.thresholds["0.5"]["counts"]["tp"] == 32 * 64
