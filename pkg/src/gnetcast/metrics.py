"""Verification: denormalized MSE, threshold binarization and skill scores.

Binary metrics pool one confusion table per threshold over all test samples,
counting land pixels only.  The skill-score formulas are kept exactly in the
form the verification protocol fixes them, including an HSS variant without
the conventional factor 2 in the numerator (a perfect forecast scores 0.5);
see tests for the regression guard.  MSE is computed on denormalized values
in millimetres per 5-minute frame.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import timedelta
from typing import NamedTuple

import numpy as np
import torch

from .blocks import has_stochastic, set_stochastic
from .container import DatasetContainer
from .masks import accumulate_hour
from .pipeline import MM_PER_UNIT, SEASONS, from_epoch, season_of

DEFAULT_THRESHOLDS = (0.5, 10.0, 20.0)
DEFAULT_RUNS = 10


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self):
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


class MetricResult(NamedTuple):
    value: float
    undefined: bool = False


def binarize_hour(seq, norm_max, threshold_mm) -> np.ndarray:
    """1 where the hour's accumulated precipitation strictly exceeds the
    threshold.  Accepts model output, so negative values are fine (they just
    never exceed a positive threshold)."""
    if threshold_mm <= 0:
        raise ValueError("threshold_mm must be positive")
    acc = accumulate_hour(seq, norm_max)
    return (acc > threshold_mm).astype(np.uint8)


def confusion(pred_bin, true_bin, landmask=None) -> ConfusionCounts:
    """Pooled 2x2 counts over land pixels; shapes must match exactly."""
    pred = np.asarray(pred_bin)
    true = np.asarray(true_bin)
    if pred.shape != true.shape:
        raise ValueError(f"prediction {pred.shape} and target {true.shape} shapes differ")
    if landmask is not None:
        land = np.asarray(landmask, dtype=bool)
        if land.shape != pred.shape[-land.ndim:]:
            raise ValueError("landmask shape does not match map shape")
        pred = pred[..., land]
        true = true[..., land]
    p = pred.astype(bool)
    t = true.astype(bool)
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & t)),
        fp=int(np.count_nonzero(p & ~t)),
        tn=int(np.count_nonzero(~p & ~t)),
        fn=int(np.count_nonzero(~p & t)),
    )


def f1(c: ConfusionCounts) -> MetricResult:
    """Harmonic mean of precision and recall."""
    if c.tp + c.fp == 0 or c.tp + c.fn == 0:
        return MetricResult(0.0, True)
    precision = c.tp / (c.tp + c.fp)
    recall = c.tp / (c.tp + c.fn)
    if precision + recall == 0:
        return MetricResult(0.0, True)
    return MetricResult(2 * precision * recall / (precision + recall), False)


def csi(c: ConfusionCounts) -> MetricResult:
    denom = c.tp + c.fn + c.fp
    if denom == 0:
        return MetricResult(0.0, True)
    return MetricResult(c.tp / denom, False)


def hss(c: ConfusionCounts) -> MetricResult:
    """(TP*TN - FP*FN) / ((TP+FN)(FN+TN) + (TP+FP)(FP+TN)).

    Deliberately without the usual factor 2 in the numerator: a perfect
    forecast scores 0.5, and HSS ~ MCC/2 on balanced tables.
    """
    denom = (c.tp + c.fn) * (c.fn + c.tn) + (c.tp + c.fp) * (c.fp + c.tn)
    if denom == 0:
        return MetricResult(0.0, True)
    return MetricResult((c.tp * c.tn - c.fp * c.fn) / denom, False)


def mcc(c: ConfusionCounts) -> MetricResult:
    denom_sq = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if denom_sq == 0:
        return MetricResult(0.0, True)
    return MetricResult((c.tp * c.tn - c.fp * c.fn) / math.sqrt(denom_sq), False)


BINARY_METRICS = {"f1": f1, "csi": csi, "hss": hss, "mcc": mcc}


def mse_per_leadtime(preds, targets, norm_max) -> np.ndarray:
    """MSE at each of the 12 lead times, in mm^2 (per 5-minute frame).

    The mean of the 12 values equals the overall MSE because every lead time
    covers the same number of pixels.
    """
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ValueError(f"prediction {preds.shape} and target {targets.shape} shapes differ")
    if preds.ndim != 4 or preds.shape[1] != 12:
        raise ValueError(f"expected (n, 12, H, W) arrays, got {preds.shape}")
    diff_mm = (preds - targets) * (float(norm_max) * MM_PER_UNIT)
    return (diff_mm ** 2).mean(axis=(0, 2, 3))


@dataclass
class MetricsReport:
    model: str
    n_samples: int
    runs: int
    norm_max: float
    mse: float
    per_leadtime_mse: list
    thresholds: dict            # str(threshold) -> {metric: value, metric_undefined: bool, counts: {...}}
    seasons: dict | None = None # season -> {mse, thresholds}
    meta: dict = field(default_factory=dict)

    def to_json(self):
        d = {"model": self.model, "n_samples": self.n_samples, "runs": self.runs,
             "norm_max": self.norm_max, "mse": self.mse,
             "per_leadtime_mse": list(self.per_leadtime_mse),
             "thresholds": self.thresholds, "seasons": self.seasons, "meta": self.meta}
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(model=d["model"], n_samples=d["n_samples"], runs=d["runs"],
                   norm_max=d["norm_max"], mse=d["mse"],
                   per_leadtime_mse=d["per_leadtime_mse"], thresholds=d["thresholds"],
                   seasons=d.get("seasons"), meta=d.get("meta", {}))

    def to_csv(self):
        """Long-form rows: scope, threshold_mm, metric, value, undefined."""
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["scope", "threshold_mm", "metric", "value", "undefined"])
        w.writerow(["all", "", "mse", repr(self.mse), False])
        for i, v in enumerate(self.per_leadtime_mse):
            w.writerow(["all", "", f"mse_leadtime_{i}", repr(float(v)), False])
        scopes = [("all", self.thresholds)]
        if self.seasons:
            scopes += [(season, block["thresholds"]) for season, block in self.seasons.items()]
        for scope, thresholds in scopes:
            for thr, metrics in thresholds.items():
                for name in BINARY_METRICS:
                    w.writerow([scope, thr, name, repr(metrics[name]),
                                metrics[f"{name}_undefined"]])
        return buf.getvalue()


def _metric_block(counts: ConfusionCounts):
    block = {}
    for name, fn in BINARY_METRICS.items():
        res = fn(counts)
        block[name] = res.value
        block[f"{name}_undefined"] = res.undefined
    block["counts"] = counts.to_dict()
    return block


def predict_mean(model, x, m, runs, seed=None):
    """Mean of ``runs`` stochastic passes (eval-mode batch norm, dropout on).

    Falls back to one deterministic pass when the model has no dropout or
    runs == 1.  Inputs are batched tensors.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    model.eval()
    if seed is not None:
        torch.manual_seed(seed)
    stochastic = has_stochastic(model) and runs > 1
    with torch.no_grad():
        if not stochastic:
            set_stochastic(model, False)
            return model(x, m).y_hat
        set_stochastic(model, True)
        acc = None
        for _ in range(runs):
            out = model(x, m).y_hat
            acc = out if acc is None else acc + out
        set_stochastic(model, False)
        return acc / runs


def evaluate_model(model, data: DatasetContainer, runs=DEFAULT_RUNS,
                   thresholds=DEFAULT_THRESHOLDS, per_season=False, seed=0,
                   batch_size=16, model_name=None) -> MetricsReport:
    """Run the full verification protocol on a container split."""
    if data.n == 0:
        raise ValueError("cannot evaluate an empty split")
    if model_name is None:
        model_name = type(model).__name__
    torch.manual_seed(seed)
    land = data.landmask64

    sq_sum = np.zeros(12, dtype=np.float64)   # denormalized mm^2 error sums per lead
    px_per_lead = 0
    pooled = {thr: ConfusionCounts() for thr in thresholds}
    season_sq = {s: np.zeros(12) for s in SEASONS}
    season_px = {s: 0 for s in SEASONS}
    season_n = {s: 0 for s in SEASONS}
    season_pooled = {s: {thr: ConfusionCounts() for thr in thresholds} for s in SEASONS}

    for start in range(0, data.n, batch_size):
        stop = min(start + batch_size, data.n)
        x = torch.as_tensor(data.x[start:stop], dtype=torch.float32)
        m = torch.as_tensor(data.m[start:stop], dtype=torch.float32)
        y = data.y[start:stop]
        pred = predict_mean(model, x, m, runs).numpy()

        diff_mm = (pred.astype(np.float64) - y.astype(np.float64)) * (data.norm_max * MM_PER_UNIT)
        sq = (diff_mm ** 2).sum(axis=(0, 2, 3))
        sq_sum += sq
        px_per_lead += (stop - start) * pred.shape[-2] * pred.shape[-1]

        sample_seasons = [season_of(from_epoch(t) + timedelta(hours=1))
                          for t in data.t0[start:stop]]
        for k in range(stop - start):
            season = sample_seasons[k]
            d = (diff_mm[k] ** 2).sum(axis=(1, 2))
            season_sq[season] += d
            season_px[season] += pred.shape[-2] * pred.shape[-1]
            season_n[season] += 1
            for thr in thresholds:
                pb = binarize_hour(pred[k], data.norm_max, thr)
                tb = binarize_hour(y[k], data.norm_max, thr)
                c = confusion(pb, tb, land)
                pooled[thr] = pooled[thr] + c
                season_pooled[season][thr] = season_pooled[season][thr] + c

    per_lead = sq_sum / px_per_lead
    report = MetricsReport(
        model=model_name, n_samples=data.n, runs=runs, norm_max=data.norm_max,
        mse=float(per_lead.mean()), per_leadtime_mse=[float(v) for v in per_lead],
        thresholds={str(thr): _metric_block(pooled[thr]) for thr in thresholds},
        meta={"seed": seed, "units": "mm^2 per 5-minute frame",
              "split": data.split},
    )
    if per_season:
        report.seasons = {}
        for season in SEASONS:
            if season_n[season] == 0:
                continue
            lead = season_sq[season] / season_px[season]
            report.seasons[season] = {
                "n_samples": season_n[season],
                "mse": float(lead.mean()),
                "thresholds": {str(thr): _metric_block(season_pooled[season][thr])
                               for thr in thresholds},
            }
    return report
