"""Uncertainty estimation: test-time dropout (epistemic) and the
log-variance head (aleatoric).

Epistemic: k stochastic forward passes with dropout on and batch norm frozen;
the per-pixel population variance across the k predictions is the uncertainty
map and their mean is the prediction.  Aleatoric: a supervised model with the
extra 1x1 head predicts per-pixel log-variance s; exp(s) is the variance map.
Values stay in normalized units throughout.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path

import numpy as np
import torch

from .blocks import has_stochastic, set_stochastic
from .container import DatasetContainer
from .pipeline import SEASONS, from_epoch, season_of

DEFAULT_K = 10


@dataclass
class UncertaintyMaps:
    kind: str                     # "epistemic" | "aleatoric"
    variance: np.ndarray          # (12, H, W) per-pixel variance, normalized units^2
    mean: np.ndarray              # (12, H, W) the accompanying prediction
    k: int | None = None


def _single_batch(t):
    t = torch.as_tensor(np.asarray(t), dtype=torch.float32)
    return t.unsqueeze(0) if t.dim() == 3 else t


def ttd_predict(model, x, m=None, k=DEFAULT_K, seed=0) -> UncertaintyMaps:
    """k dropout-perturbed forward passes of one sample.

    Population variance (divide by k): the k passes are the whole ensemble
    being described, not a sample from a larger one.  With dropout disabled
    (p = 0) every pass is identical and the variance is exactly zero.
    """
    if k < 2:
        raise ValueError("k must be >= 2 for a variance estimate")
    xb = _single_batch(x)
    mb = None if m is None else _single_batch(m)
    model.eval()                      # batch-norm uses running stats
    set_stochastic(model, True)
    torch.manual_seed(seed)
    with torch.no_grad():
        outs = torch.stack([model(xb, mb).y_hat[0] for _ in range(k)])
    set_stochastic(model, False)
    mean = outs.mean(dim=0)
    var = outs.var(dim=0, unbiased=False)
    return UncertaintyMaps(kind="epistemic", variance=var.numpy(),
                           mean=mean.numpy(), k=k)


def aleatoric_infer(model, x, m=None) -> UncertaintyMaps:
    """Deterministic pass of the log-variance head; variance = exp(s)."""
    xb = _single_batch(x)
    mb = None if m is None else _single_batch(m)
    model.eval()
    set_stochastic(model, False)
    with torch.no_grad():
        pred = model(xb, mb)
    if pred.s is None:
        raise ValueError("model has no log-variance head; train the aleatoric variant")
    return UncertaintyMaps(kind="aleatoric", variance=torch.exp(pred.s[0]).numpy(),
                           mean=pred.y_hat[0].numpy())


@dataclass
class UncertaintySeries:
    kind: str
    group_by: str                 # "leadtime" | "season"
    labels: list
    values: list                  # mean variance per group
    overall: float
    counts: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps({"kind": self.kind, "group_by": self.group_by,
                           "labels": self.labels, "values": self.values,
                           "overall": self.overall, "counts": self.counts},
                          indent=2, sort_keys=True)

    def write(self, out_dir, stem):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{stem}.json").write_text(self.to_json())
        with open(out_dir / f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([self.group_by, "mean_variance"])
            for label, value in zip(self.labels, self.values):
                w.writerow([label, repr(value)])
            w.writerow(["overall", repr(self.overall)])


def _sample_maps(model, data: DatasetContainer, i, kind, k, seed):
    if kind == "epistemic":
        return ttd_predict(model, data.x[i], data.m[i], k=k, seed=seed + i)
    return aleatoric_infer(model, data.x[i], data.m[i])


def summarize_uncertainty(model, data: DatasetContainer, kind="epistemic",
                          group_by="leadtime", k=DEFAULT_K, seed=0) -> UncertaintySeries:
    """Mean uncertainty over a split, grouped by lead time or by season.

    Epistemic needs a model with dropout; aleatoric needs the log-variance
    head.  Per-sample TTD seeds derive from (seed + index) so the summary is
    reproducible regardless of batch order.
    """
    if data.n == 0:
        raise ValueError("cannot summarize an empty split")
    if group_by not in ("leadtime", "season"):
        raise ValueError("group_by must be 'leadtime' or 'season'")
    if kind == "epistemic" and not has_stochastic(model):
        raise ValueError("epistemic summary needs dropout in the model")

    lead_sum = np.zeros(12, dtype=np.float64)
    season_sum = {s: 0.0 for s in SEASONS}
    season_cnt = {s: 0 for s in SEASONS}
    total = 0.0
    n_px = 0
    for i in range(data.n):
        maps = _sample_maps(model, data, i, kind, k, seed)
        v = maps.variance.astype(np.float64)
        lead_sum += v.mean(axis=(1, 2))
        season = season_of(from_epoch(data.t0[i]) + timedelta(hours=1))
        season_sum[season] += float(v.mean())
        season_cnt[season] += 1
        total += float(v.sum())
        n_px += v.size

    overall = total / n_px
    if group_by == "leadtime":
        labels = list(range(1, 13))
        values = [float(v / data.n) for v in lead_sum]
        counts = {"samples": data.n}
    else:
        labels = [s for s in SEASONS if season_cnt[s] > 0]
        values = [season_sum[s] / season_cnt[s] for s in labels]
        counts = {s: season_cnt[s] for s in labels}
    return UncertaintySeries(kind=kind, group_by=group_by, labels=labels,
                             values=values, overall=overall, counts=counts)


def save_maps(maps: UncertaintyMaps, path):
    """Arrays to .npz: variance, mean, kind, k."""
    np.savez_compressed(path, variance=maps.variance, mean=maps.mean,
                        kind=np.array(maps.kind), k=np.array(-1 if maps.k is None else maps.k))
