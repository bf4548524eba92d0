"""Training loops: supervised (MSE or aleatoric NLL) and adversarial.

Shared machinery: Adam, a validation-driven controller that cuts the learning
rate to a tenth after 4 epochs without improvement and stops after 15, a
per-epoch checkpoint with a best-model pointer, and a CSV/JSON epoch log.
The adversarial loop updates the discriminator once every two generator
iterations and keeps generator dropout active in both passes.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .blocks import set_stochastic
from .config import TrainConfig
from .container import DatasetContainer, split_indices
from .losses import loss_aleatoric, loss_generator_total, loss_l2, loss_mse
from .models import save_checkpoint


@dataclass
class PlateauEarlyStop:
    """Tracks strict improvement of a monitored value.

    Cuts the LR when ``plateau_patience`` consecutive epochs fail to improve
    (counter resets on the cut, so cuts repeat every ``plateau_patience``
    stagnant epochs) and requests a stop after ``early_stop_patience`` epochs
    without improvement.  Either behaviour can be disabled with None.
    """

    plateau_patience: int | None = 4
    early_stop_patience: int | None = 15
    best: float = math.inf
    bad: int = 0
    bad_for_lr: int = 0

    def update(self, value):
        if value < self.best:
            self.best = value
            self.bad = 0
            self.bad_for_lr = 0
            return True, False, False
        self.bad += 1
        self.bad_for_lr += 1
        reduce_lr = self.plateau_patience is not None and self.bad_for_lr >= self.plateau_patience
        if reduce_lr:
            self.bad_for_lr = 0
        stop = self.early_stop_patience is not None and self.bad >= self.early_stop_patience
        return False, reduce_lr, stop


def _cut_lr(optimizer, factor):
    for group in optimizer.param_groups:
        group["lr"] *= factor


def _lr(optimizer):
    return optimizer.param_groups[0]["lr"]


# ------------------------------------------------------------------- data

@dataclass
class TensorData:
    x: torch.Tensor
    y: torch.Tensor
    m: torch.Tensor | None = None

    def __len__(self):
        return self.x.shape[0]

    def batch(self, idx):
        return self.x[idx], None if self.m is None else self.m[idx], self.y[idx]

    def subset(self, indices):
        idx = torch.as_tensor(np.asarray(indices), dtype=torch.long)
        return TensorData(self.x[idx], self.y[idx], None if self.m is None else self.m[idx])

    @classmethod
    def from_arrays(cls, x, y, m=None):
        return cls(
            torch.as_tensor(np.asarray(x), dtype=torch.float32),
            torch.as_tensor(np.asarray(y), dtype=torch.float32),
            None if m is None else torch.as_tensor(np.asarray(m), dtype=torch.float32),
        )

    @classmethod
    def from_container(cls, c: DatasetContainer):
        return cls.from_arrays(c.x, c.y, c.m)


def train_val_split(data: TensorData, validation_fraction=0.1):
    """Chronological split: the most recent tail becomes validation."""
    tr, va = split_indices(len(data), validation_fraction)
    return data.subset(tr), data.subset(va)


def _batches(n, batch_size, generator):
    perm = torch.randperm(n, generator=generator)
    for i in range(0, n, batch_size):
        yield perm[i:i + batch_size]


def _epoch_generator(seed, epoch):
    # fixed mapping (seed, epoch) -> shuffle stream keeps resumed runs exact
    g = torch.Generator()
    g.manual_seed(seed * 100_003 + epoch)
    return g


def eval_mse(model, data: TensorData, batch_size=32):
    """Deterministic validation MSE in normalized units."""
    model.eval()
    set_stochastic(model, False)
    se, cnt = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(data), batch_size):
            xb, mb, yb = data.batch(slice(i, i + batch_size))
            pred = model(xb, mb).y_hat
            se += float(((pred - yb) ** 2).sum())
            cnt += yb.numel()
    return se / cnt


def eval_aleatoric(model, data: TensorData, batch_size=32):
    model.eval()
    set_stochastic(model, False)
    total, cnt = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(data), batch_size):
            xb, mb, yb = data.batch(slice(i, i + batch_size))
            pred = model(xb, mb)
            total += float(loss_aleatoric(yb, pred.y_hat, pred.s)) * yb.numel()
            cnt += yb.numel()
    return total / cnt


# ------------------------------------------------------------------ logging

def write_train_log(rows, out_dir, stem="train_log"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.json").write_text(json.dumps(rows, indent=2))
    cols = []
    for row in rows:
        for key in row:
            if key not in cols:
                cols.append(key)
    with open(out_dir / f"{stem}.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        writer.writerows(rows)


@dataclass
class TrainResult:
    rows: list
    best_epoch: int
    best_val_mse: float
    final_epoch: int
    best_state: dict
    best_state_d: dict | None = None


# -------------------------------------------------------------- supervised

def _resume_blob_path(out_dir):
    return Path(out_dir) / "last.pt"


def train_supervised(model, train: TensorData, val: TensorData, cfg: TrainConfig, *,
                     loss_kind="mse", out_dir=None, resume_from=None,
                     norm_max=None, val_loss_hook=None, stop_below_train_loss=None,
                     log_cb=None):
    """Train a generator against MSE or the aleatoric NLL.

    The controller monitors the configured validation loss; the best
    checkpoint is chosen by validation MSE so variants stay comparable.
    ``val_loss_hook(epoch) -> float``, when given, replaces the monitored
    value (scheduler testing).  ``stop_below_train_loss`` ends the run early
    once the epoch-mean training loss drops below it.
    """
    cfg.validate()
    if loss_kind not in ("mse", "aleatoric"):
        raise ValueError(f"unknown loss kind '{loss_kind}'")
    torch.manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr_generator, betas=tuple(cfg.adam_betas))
    ctrl = PlateauEarlyStop(cfg.plateau_patience, cfg.early_stop_patience)
    rows = []
    best = {"epoch": 0, "val_mse": math.inf, "state": None}
    start_epoch = 1

    if resume_from is not None:
        blob = torch.load(resume_from, map_location="cpu", weights_only=False)
        model.load_state_dict(blob["model"])
        opt.load_state_dict(blob["opt"])
        ctrl = PlateauEarlyStop(**blob["ctrl"])
        best = blob["best"]
        rows = blob["rows"]
        start_epoch = blob["epoch"] + 1
        torch.set_rng_state(blob["torch_rng"])

    def monitored_loss():
        if loss_kind == "mse":
            return None
        return eval_aleatoric(model, val, cfg.batch_size)

    if start_epoch == 1:
        val_mse = eval_mse(model, val, cfg.batch_size)
        extra_val = monitored_loss()
        rows.append({
            "epoch": 0, "train_loss": None, "val_mse": val_mse,
            "val_loss": val_mse if extra_val is None else extra_val,
            "lr_g": _lr(opt), "lr_reduced": False, "seconds": 0.0,
        })
        best = {"epoch": 0, "val_mse": val_mse,
                "state": copy.deepcopy(model.state_dict())}

    final_epoch = start_epoch - 1
    for epoch in range(start_epoch, cfg.max_epochs + 1):
        tic = time.monotonic()
        model.train()
        set_stochastic(model, True)
        lr_used = _lr(opt)
        losses = []
        for idx in _batches(len(train), cfg.batch_size, _epoch_generator(cfg.seed, epoch)):
            xb, mb, yb = train.batch(idx)
            pred = model(xb, mb)
            if loss_kind == "mse":
                loss = loss_mse(yb, pred.y_hat)
            else:
                if pred.s is None:
                    raise ValueError("aleatoric training needs a model with the log-variance head")
                loss = loss_aleatoric(yb, pred.y_hat, pred.s)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        train_loss = float(np.mean(losses))

        val_mse = eval_mse(model, val, cfg.batch_size)
        extra_val = monitored_loss()
        val_loss = val_mse if extra_val is None else extra_val
        monitored = val_loss if val_loss_hook is None else float(val_loss_hook(epoch))
        improved, reduce_lr, stop = ctrl.update(monitored)
        if reduce_lr:
            _cut_lr(opt, cfg.plateau_factor)
        if val_mse < best["val_mse"]:
            best = {"epoch": epoch, "val_mse": val_mse,
                    "state": copy.deepcopy(model.state_dict())}

        row = {"epoch": epoch, "train_loss": train_loss, "val_mse": val_mse,
               "val_loss": val_loss, "lr_g": lr_used, "lr_reduced": bool(reduce_lr),
               "seconds": round(time.monotonic() - tic, 3)}
        rows.append(row)
        if log_cb:
            log_cb(row)

        final_epoch = epoch
        if out_dir is not None:
            _write_supervised_checkpoints(out_dir, model, opt, ctrl, best, rows,
                                          epoch, cfg, loss_kind, norm_max)
        if stop or (stop_below_train_loss is not None and train_loss < stop_below_train_loss):
            break

    if out_dir is not None:
        write_train_log(rows, out_dir)
    return TrainResult(rows=rows, best_epoch=best["epoch"], best_val_mse=best["val_mse"],
                       final_epoch=final_epoch, best_state=best["state"])


def _write_supervised_checkpoints(out_dir, model, opt, ctrl, best, rows, epoch,
                                  cfg, loss_kind, norm_max):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save({"model": model.state_dict(), "opt": opt.state_dict(),
                "ctrl": asdict(ctrl), "best": best, "rows": rows, "epoch": epoch,
                "torch_rng": torch.get_rng_state()}, _resume_blob_path(out_dir))
    live = model.state_dict()
    try:
        model.load_state_dict(best["state"])
        save_checkpoint(out_dir / "best.pt", model, epoch=best["epoch"],
                        val_loss=best["val_mse"], norm_max=norm_max, seed=cfg.seed,
                        extra={"role": "generator", "objective": loss_kind})
    finally:
        model.load_state_dict(live)


# ------------------------------------------------------------- adversarial

def _gan_validate(G, D, val: TensorData, cfg):
    """Deterministic validation: MSE, generator total and discriminator loss."""
    G.eval()
    D.eval()
    set_stochastic(G, False)
    eps = cfg.epsilon_log
    se = log_real = log_fake_d = adv = 0.0
    n_px = n_patch = 0
    with torch.no_grad():
        for i in range(0, len(val), cfg.batch_size):
            xb, mb, yb = val.batch(slice(i, i + cfg.batch_size))
            fake = G(xb, mb).y_hat
            se += float(((fake - yb) ** 2).sum())
            n_px += yb.numel()
            rs = D(xb, yb).clamp(eps, 1 - eps)
            fs = D(xb, fake).clamp(eps, 1 - eps)
            log_real += float(torch.log(rs).sum())
            log_fake_d += float(torch.log(1 - fs).sum())
            if cfg.non_saturating:
                adv += -float(torch.log(fs).sum())
            else:
                adv += float(torch.log(1 - fs).sum())
            n_patch += rs.numel()
    val_mse = se / n_px
    val_g_total = adv / n_patch + cfg.lambda_l2 * val_mse
    val_d_loss = -(log_real / n_patch + log_fake_d / n_patch)
    return val_mse, val_g_total, val_d_loss


def train_gan(G, D, train: TensorData, val: TensorData, cfg: TrainConfig, *,
              out_dir=None, resume_from=None, norm_max=None,
              stop_below_train_l2=None, log_cb=None):
    """Adversarial training of G against D on (input hour, target hour) pairs.

    Per iteration: one G step on adv + lambda * L2 (through a fresh fake), and
    on every ``d_update_every``-th iteration one D step on the negated cGAN
    value with a freshly sampled, detached fake.  Each optimizer has its own
    plateau controller (G on its validation total, D on its validation loss);
    early stopping and best-model selection follow validation MSE.
    """
    cfg.validate()
    torch.manual_seed(cfg.seed)
    opt_g = torch.optim.Adam(G.parameters(), lr=cfg.lr_generator, betas=tuple(cfg.adam_betas))
    opt_d = torch.optim.Adam(D.parameters(), lr=cfg.lr_discriminator, betas=tuple(cfg.adam_betas))
    ctrl_g = PlateauEarlyStop(cfg.plateau_patience, None)
    ctrl_d = PlateauEarlyStop(cfg.plateau_patience, None)
    stopper = PlateauEarlyStop(None, cfg.early_stop_patience)
    rows = []
    best = {"epoch": 0, "val_mse": math.inf, "state": None}
    start_epoch = 1

    if resume_from is not None:
        blob = torch.load(resume_from, map_location="cpu", weights_only=False)
        G.load_state_dict(blob["g"])
        D.load_state_dict(blob["d"])
        opt_g.load_state_dict(blob["opt_g"])
        opt_d.load_state_dict(blob["opt_d"])
        ctrl_g = PlateauEarlyStop(**blob["ctrl_g"])
        ctrl_d = PlateauEarlyStop(**blob["ctrl_d"])
        stopper = PlateauEarlyStop(**blob["stopper"])
        best = blob["best"]
        rows = blob["rows"]
        start_epoch = blob["epoch"] + 1
        torch.set_rng_state(blob["torch_rng"])

    if start_epoch == 1:
        val_mse, val_g_total, val_d_loss = _gan_validate(G, D, val, cfg)
        train_l2_0 = eval_mse(G, train, cfg.batch_size)
        rows.append({"epoch": 0, "train_adv": None, "train_l2": train_l2_0,
                     "train_g_total": None, "train_d_loss": None,
                     "val_mse": val_mse, "val_g_total": val_g_total,
                     "val_d_loss": val_d_loss, "lr_g": _lr(opt_g), "lr_d": _lr(opt_d),
                     "lr_g_reduced": False, "lr_d_reduced": False,
                     "d_updates": 0, "seconds": 0.0})
        best = {"epoch": 0, "val_mse": val_mse, "state": copy.deepcopy(G.state_dict())}

    final_epoch = start_epoch - 1
    for epoch in range(start_epoch, cfg.max_epochs + 1):
        tic = time.monotonic()
        G.train()
        D.train()
        set_stochastic(G, True)
        lr_g_used, lr_d_used = _lr(opt_g), _lr(opt_d)
        adv_terms, l2_terms, d_terms = [], [], []
        d_updates = 0
        for it, idx in enumerate(_batches(len(train), cfg.batch_size,
                                          _epoch_generator(cfg.seed, epoch)), start=1):
            xb, mb, yb = train.batch(idx)

            fake = G(xb, mb).y_hat
            scores = D(xb, fake)
            adv = loss_generator_total(scores, yb, fake, 0.0, cfg.epsilon_log,
                                       cfg.non_saturating)
            l2 = loss_l2(yb, fake)
            g_loss = adv + cfg.lambda_l2 * l2
            opt_g.zero_grad()
            opt_d.zero_grad()          # discard D grads picked up through the G pass
            g_loss.backward()
            opt_g.step()
            adv_terms.append(float(adv.detach()))
            l2_terms.append(float(l2.detach()))

            if it % cfg.d_update_every == 0:
                with torch.no_grad():
                    fake_d = G(xb, mb).y_hat   # fresh dropout draw, detached
                real_scores = D(xb, yb)
                fake_scores = D(xb, fake_d)
                d_loss = -(torch.log(real_scores.clamp(cfg.epsilon_log, 1 - cfg.epsilon_log)).mean()
                           + torch.log(1 - fake_scores.clamp(cfg.epsilon_log, 1 - cfg.epsilon_log)).mean())
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()
                d_terms.append(float(d_loss.detach()))
                d_updates += 1

        train_adv = float(np.mean(adv_terms))
        train_l2 = float(np.mean(l2_terms))
        train_d = float(np.mean(d_terms)) if d_terms else None

        val_mse, val_g_total, val_d_loss = _gan_validate(G, D, val, cfg)
        _, reduce_g, _ = ctrl_g.update(val_g_total)
        _, reduce_d, _ = ctrl_d.update(val_d_loss)
        _, _, stop = stopper.update(val_mse)
        if reduce_g:
            _cut_lr(opt_g, cfg.plateau_factor)
        if reduce_d:
            _cut_lr(opt_d, cfg.plateau_factor)
        if val_mse < best["val_mse"]:
            best = {"epoch": epoch, "val_mse": val_mse,
                    "state": copy.deepcopy(G.state_dict())}

        row = {"epoch": epoch, "train_adv": train_adv, "train_l2": train_l2,
               "train_g_total": train_adv + cfg.lambda_l2 * train_l2,
               "train_d_loss": train_d, "val_mse": val_mse,
               "val_g_total": val_g_total, "val_d_loss": val_d_loss,
               "lr_g": lr_g_used, "lr_d": lr_d_used,
               "lr_g_reduced": bool(reduce_g), "lr_d_reduced": bool(reduce_d),
               "d_updates": d_updates, "seconds": round(time.monotonic() - tic, 3)}
        rows.append(row)
        if log_cb:
            log_cb(row)

        final_epoch = epoch
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            torch.save({"g": G.state_dict(), "d": D.state_dict(),
                        "opt_g": opt_g.state_dict(), "opt_d": opt_d.state_dict(),
                        "ctrl_g": asdict(ctrl_g), "ctrl_d": asdict(ctrl_d),
                        "stopper": asdict(stopper), "best": best, "rows": rows,
                        "epoch": epoch, "torch_rng": torch.get_rng_state()},
                       _resume_blob_path(out_dir))
            live = G.state_dict()
            try:
                G.load_state_dict(best["state"])
                save_checkpoint(out_dir / "best.pt", G, epoch=best["epoch"],
                                val_loss=best["val_mse"], norm_max=norm_max,
                                seed=cfg.seed,
                                extra={"role": "generator", "objective": "gan"})
            finally:
                G.load_state_dict(live)
            save_checkpoint(out_dir / "discriminator.pt", D, epoch=epoch,
                            val_loss=val_d_loss, norm_max=norm_max, seed=cfg.seed,
                            extra={"role": "discriminator", "objective": "gan"})

        if stop or (stop_below_train_l2 is not None and train_l2 < stop_below_train_l2):
            break

    if out_dir is not None:
        write_train_log(rows, out_dir)
    return TrainResult(rows=rows, best_epoch=best["epoch"], best_val_mse=best["val_mse"],
                       final_epoch=final_epoch, best_state=best["state"],
                       best_state_d=copy.deepcopy(D.state_dict()))
