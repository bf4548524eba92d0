"""Nowcasting generators: single- and dual-encoder attention UNets.

Both models map an hour of radar (12 frames, 64x64, normalized) to the next
hour.  The dual-encoder variant additionally ingests a 25-channel stack of
binary intensity masks through a second, structurally identical encoder;
per-level CBAM outputs of the two encoders are concatenated and fed to the
decoder through the skip connections.  The output head is linear, so
predictions are unbounded on both sides.
"""

from __future__ import annotations

import dataclasses
import json
import subprocess
from pathlib import Path
from typing import NamedTuple

import torch
from torch import nn

from .blocks import CBAM, DoubleDSC, DownBlock, UpBlock, set_stochastic
from .config import DiscriminatorConfig, GeneratorConfig

# dropout after the first two bilinear upsamplings only
DROPOUT_LEVELS = 2


class Prediction(NamedTuple):
    y_hat: torch.Tensor                  # (B, 12, H, W)
    s: torch.Tensor | None = None        # (B, 12, H, W) log-variance, aleatoric head only


class AttentionEncoder(nn.Module):
    """Five levels; each level ends in a CBAM whose output feeds both the
    skip connection and the next (max-pooled) level."""

    def __init__(self, in_channels, widths, reduction=16, spatial_kernel=7):
        super().__init__()
        self.inc = DoubleDSC(in_channels, widths[0])
        self.downs = nn.ModuleList(
            DownBlock(widths[i - 1], widths[i]) for i in range(1, len(widths))
        )
        self.cbams = nn.ModuleList(
            CBAM(w, reduction, spatial_kernel) for w in widths
        )

    def forward(self, x):
        feats = [self.cbams[0](self.inc(x))]
        for down, cbam in zip(self.downs, self.cbams[1:]):
            feats.append(cbam(down(feats[-1])))
        return feats

    def level_blocks(self):
        """(DoubleDSC, CBAM) pair per level, shallow to deep."""
        convs = [self.inc] + [d.conv for d in self.downs]
        return list(zip(convs, self.cbams))


class Decoder(nn.Module):
    """Four UpBlocks walking back to full resolution; dropout on the first two."""

    def __init__(self, skip_widths, decoder_widths, dropout_p=0.5):
        super().__init__()
        ups = []
        ch = skip_widths[-1]             # bottleneck channels
        for j, out_ch in enumerate(decoder_widths):
            skip_ch = skip_widths[len(skip_widths) - 2 - j]
            p = dropout_p if j < DROPOUT_LEVELS else 0.0
            ups.append(UpBlock(ch + skip_ch, out_ch, dropout_p=p))
            ch = out_ch
        self.ups = nn.ModuleList(ups)

    def forward(self, feats):
        h = feats[-1]
        for j, up in enumerate(self.ups):
            h = up(h, feats[len(feats) - 2 - j])
        return h


def _check_input(t, channels, name):
    if t.dim() != 4 or t.shape[1] != channels:
        raise ValueError(f"{name} must be (batch, {channels}, H, W), got {tuple(t.shape)}")


class SmaAtUNet(nn.Module):
    """Single-encoder baseline: radar frames in, next hour out."""

    def __init__(self, cfg: GeneratorConfig | None = None):
        super().__init__()
        self.cfg = cfg or dataclasses.replace(GeneratorConfig(), dual_encoder=False)
        self.cfg.validate()
        ew = self.cfg.scaled_encoder_widths()
        dw = self.cfg.scaled_decoder_widths()
        self.encoder = AttentionEncoder(self.cfg.in_frames, ew,
                                        self.cfg.cbam_reduction, self.cfg.cbam_spatial_kernel)
        self.decoder = Decoder(ew, dw, self.cfg.dropout_p)
        self.head = nn.Conv2d(dw[-1], self.cfg.out_frames, 1)
        self.head_s = nn.Conv2d(dw[-1], self.cfg.out_frames, 1) if self.cfg.aleatoric_head else None

    def forward(self, x, m=None) -> Prediction:
        _check_input(x, self.cfg.in_frames, "x")
        h = self.decoder(self.encoder(x))
        return Prediction(self.head(h), self.head_s(h) if self.head_s is not None else None)

    def activation_sites(self):
        sites = {}
        for d, (conv, cbam) in enumerate(self.encoder.level_blocks()):
            sites[f"enc/d{d}/dsc"] = conv
            sites[f"enc/d{d}/cbam"] = cbam
        for j, up in enumerate(self.decoder.ups):
            sites[f"dec/d{3 - j}/dsc"] = up.conv
        return sites


class SmaAtGNet(nn.Module):
    """Dual-encoder generator: radar frames plus threshold-mask stack."""

    def __init__(self, cfg: GeneratorConfig | None = None):
        super().__init__()
        self.cfg = cfg or GeneratorConfig()
        self.cfg.validate()
        ew = self.cfg.scaled_encoder_widths()
        dw = self.cfg.scaled_decoder_widths()
        args = (ew, self.cfg.cbam_reduction, self.cfg.cbam_spatial_kernel)
        self.enc_map = AttentionEncoder(self.cfg.in_frames, *args)
        self.enc_mask = AttentionEncoder(self.cfg.mask_channels, *args)
        self.decoder = Decoder(tuple(2 * w for w in ew), dw, self.cfg.dropout_p)
        self.head = nn.Conv2d(dw[-1], self.cfg.out_frames, 1)
        self.head_s = nn.Conv2d(dw[-1], self.cfg.out_frames, 1) if self.cfg.aleatoric_head else None

    def forward(self, x, m=None) -> Prediction:
        if m is None:
            raise ValueError("dual-encoder model requires the mask stack m")
        _check_input(x, self.cfg.in_frames, "x")
        _check_input(m, self.cfg.mask_channels, "m")
        if m.shape[-2:] != x.shape[-2:]:
            raise ValueError("x and m must share spatial size")
        fx = self.enc_map(x)
        fm = self.enc_mask(m.to(x.dtype))
        feats = [torch.cat([a, b], dim=1) for a, b in zip(fx, fm)]
        h = self.decoder(feats)
        return Prediction(self.head(h), self.head_s(h) if self.head_s is not None else None)

    def activation_sites(self):
        sites = {}
        for name, enc in (("enc_map", self.enc_map), ("enc_mask", self.enc_mask)):
            for d, (conv, cbam) in enumerate(enc.level_blocks()):
                sites[f"{name}/d{d}/dsc"] = conv
                sites[f"{name}/d{d}/cbam"] = cbam
        for j, up in enumerate(self.decoder.ups):
            sites[f"dec/d{3 - j}/dsc"] = up.conv
        return sites


class PersistenceModel(nn.Module):
    """Repeats the last observed frame for every lead time.  No parameters."""

    def forward(self, x, m=None) -> Prediction:
        if x.dim() != 4:
            raise ValueError(f"x must be (batch, frames, H, W), got {tuple(x.shape)}")
        return Prediction(x[:, -1:].repeat(1, 12, 1, 1))


def build_generator(cfg: GeneratorConfig) -> nn.Module:
    return SmaAtGNet(cfg) if cfg.dual_encoder else SmaAtUNet(cfg)


# ------------------------------------------------------------- checkpoints

def _git_hash():
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True,
                             text=True, timeout=5)
        return out.stdout.strip() if out.returncode == 0 else "unknown"
    except Exception:
        return "unknown"


def save_checkpoint(path, model, *, epoch=None, val_loss=None, norm_max=None,
                    seed=None, extra=None):
    """Parameter blob at ``path`` plus a JSON sidecar at ``path + '.json'``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), path)
    sidecar = {
        "model_class": type(model).__name__,
        "config": dataclasses.asdict(model.cfg) if hasattr(model, "cfg") else None,
        "epoch": epoch,
        "validation_loss": val_loss,
        "norm_max": norm_max,
        "seed": seed,
        "git_hash": _git_hash(),
    }
    if extra:
        sidecar.update(extra)
    path.with_name(path.name + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def _tuplify(d, cls):
    proto = cls()
    kwargs = {}
    for k, v in d.items():
        kwargs[k] = tuple(v) if isinstance(getattr(proto, k), tuple) and isinstance(v, list) else v
    return cls(**kwargs)


def load_checkpoint(path, map_location="cpu"):
    """Rebuild the model named in the sidecar and load its parameters."""
    from .discriminator import PatchDiscriminator   # local import avoids a cycle at module load

    path = Path(path)
    sidecar_path = path.with_name(path.name + ".json")
    if not sidecar_path.exists():
        raise FileNotFoundError(f"checkpoint sidecar {sidecar_path} missing")
    sidecar = json.loads(sidecar_path.read_text())
    cls_name = sidecar.get("model_class")
    if cls_name in ("SmaAtUNet", "SmaAtGNet"):
        cfg = _tuplify(sidecar["config"], GeneratorConfig)
        model = SmaAtUNet(cfg) if cls_name == "SmaAtUNet" else SmaAtGNet(cfg)
    elif cls_name == "PatchDiscriminator":
        cfg = _tuplify(sidecar["config"], DiscriminatorConfig)
        model = PatchDiscriminator(cfg)
    elif cls_name == "PersistenceModel":
        model = PersistenceModel()
    else:
        raise ValueError(f"checkpoint names unknown model class '{cls_name}'")
    state = torch.load(path, map_location=map_location, weights_only=True)
    model.load_state_dict(state)
    model.eval()
    set_stochastic(model, False)
    return model, sidecar
