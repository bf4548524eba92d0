"""Patch discriminator for adversarial nowcast training.

Scores (input hour, candidate hour) pairs: the 12 conditioning frames and the
12 real or generated frames are concatenated to 24 channels and reduced by
four stride-2 stages from 64x64 to a 4x4 grid of per-patch probabilities.
Every stage carries attention, and each stride-2 conv is followed by a
stride-1 conv at the same width.
"""

from __future__ import annotations

import torch
from torch import nn

from .blocks import CBAM
from .config import DiscriminatorConfig


class _Stage(nn.Module):
    def __init__(self, in_ch, out_ch, slope, reduction, spatial_kernel, first=False):
        super().__init__()
        ops = [nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1, bias=first)]
        if not first:                      # the very first conv runs on raw inputs, no BN
            ops.append(nn.BatchNorm2d(out_ch))
        ops += [
            nn.LeakyReLU(slope, inplace=True),
            CBAM(out_ch, reduction, spatial_kernel),
            nn.Conv2d(out_ch, out_ch, 3, stride=1, padding=1, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.LeakyReLU(slope, inplace=True),
            CBAM(out_ch, reduction, spatial_kernel),
        ]
        self.body = nn.Sequential(*ops)

    def forward(self, x):
        return self.body(x)


class PatchDiscriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig | None = None):
        super().__init__()
        self.cfg = cfg or DiscriminatorConfig()
        self.cfg.validate()
        widths = self.cfg.scaled_widths()
        stages = []
        in_ch = self.cfg.in_channels
        for k, w in enumerate(widths):
            stages.append(_Stage(in_ch, w, self.cfg.leaky_slope,
                                 self.cfg.cbam_reduction, self.cfg.cbam_spatial_kernel,
                                 first=(k == 0)))
            in_ch = w
        self.stages = nn.ModuleList(stages)
        self.head = nn.Conv2d(in_ch, 1, 3, stride=1, padding=1)

    def forward(self, x, y) -> torch.Tensor:
        """-> (B, 4, 4) per-patch real probabilities, strictly inside (0, 1)."""
        for name, t in (("x", x), ("y", y)):
            if t.dim() != 4 or t.shape[1] != 12:
                raise ValueError(f"{name} must be (batch, 12, H, W), got {tuple(t.shape)}")
        if x.shape != y.shape:
            raise ValueError(f"x {tuple(x.shape)} and y {tuple(y.shape)} must match")
        if x.shape[-2:] != (self.cfg.input_size, self.cfg.input_size):
            raise ValueError(f"expected {self.cfg.input_size}x{self.cfg.input_size} inputs")
        h = torch.cat([x, y], dim=1)
        for stage in self.stages:
            h = stage(h)
        return torch.sigmoid(self.head(h)).squeeze(1)

    def feature_trace(self, x, y):
        """Spatial size after each stage, for architecture tests."""
        h = torch.cat([x, y], dim=1)
        trace = [h.shape[-1]]
        for stage in self.stages:
            h = stage(h)
            trace.append(h.shape[-1])
        return trace
