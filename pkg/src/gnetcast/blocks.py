"""Convolutional building blocks shared by the generators and discriminator."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


class DepthwiseSeparableConv(nn.Module):
    """3x3 depthwise conv followed by a 1x1 pointwise conv, spatial-preserving."""

    def __init__(self, in_channels, out_channels, kernel_size=3, bias=True):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd to preserve spatial size")
        self.depthwise = nn.Conv2d(in_channels, in_channels, kernel_size,
                                   padding=kernel_size // 2, groups=in_channels, bias=bias)
        self.pointwise = nn.Conv2d(in_channels, out_channels, 1, bias=bias)

    def forward(self, x):
        return self.pointwise(self.depthwise(x))


def dsc_weight_count(in_channels, out_channels, kernel_size=3):
    """Non-bias parameter count: k*k*in (depthwise) + in*out (pointwise)."""
    return kernel_size * kernel_size * in_channels + in_channels * out_channels


class DoubleDSC(nn.Module):
    """Two DSC -> BatchNorm -> ReLU stages; the per-level workhorse."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.block = nn.Sequential(
            DepthwiseSeparableConv(in_channels, out_channels, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
            DepthwiseSeparableConv(out_channels, out_channels, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.block(x)


class ChannelGate(nn.Module):
    def __init__(self, channels, reduction=16):
        super().__init__()
        if channels < reduction:
            raise ValueError(f"channels ({channels}) must be >= reduction ({reduction})")
        hidden = channels // reduction
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, hidden, 1, bias=False),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, channels, 1, bias=False),
        )

    def forward(self, x):
        avg = self.mlp(F.adaptive_avg_pool2d(x, 1))
        mx = self.mlp(F.adaptive_max_pool2d(x, 1))
        return torch.sigmoid(avg + mx)


class SpatialGate(nn.Module):
    def __init__(self, kernel_size=7):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ValueError("spatial gate kernel must be odd")
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2, bias=False)

    def forward(self, x):
        stats = torch.cat([x.mean(dim=1, keepdim=True),
                           x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(stats))


class CBAM(nn.Module):
    """Channel gate then spatial gate, both multiplicative in (0, 1)."""

    def __init__(self, channels, reduction=16, spatial_kernel=7):
        super().__init__()
        self.channel_gate = ChannelGate(channels, reduction)
        self.spatial_gate = SpatialGate(spatial_kernel)

    def forward(self, x):
        x = x * self.channel_gate(x)
        return x * self.spatial_gate(x)


class DownBlock(nn.Module):
    """2x2 max-pool halving the grid, then a DoubleDSC widening channels."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.pool = nn.MaxPool2d(2)
        self.conv = DoubleDSC(in_channels, out_channels)

    def forward(self, x):
        if x.shape[-1] % 2 or x.shape[-2] % 2:
            raise ValueError(f"spatial size {tuple(x.shape[-2:])} not divisible by 2")
        return self.conv(self.pool(x))


class MCDropout(nn.Module):
    """Dropout driven by an explicit switch instead of train/eval mode.

    Training turns the switch on; deterministic evaluation turns it off; test
    time dropout turns it on while batch-norm stays frozen in eval mode.
    """

    def __init__(self, p=0.5):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout p must be in [0, 1)")
        self.p = p
        self.stochastic = False

    def forward(self, x):
        return F.dropout(x, self.p, training=self.stochastic and self.p > 0)

    def extra_repr(self):
        return f"p={self.p}"


class UpBlock(nn.Module):
    """Bilinear 2x upsample, optional dropout, skip concat, DoubleDSC.

    ``in_channels`` counts the concatenation: upsampled channels plus skip
    channels.  Dropout is applied to the upsampled tensor before the concat so
    the skip path stays intact.
    """

    def __init__(self, in_channels, out_channels, dropout_p=0.0):
        super().__init__()
        self.up = nn.Upsample(scale_factor=2, mode="bilinear", align_corners=True)
        self.dropout = MCDropout(dropout_p)
        self.conv = DoubleDSC(in_channels, out_channels)

    def forward(self, x, skip):
        if skip.shape[-2:] != (x.shape[-2] * 2, x.shape[-1] * 2):
            raise ValueError(
                f"skip spatial {tuple(skip.shape[-2:])} must be exactly twice {tuple(x.shape[-2:])}"
            )
        x = self.dropout(self.up(x))
        return self.conv(torch.cat([skip, x], dim=1))


def set_stochastic(model: nn.Module, on: bool):
    """Flip every MCDropout switch in the model."""
    for mod in model.modules():
        if isinstance(mod, MCDropout):
            mod.stochastic = bool(on)


def has_stochastic(model: nn.Module) -> bool:
    return any(isinstance(m, MCDropout) and m.p > 0 for m in model.modules())
