"""Grad-CAM maps for the nowcasting generators.

The class-score stand-in is the sum of predicted values over the pixels whose
binarized prediction (hour accumulation > 0.5 mm) says rain; the rainy set is
treated as a constant during differentiation.  Activations are captured at
named sites -- every per-level double-DSC block and CBAM of each encoder and
every decoder double-DSC -- via ``model.activation_sites()``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .blocks import set_stochastic
from .masks import accumulate_hour
from .pipeline import MM_PER_UNIT

DEFAULT_BINARIZE_MM = 0.5


@dataclass
class HeatmapRequest:
    layer: str
    binarize_threshold_mm: float = DEFAULT_BINARIZE_MM


@dataclass
class GradCamResult:
    heatmap: np.ndarray          # (64, 64) in [0, 1]
    layer: str
    empty: bool                  # True when nothing was predicted rainy
    source_shape: tuple          # activation spatial size before upsampling


def list_layers(model):
    return list(model.activation_sites().keys())


def gradcam(model, x, m, req: HeatmapRequest, norm_max) -> GradCamResult:
    """Importance heatmap of one activation site for one sample."""
    sites = model.activation_sites()
    if req.layer not in sites:
        known = ", ".join(sites)
        raise ValueError(f"unknown layer '{req.layer}'; available: {known}")
    if req.binarize_threshold_mm <= 0:
        raise ValueError("binarize_threshold_mm must be positive")

    model.eval()
    set_stochastic(model, False)
    xb = torch.as_tensor(np.asarray(x), dtype=torch.float32)
    xb = xb.unsqueeze(0) if xb.dim() == 3 else xb
    mb = None
    if m is not None:
        mb = torch.as_tensor(np.asarray(m), dtype=torch.float32)
        mb = mb.unsqueeze(0) if mb.dim() == 3 else mb
    out_hw = xb.shape[-2:]

    captured = {}

    def hook(_mod, _inp, out):
        captured["act"] = out

    handle = sites[req.layer].register_forward_hook(hook)
    try:
        with torch.enable_grad():
            pred = model(xb, mb).y_hat          # (1, 12, H, W)
            act = captured["act"]
            # rainy set from the detached, denormalized accumulation
            acc_mm = accumulate_hour(pred.detach()[0].numpy(), norm_max)
            rainy = torch.as_tensor(acc_mm > req.binarize_threshold_mm)
            if not bool(rainy.any()):
                return GradCamResult(
                    heatmap=np.zeros(tuple(out_hw), dtype=np.float32),
                    layer=req.layer, empty=True,
                    source_shape=tuple(act.shape[-2:]))
            target = pred[0].sum(dim=0)[rainy].sum()
            grads = torch.autograd.grad(target, act)[0]      # (1, C, h, w)
    finally:
        handle.remove()

    weights = grads.mean(dim=(2, 3))[0]                     # (C,)
    cam = F.relu((weights[:, None, None] * act[0].detach()).sum(dim=0))
    cam = cam[None, None]
    if cam.shape[-2:] != tuple(out_hw):
        cam = F.interpolate(cam, size=tuple(out_hw), mode="bilinear", align_corners=False)
    cam = cam[0, 0]
    peak = float(cam.max())
    if peak > 0:
        cam = cam / peak
    return GradCamResult(heatmap=cam.numpy().astype(np.float32), layer=req.layer,
                         empty=False, source_shape=tuple(grads.shape[-2:]))


def heatmap_set(model, x, m, norm_max, layers=None,
                binarize_threshold_mm=DEFAULT_BINARIZE_MM):
    """Grad-CAM for many sites of one sample -> {layer: GradCamResult}."""
    if layers is None:
        layers = list_layers(model)
    results = {}
    for layer in layers:
        req = HeatmapRequest(layer, binarize_threshold_mm)
        results[layer] = gradcam(model, x, m, req, norm_max)
    return results


def heatmap_grid(model, x, m, norm_max, out_path, layers=None,
                 binarize_threshold_mm=DEFAULT_BINARIZE_MM):
    """Composite figure of per-site heatmaps; returns the result dict."""
    from .plots import plot_heatmap_grid

    results = heatmap_set(model, x, m, norm_max, layers, binarize_threshold_mm)
    acc_mm = accumulate_hour(np.asarray(x), norm_max)
    plot_heatmap_grid(results, acc_mm, out_path)
    return results
