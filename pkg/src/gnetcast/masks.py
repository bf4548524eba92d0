"""Binary threshold masks over the accumulated input hour.

The mask stack gives the second generator encoder an explicit picture of
where the input hour exceeded each integer intensity from 1 to 25 mm/h.
Comparisons are strict (value > threshold) so a pixel sitting exactly on a
threshold is excluded; ``inclusive=True`` switches to >= for sensitivity
studies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pipeline import MM_PER_UNIT

MASK_THRESHOLDS = tuple(range(1, 26))   # mm accumulated over the hour


@dataclass
class MaskStack:
    masks: np.ndarray                     # (25, H, W) uint8
    thresholds: tuple = MASK_THRESHOLDS

    def counts(self):
        return self.masks.reshape(self.masks.shape[0], -1).sum(axis=1)


def accumulate_hour(x, norm_max) -> np.ndarray:
    """Total precipitation of a normalized 12-frame hour, in millimetres.

    Denormalizes back to stored units (hundredths of mm) and sums the frames,
    so the result is independent of which norm_max produced ``x``.
    """
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] != 12:
        raise ValueError(f"expected a (12, H, W) hour of frames, got {x.shape}")
    if norm_max <= 0:
        raise ValueError("norm_max must be positive")
    return x.astype(np.float64).sum(axis=0) * (float(norm_max) * MM_PER_UNIT)


def make_masks(acc_mm, inclusive=False) -> MaskStack:
    """Binary exceedance masks of an accumulation map at thresholds 1..25 mm."""
    acc = np.asarray(acc_mm, dtype=np.float64)
    if acc.ndim != 2:
        raise ValueError(f"accumulation map must be 2-D, got {acc.shape}")
    if (acc < 0).any():
        raise ValueError("negative accumulation; masks are defined for observed rain only")
    thr = np.asarray(MASK_THRESHOLDS, dtype=np.float64)[:, None, None]
    masks = (acc[None] >= thr) if inclusive else (acc[None] > thr)
    return MaskStack(masks.astype(np.uint8))


def masks_for_sample(x, norm_max, inclusive=False) -> np.ndarray:
    return make_masks(accumulate_hour(x, norm_max), inclusive=inclusive).masks
