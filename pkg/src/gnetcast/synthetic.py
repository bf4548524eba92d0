"""Synthetic radar archives: advected Gaussian rain cells on a periodic grid.

Gives every downstream stage (pipeline, training, verification, uncertainty)
a deterministic desk-scale data source with known ground truth.  Cells move
with a constant velocity, optionally grow or decay, and wrap around the grid
edges so that pure advection conserves total rain up to integer quantization.
"""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

import h5py
import numpy as np

from .config import StormConfig
from .masks import masks_for_sample
from .pipeline import FRAME_SECONDS, RadarFrame, epoch_seconds

UNITS_PER_MM = 100.0


def _parse_start(s) -> datetime:
    ts = datetime.fromisoformat(s)
    return ts if ts.tzinfo else ts.replace(tzinfo=timezone.utc)


def _landmask(kind, size):
    if kind == "full":
        return np.ones((size, size), dtype=bool)
    yy, xx = np.mgrid[0:size, 0:size]
    r = size * 0.45
    return (yy - size / 2) ** 2 + (xx - size / 2) ** 2 <= r * r


def _cell_field(size, centers, amps_units, sigmas):
    """Sum of Gaussian bumps with wrap-around (minimum-image) distances."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    out = np.zeros((size, size), dtype=np.float64)
    half = size / 2.0
    for (cy, cx), a, s in zip(centers, amps_units, sigmas):
        dy = np.mod(yy - cy + half, size) - half
        dx = np.mod(xx - cx + half, size) - half
        out += a * np.exp(-(dy * dy + dx * dx) / (2.0 * s * s))
    return out


def gen_storm_archive(cfg: StormConfig) -> list[RadarFrame]:
    """Deterministic frame sequence for ``cfg``; same seed, same bits.

    Cell centres start on integer pixels, so at frame 0 an isolated cell peaks
    at exactly round(100 * amplitude) stored units.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    size = cfg.grid_size
    centers0 = rng.integers(0, size, size=(cfg.n_cells, 2)).astype(np.float64)
    amps = rng.uniform(*cfg.amplitude_range, size=cfg.n_cells) * UNITS_PER_MM
    sigmas = rng.uniform(*cfg.sigma_range, size=cfg.n_cells)
    vel = np.asarray(cfg.velocity, dtype=np.float64)
    start = _parse_start(cfg.start_time)
    landmask = _landmask(cfg.landmask, size)
    background = cfg.background_mm * UNITS_PER_MM

    frames = []
    for t in range(cfg.n_frames):
        centers = np.mod(centers0 + t * vel, size)
        field = _cell_field(size, centers, amps * cfg.growth_rate ** t, sigmas)
        field += background
        if cfg.noise_sigma > 0:
            field += rng.normal(0.0, cfg.noise_sigma, size=(size, size))
        values = np.clip(np.rint(field), 0, None).astype(np.int32)
        values[~landmask] = 0
        frames.append(RadarFrame(values=values,
                                 timestamp=start + t * timedelta(seconds=FRAME_SECONDS),
                                 landmask=landmask))
    return frames


def write_archive(path, frames):
    """Write frames in the hdf5-radar-v1 archive layout."""
    if not frames:
        raise ValueError("refusing to write an empty archive")
    with h5py.File(path, "w") as f:
        f.attrs["schema"] = "hdf5-radar-v1"
        f.create_dataset("frames", data=np.stack([fr.values for fr in frames]).astype(np.int32))
        f.create_dataset("timestamps",
                         data=np.array([epoch_seconds(fr.timestamp) for fr in frames], dtype=np.int64))
        f.create_dataset("landmask", data=frames[0].landmask.astype(bool))


def synth_archive(path, cfg: StormConfig):
    frames = gen_storm_archive(cfg)
    write_archive(path, frames)
    return len(frames)


# ------------------------------------------------- heteroscedastic pairs

def gen_heteroscedastic_pairs(seed, n, sigma_fn, size=64, n_cells=3,
                              amplitude_range=(0.3, 1.0), sigma_range=(5.0, 12.0),
                              velocity=(0.8, 0.4), implied_norm_max=5000.0):
    """Sequence pairs whose target noise scales with local intensity.

    Returns a list of (x, m, y, noise_map) tuples.  ``x`` and the clean target
    are normalized storm fields (implied stored-unit maximum
    ``implied_norm_max`` fixes the mask scale); ``y`` adds zero-mean Gaussian
    noise with per-pixel std ``sigma_fn(clean_target)``, and ``noise_map`` is
    that std field.  ``sigma_fn`` identically 0 gives y == clean target.  The
    target is deliberately not clipped at zero so the injected noise stays
    zero-mean.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        centers0 = rng.integers(0, size, size=(n_cells, 2)).astype(np.float64)
        amps = rng.uniform(*amplitude_range, size=n_cells)   # normalized peak values
        sigmas = rng.uniform(*sigma_range, size=n_cells)
        vel = np.asarray(velocity, dtype=np.float64)
        seq = np.stack([
            _cell_field(size, np.mod(centers0 + t * vel, size), amps, sigmas)
            for t in range(24)
        ]).astype(np.float32)
        x, clean = seq[:12], seq[12:]
        noise_map = np.asarray(sigma_fn(clean), dtype=np.float32)
        if noise_map.shape != clean.shape:
            noise_map = np.broadcast_to(noise_map, clean.shape).astype(np.float32)
        y = clean + rng.standard_normal(clean.shape).astype(np.float32) * noise_map
        m = masks_for_sample(x, implied_norm_max)
        pairs.append((x, m, y.astype(np.float32), noise_map))
    return pairs
