"""Radar archive ingestion, quality control, cropping and sequence selection.

Raw frames hold 5-minute precipitation depths as non-negative integers in
hundredths of a millimetre on a 256x256 grid.  The pipeline turns an archive
into training sequences: clutter filtering, a 64x64 land-centred crop,
normalization by the train-set maximum, and sliding-window selection of
12-in / 12-out sequences whose output hour is mostly rainy over land.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import h5py
import numpy as np

from .config import ConfigError

log = logging.getLogger(__name__)

GRID_SIZE = 256
CROP_SIZE = 64
IN_FRAMES = 12
OUT_FRAMES = 12
SEQ_FRAMES = IN_FRAMES + OUT_FRAMES
FRAME_SECONDS = 300
MM_PER_UNIT = 0.01

# clutter limits in stored units (hundredths of mm), both comparisons strict
YEAR_SUM_LIMIT = 130_000   # 1300 mm per calendar year
DAY_SUM_LIMIT = 17_400     # 174 mm per rolling 24 h window

SEASONS = ("winter", "spring", "summer", "autumn")


class IngestionError(RuntimeError):
    """Archive missing, unreadable, or structurally broken."""


class OrderingError(ValueError):
    """Timestamps not strictly increasing in 5-minute multiples."""


@dataclass
class RadarFrame:
    values: np.ndarray        # (H, W) integer precipitation, hundredths of mm
    timestamp: datetime       # UTC, 5-minute aligned
    landmask: np.ndarray      # (H, W) bool, True where the radar sees land


@dataclass(frozen=True)
class CropSpec:
    origin_row: int
    origin_col: int
    size: int = CROP_SIZE


@dataclass
class Sample:
    x: np.ndarray             # (12, 64, 64) float32, normalized input hour
    y: np.ndarray             # (12, 64, 64) float32, normalized target hour
    t0: datetime              # timestamp of the first input frame
    m: np.ndarray | None = None   # (25, 64, 64) uint8 threshold masks


@dataclass
class QCReport:
    """What the clutter filter did: one entry per maximal zeroed pixel-window."""

    pixels_zeroed: int = 0
    windows_flagged: list = field(default_factory=list)
    rules: list = field(default_factory=list)   # (rule name, limit, n windows)

    def to_dict(self):
        return {
            "pixels_zeroed": self.pixels_zeroed,
            "windows_flagged": self.windows_flagged,
            "rules": [list(r) for r in self.rules],
        }


def epoch_seconds(ts: datetime) -> int:
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return int(ts.timestamp())


def from_epoch(sec: int) -> datetime:
    return datetime.fromtimestamp(int(sec), tz=timezone.utc)


def season_of(ts: datetime) -> str:
    m = ts.month
    if m in (12, 1, 2):
        return "winter"
    if m in (3, 4, 5):
        return "spring"
    if m in (6, 7, 8):
        return "summer"
    return "autumn"


# ---------------------------------------------------------------- ingestion

_SCHEMAS = {}


def register_schema(name):
    def deco(fn):
        _SCHEMAS[name] = fn
        return fn
    return deco


@register_schema("hdf5-radar-v1")
def _read_hdf5_radar_v1(path):
    """HDF5 archive: datasets frames (T,H,W) int, timestamps (T,) epoch s, landmask (H,W) bool."""
    try:
        f = h5py.File(path, "r")
    except OSError as e:
        raise IngestionError(f"cannot open archive {path}: {e}") from e
    with f:
        for name in ("frames", "timestamps", "landmask"):
            if name not in f:
                raise IngestionError(f"archive {path} missing dataset '{name}'")
        frames = f["frames"][...]
        times = f["timestamps"][...]
        landmask = f["landmask"][...].astype(bool)
    if frames.ndim != 3:
        raise IngestionError(f"archive {path}: frames must be 3-D, got {frames.shape}")
    if frames.shape[0] != times.shape[0]:
        raise IngestionError(f"archive {path}: frame/timestamp count mismatch")
    if frames.shape[1:] != landmask.shape:
        raise IngestionError(f"archive {path}: landmask shape {landmask.shape} does not match frames")
    if np.issubdtype(frames.dtype, np.floating):
        raise IngestionError(f"archive {path}: frames must be integer stored units")
    if (frames < 0).any():
        raise IngestionError(f"archive {path}: negative precipitation values")
    for values, sec in zip(frames, times):
        yield RadarFrame(values=values.astype(np.int32), timestamp=from_epoch(sec), landmask=landmask)


def ingest_archive(path, schema="hdf5-radar-v1"):
    """Stream RadarFrames from an archive, checking ordering and land masking.

    Timestamps must be strictly increasing by multiples of 5 minutes; gaps are
    allowed and logged.  Off-land values are forced to zero.
    """
    if schema not in _SCHEMAS:
        raise IngestionError(f"unknown archive schema '{schema}'")
    prev = None
    for frame in _SCHEMAS[schema](path):
        if prev is not None:
            step = epoch_seconds(frame.timestamp) - prev
            if step <= 0 or step % FRAME_SECONDS != 0:
                raise OrderingError(
                    f"timestamps must increase in 5-minute multiples; got step {step}s at {frame.timestamp}"
                )
            if step != FRAME_SECONDS:
                log.warning("gap of %ds before %s", step, frame.timestamp)
        prev = epoch_seconds(frame.timestamp)
        values = np.where(frame.landmask, frame.values, 0).astype(np.int32)
        yield RadarFrame(values=values, timestamp=frame.timestamp, landmask=frame.landmask)


# ------------------------------------------------------------ clutter filter

def _merge_runs(flags):
    """Indices of True runs -> list of (start, end) half-open intervals."""
    runs = []
    start = None
    for i, v in enumerate(flags):
        if v and start is None:
            start = i
        elif not v and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(flags)))
    return runs


def apply_clutter_filter(frames):
    """Zero pixel time series that exceed physical accumulation limits.

    Two rules, both strict: per-pixel sum over a calendar year > 1300 mm, and
    per-pixel sum over any rolling 24 h window > 174 mm.  Offending windows are
    zeroed for that pixel only; overlapping offending windows are merged and
    recorded once per maximal run.  Both rules are evaluated against the
    original values, so a second pass is a no-op.
    """
    frames = list(frames)
    report = QCReport()
    if not frames:
        report.rules = [("year_sum", YEAR_SUM_LIMIT, 0), ("rolling_24h", DAY_SUM_LIMIT, 0)]
        return frames, report

    values = np.stack([f.values for f in frames]).astype(np.int64)   # (T, H, W)
    times = np.array([epoch_seconds(f.timestamp) for f in frames], dtype=np.int64)
    n = len(frames)
    zero = np.zeros(values.shape, dtype=bool)

    def flag(rule, pixel, start, end, total):
        report.windows_flagged.append(
            {"rule": rule, "pixel": [int(pixel[0]), int(pixel[1])],
             "start": int(start), "end": int(end), "sum": int(total)}
        )

    # calendar-year rule
    years = np.array([f.timestamp.year for f in frames])
    year_count = 0
    for yr in np.unique(years):
        sel = years == yr
        sums = values[sel].sum(axis=0)
        idx = np.nonzero(sel)[0]
        for r, c in np.argwhere(sums > YEAR_SUM_LIMIT):
            zero[sel, r, c] = True
            flag("year_sum", (r, c), idx[0], idx[-1] + 1, sums[r, c])
            year_count += 1

    # rolling 24 h rule; windows are time-based so gaps shorten them
    ends = np.searchsorted(times, times + 24 * 3600, side="left")
    totals = values.sum(axis=0)
    day_count = 0
    for r, c in np.argwhere(totals > DAY_SUM_LIMIT):
        series = values[:, r, c]
        csum = np.concatenate(([0], np.cumsum(series)))
        win = csum[ends] - csum[:n]          # sum of window starting at each index
        offending = win > DAY_SUM_LIMIT
        if not offending.any():
            continue
        slots = np.zeros(n, dtype=bool)
        for i in np.nonzero(offending)[0]:
            slots[i:ends[i]] = True
        for start, end in _merge_runs(slots):
            flag("rolling_24h", (r, c), start, end, csum[end] - csum[start])
            day_count += 1
        zero[:, r, c] |= slots

    report.rules = [("year_sum", YEAR_SUM_LIMIT, year_count),
                    ("rolling_24h", DAY_SUM_LIMIT, day_count)]
    report.pixels_zeroed = int((zero & (values != 0)).sum())

    if not zero.any():
        return frames, report
    cleaned = np.where(zero, 0, values).astype(np.int32)
    out = [RadarFrame(values=cleaned[i], timestamp=f.timestamp, landmask=f.landmask)
           for i, f in enumerate(frames)]
    return out, report


# ------------------------------------------------------------------ cropping

def landmask_center_crop(landmask, size=CROP_SIZE) -> CropSpec:
    """Crop centred on the landmask bounding box, clipped to the grid."""
    rows, cols = np.nonzero(landmask)
    if rows.size == 0:
        raise ValueError("landmask is empty; cannot place crop")
    cr = (rows.min() + rows.max() + 1) // 2
    cc = (cols.min() + cols.max() + 1) // 2
    h, w = landmask.shape
    r0 = int(np.clip(cr - size // 2, 0, h - size))
    c0 = int(np.clip(cc - size // 2, 0, w - size))
    return CropSpec(r0, c0, size)


def crop_frame(frame: RadarFrame, crop: CropSpec) -> RadarFrame:
    h, w = frame.values.shape
    r0, c0, s = crop.origin_row, crop.origin_col, crop.size
    if r0 < 0 or c0 < 0 or r0 + s > h or c0 + s > w:
        raise ValueError(f"crop {crop} out of bounds for {h}x{w} grid")
    return RadarFrame(
        values=frame.values[r0:r0 + s, c0:c0 + s].copy(),
        timestamp=frame.timestamp,
        landmask=frame.landmask[r0:r0 + s, c0:c0 + s].copy(),
    )


# -------------------------------------------------------------- normalization

def fit_normalizer(frames) -> float:
    """Maximum stored value over a frame stream (train split only)."""
    best = 0
    for f in frames:
        v = f.values if isinstance(f, RadarFrame) else np.asarray(f)
        if v.size:
            best = max(best, int(v.max()))
    if best <= 0:
        raise ConfigError("training split is all zero; cannot fit a normalizer")
    return float(best)


def normalize(values, norm_max) -> np.ndarray:
    if norm_max <= 0:
        raise ValueError("norm_max must be positive")
    return (np.asarray(values, dtype=np.float32) / np.float32(norm_max)).astype(np.float32)


def denormalize(values, norm_max) -> np.ndarray:
    if norm_max <= 0:
        raise ValueError("norm_max must be positive")
    return (np.asarray(values, dtype=np.float32) * np.float32(norm_max)).astype(np.float32)


# --------------------------------------------------------- sequence selection

def rain_fractions(frames, landmask64) -> np.ndarray:
    """Per-frame fraction of land pixels with nonzero precipitation."""
    land = np.asarray(landmask64, dtype=bool)
    n_land = int(land.sum())
    if n_land == 0:
        raise ValueError("landmask has no land pixels; rain fraction undefined")
    frames = np.asarray(frames)
    return (frames[..., land] > 0).mean(axis=-1)


def select_sequences(frames, timestamps, landmask64,
                     rain_fraction_threshold=0.5, per_frame=False) -> list[Sample]:
    """Slide a 24-frame window (stride 1) and keep rainy, gap-free sequences.

    A window is kept when its 12 frames are consecutive 5-minute steps and the
    mean land rain fraction over the 12 output frames strictly exceeds the
    threshold (or every output frame does, with ``per_frame``).
    """
    frames = np.asarray(frames, dtype=np.float32)
    n = frames.shape[0]
    if n < SEQ_FRAMES:
        return []
    secs = np.array([epoch_seconds(t) for t in timestamps], dtype=np.int64)
    if secs.shape[0] != n:
        raise ValueError("frame/timestamp count mismatch")
    fracs = rain_fractions(frames, landmask64)

    samples = []
    for i in range(n - SEQ_FRAMES + 1):
        # strictly increasing 5-min multiples + exact total span => no gaps
        if secs[i + SEQ_FRAMES - 1] - secs[i] != (SEQ_FRAMES - 1) * FRAME_SECONDS:
            continue
        out = fracs[i + IN_FRAMES:i + SEQ_FRAMES]
        rainy = (out > rain_fraction_threshold).all() if per_frame \
            else out.mean() > rain_fraction_threshold
        if not rainy:
            continue
        samples.append(Sample(
            x=frames[i:i + IN_FRAMES].copy(),
            y=frames[i + IN_FRAMES:i + SEQ_FRAMES].copy(),
            t0=from_epoch(secs[i]),
        ))
    return samples


# --------------------------------------------------------------- end to end

@dataclass
class PrepareSummary:
    n_train: int
    n_test: int
    norm_max: float
    crop: CropSpec
    qc: dict          # split -> QCReport


def prepare_split(archive_path, schema, crop, norm_max=None,
                  rain_fraction_threshold=0.5, per_frame=False):
    """Ingest one archive -> (samples, landmask64, norm_max, QCReport).

    When ``norm_max`` is None it is fitted on this split (train); otherwise the
    given value is reused (test), so test values may exceed 1 after scaling.
    """
    frames = list(ingest_archive(archive_path, schema=schema))
    if not frames:
        raise IngestionError(f"archive {archive_path} holds no frames")
    frames, qc = apply_clutter_filter(frames)
    if crop is None:
        crop = landmask_center_crop(frames[0].landmask)
    cropped = [crop_frame(f, crop) for f in frames]
    if norm_max is None:
        norm_max = fit_normalizer(cropped)
    grids = np.stack([normalize(f.values, norm_max) for f in cropped])
    times = [f.timestamp for f in cropped]
    landmask64 = cropped[0].landmask
    samples = select_sequences(grids, times, landmask64,
                               rain_fraction_threshold=rain_fraction_threshold,
                               per_frame=per_frame)
    return samples, landmask64, norm_max, crop, qc
