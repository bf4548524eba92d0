"""HDF5 dataset container: the contract between data prep and everything else.

Layout (schema_version 1):

    /               attrs: norm_max (f8), crop_origin (i8[2]), schema_version,
                    landmask64 (bool 64x64), provenance (JSON string)
    /train, /test   groups, each with datasets
        x   (n, 12, 64, 64) float32   normalized input hour
        m   (n, 25, 64, 64) uint8     threshold masks of the input hour
        y   (n, 12, 64, 64) float32   normalized target hour
        t0  (n,) int64                epoch seconds of the first input frame

Readers may share a file concurrently; writes replace the file atomically via
a temp file, so there is no partially written container to observe.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import h5py
import numpy as np

from .pipeline import CropSpec, Sample, from_epoch, epoch_seconds

SCHEMA_VERSION = 1


class FormatError(ValueError):
    """Container violates the documented layout; message names the node."""


@dataclass
class DatasetContainer:
    split: str
    x: np.ndarray
    m: np.ndarray
    y: np.ndarray
    t0: np.ndarray            # int64 epoch seconds
    norm_max: float
    crop: CropSpec
    landmask64: np.ndarray
    provenance: dict

    @property
    def n(self):
        return self.x.shape[0]

    def sample(self, i) -> Sample:
        return Sample(x=self.x[i], y=self.y[i], t0=from_epoch(self.t0[i]), m=self.m[i])

    def timestamps(self):
        return [from_epoch(s) for s in self.t0]


def _check_samples(samples):
    for s in samples:
        if s.x.shape != (12, 64, 64) or s.y.shape != (12, 64, 64):
            raise ValueError(f"sample shapes {s.x.shape}/{s.y.shape}, expected (12, 64, 64)")
        if s.m is None or s.m.shape != (25, 64, 64):
            raise ValueError("sample is missing its (25, 64, 64) mask stack")


def write_container(path, splits, norm_max, crop, landmask64, provenance=None):
    """Write {'train': [...Samples], 'test': [...]} to one HDF5 file."""
    if norm_max <= 0:
        raise ValueError("norm_max must be positive")
    for name, samples in splits.items():
        _check_samples(samples)
    tmp = f"{path}.tmp"
    with h5py.File(tmp, "w") as f:
        f.attrs["schema_version"] = SCHEMA_VERSION
        f.attrs["norm_max"] = float(norm_max)
        f.attrs["crop_origin"] = np.array([crop.origin_row, crop.origin_col], dtype=np.int64)
        f.attrs["landmask64"] = np.asarray(landmask64, dtype=bool)
        f.attrs["provenance"] = json.dumps(provenance or {}, sort_keys=True)
        for name, samples in splits.items():
            g = f.create_group(name)
            n = len(samples)
            g.create_dataset("x", data=np.stack([s.x for s in samples]).astype(np.float32)
                             if n else np.zeros((0, 12, 64, 64), np.float32))
            g.create_dataset("m", data=np.stack([s.m for s in samples]).astype(np.uint8)
                             if n else np.zeros((0, 25, 64, 64), np.uint8))
            g.create_dataset("y", data=np.stack([s.y for s in samples]).astype(np.float32)
                             if n else np.zeros((0, 12, 64, 64), np.float32))
            g.create_dataset("t0", data=np.array([epoch_seconds(s.t0) for s in samples], dtype=np.int64))
    os.replace(tmp, path)


def read_container(path, split="train") -> DatasetContainer:
    if not os.path.exists(path):
        raise FormatError(f"container {path} does not exist")
    try:
        f = h5py.File(path, "r")
    except OSError as e:
        raise FormatError(f"container {path} is not a readable HDF5 file: {e}") from e
    with f:
        if "norm_max" not in f.attrs:
            raise FormatError(f"container {path} missing root attribute 'norm_max'")
        if "crop_origin" not in f.attrs or "landmask64" not in f.attrs:
            raise FormatError(f"container {path} missing crop_origin/landmask64 attributes")
        if split not in f:
            raise FormatError(f"container {path} has no split group '/{split}'")
        g = f[split]
        arrays = {}
        for name in ("x", "m", "y", "t0"):
            if name not in g:
                raise FormatError(f"container {path} missing dataset '/{split}/{name}'")
            arrays[name] = g[name][...]
        exp = {"x": (12, 64, 64), "m": (25, 64, 64), "y": (12, 64, 64)}
        for name, shape in exp.items():
            if arrays[name].shape[1:] != shape:
                raise FormatError(f"'/{split}/{name}' has shape {arrays[name].shape}, expected (n,) + {shape}")
        n = arrays["x"].shape[0]
        if any(arrays[name].shape[0] != n for name in ("m", "y", "t0")):
            raise FormatError(f"'/{split}' datasets disagree on sample count")
        origin = f.attrs["crop_origin"]
        provenance = json.loads(f.attrs.get("provenance", "{}"))
        return DatasetContainer(
            split=split,
            x=arrays["x"].astype(np.float32),
            m=arrays["m"].astype(np.uint8),
            y=arrays["y"].astype(np.float32),
            t0=arrays["t0"].astype(np.int64),
            norm_max=float(f.attrs["norm_max"]),
            crop=CropSpec(int(origin[0]), int(origin[1])),
            landmask64=np.asarray(f.attrs["landmask64"], dtype=bool),
            provenance=provenance,
        )


def split_indices(n, validation_fraction=0.1):
    """Chronological validation split: the last ceil(n * fraction) samples.

    Samples are stored in time order, so the validation tail is the most
    recent data and never precedes any training sample.
    """
    if n < 2:
        raise ValueError("need at least 2 samples to split off a validation set")
    n_val = max(1, math.ceil(n * validation_fraction))
    if n_val >= n:
        n_val = n - 1
    return np.arange(0, n - n_val), np.arange(n - n_val, n)
