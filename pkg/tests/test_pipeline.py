"""Ingestion, clutter QC, cropping, normalization, sequence selection."""

from datetime import datetime, timedelta, timezone

import h5py
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnetcast.config import ConfigError
from gnetcast.pipeline import (CROP_SIZE, DAY_SUM_LIMIT, YEAR_SUM_LIMIT, CropSpec,
                               IngestionError, OrderingError, RadarFrame,
                               apply_clutter_filter, crop_frame, denormalize,
                               fit_normalizer, from_epoch, ingest_archive,
                               landmask_center_crop, normalize, season_of,
                               select_sequences)

T0 = datetime(2020, 6, 1, tzinfo=timezone.utc)
STEP = timedelta(minutes=5)


def mk_frames(values_list, start=T0, landmask=None, step=STEP):
    shape = np.asarray(values_list[0]).shape
    if landmask is None:
        landmask = np.ones(shape, dtype=bool)
    return [RadarFrame(values=np.asarray(v, dtype=np.int32),
                       timestamp=start + i * step, landmask=landmask)
            for i, v in enumerate(values_list)]


def write_raw_archive(path, frames, timestamps=None):
    with h5py.File(path, "w") as f:
        f.create_dataset("frames", data=np.stack([fr.values for fr in frames]))
        if timestamps is None:
            timestamps = [int(fr.timestamp.timestamp()) for fr in frames]
        f.create_dataset("timestamps", data=np.asarray(timestamps, dtype=np.int64))
        f.create_dataset("landmask", data=frames[0].landmask)


# ------------------------------------------------------------------ ingest

def test_ingest_roundtrip_order_and_landmask(tmp_path):
    land = np.zeros((16, 16), dtype=bool)
    land[4:12, 4:12] = True
    vals = np.zeros((16, 16), dtype=np.int32)
    vals[0, 0] = 99        # off land, must be zeroed on ingest
    vals[5, 5] = 123
    frames = mk_frames([vals] * 4, landmask=land)
    path = tmp_path / "a.h5"
    write_raw_archive(path, frames)
    got = list(ingest_archive(path))
    assert len(got) == 4
    assert got[0].values[0, 0] == 0
    assert got[0].values[5, 5] == 123
    assert [f.timestamp for f in got] == [f.timestamp for f in frames]
    for f in got:
        assert f.values[~land].sum() == 0


def test_ingest_rejects_missing_file():
    with pytest.raises(IngestionError):
        list(ingest_archive("/nonexistent/archive.h5"))


def test_ingest_rejects_unknown_schema(tmp_path):
    with pytest.raises(IngestionError):
        list(ingest_archive(tmp_path / "x.h5", schema="no-such-schema"))


def test_ingest_rejects_shuffled_timestamps(tmp_path):
    frames = mk_frames([np.zeros((8, 8))] * 3)
    path = tmp_path / "b.h5"
    secs = [int(f.timestamp.timestamp()) for f in frames]
    write_raw_archive(path, frames, timestamps=[secs[0], secs[2], secs[1]])
    with pytest.raises(OrderingError):
        list(ingest_archive(path))


def test_ingest_rejects_non_multiple_step(tmp_path):
    frames = mk_frames([np.zeros((8, 8))] * 2)
    path = tmp_path / "c.h5"
    s0 = int(frames[0].timestamp.timestamp())
    write_raw_archive(path, frames, timestamps=[s0, s0 + 130])
    with pytest.raises(OrderingError):
        list(ingest_archive(path))


def test_ingest_allows_gaps(tmp_path):
    frames = mk_frames([np.zeros((8, 8))] * 3)
    path = tmp_path / "d.h5"
    s0 = int(frames[0].timestamp.timestamp())
    write_raw_archive(path, frames, timestamps=[s0, s0 + 300, s0 + 1500])
    assert len(list(ingest_archive(path))) == 3


def test_ingest_rejects_negative_values(tmp_path):
    frames = mk_frames([np.zeros((8, 8))])
    frames[0].values[2, 2] = -1
    path = tmp_path / "e.h5"
    write_raw_archive(path, frames)
    with pytest.raises(IngestionError):
        list(ingest_archive(path))


# ----------------------------------------------------------------- clutter

def test_clutter_zeroes_288mm_day_fixture():
    # one pixel raining 1 mm per frame for a full day: 288 * 100 = 28800 > 17400
    vals = np.zeros((8, 8), dtype=np.int32)
    vals[3, 3] = 100
    frames = mk_frames([vals] * 288)
    cleaned, report = apply_clutter_filter(frames)
    assert all(f.values[3, 3] == 0 for f in cleaned)
    assert report.pixels_zeroed == 288
    day_flags = [w for w in report.windows_flagged if w["rule"] == "rolling_24h"]
    assert len(day_flags) == 1
    assert day_flags[0] == {"rule": "rolling_24h", "pixel": [3, 3],
                            "start": 0, "end": 288, "sum": 28800}


def test_clutter_day_boundary_not_exceeded():
    # 174 frames of 100 units = exactly 17400 in 14.5 h; strict rule keeps it
    vals = np.zeros((4, 4), dtype=np.int32)
    vals[1, 1] = 100
    frames = mk_frames([vals] * 174)
    cleaned, report = apply_clutter_filter(frames)
    assert all(f.values[1, 1] == 100 for f in cleaned)
    assert report.pixels_zeroed == 0
    assert report.windows_flagged == []


def test_clutter_year_rule_strict_boundary():
    # 130 daily frames of 1000 units: year sum exactly 130000 -> untouched;
    # one more frame pushes it over and the whole year window is zeroed
    vals = np.zeros((4, 4), dtype=np.int32)
    vals[2, 2] = 1000
    frames = mk_frames([vals] * 130, step=timedelta(days=1))
    cleaned, report = apply_clutter_filter(frames)
    assert report.pixels_zeroed == 0
    assert all(f.values[2, 2] == 1000 for f in cleaned)

    frames = mk_frames([vals] * 131, step=timedelta(days=1))
    cleaned, report = apply_clutter_filter(frames)
    year_flags = [w for w in report.windows_flagged if w["rule"] == "year_sum"]
    assert year_flags and year_flags[0]["pixel"] == [2, 2]
    # frames span two calendar years; only offending year windows are zeroed
    for f, orig in zip(cleaned, frames):
        if f.timestamp.year == 2020:
            assert f.values[2, 2] == 0


def test_clutter_identity_on_clean_data():
    rng = np.random.default_rng(0)
    frames = mk_frames(list(rng.integers(0, 50, size=(40, 8, 8))))
    cleaned, report = apply_clutter_filter(frames)
    assert report.pixels_zeroed == 0
    for a, b in zip(cleaned, frames):
        assert (a.values == b.values).all()


def test_clutter_idempotent():
    rng = np.random.default_rng(1)
    base = rng.integers(0, 80, size=(300, 6, 6)).astype(np.int32)
    base[:, 2, 4] += 90          # push one pixel over the 24 h limit
    frames = mk_frames(list(base))
    once, rep1 = apply_clutter_filter(frames)
    assert rep1.pixels_zeroed > 0
    twice, rep2 = apply_clutter_filter(once)
    assert rep2.pixels_zeroed == 0
    assert rep2.windows_flagged == []
    for a, b in zip(once, twice):
        assert (a.values == b.values).all()


def test_clutter_respects_time_gaps():
    # same 174-frame total but squeezed inside 24 h via no gaps is fine;
    # doubling the rate within the day is not
    vals = np.zeros((4, 4), dtype=np.int32)
    vals[0, 0] = 200
    frames = mk_frames([vals] * 100)          # 20000 > 17400 within 8.25 h
    cleaned, report = apply_clutter_filter(frames)
    assert report.pixels_zeroed == 100
    spread = mk_frames([vals] * 100, step=timedelta(hours=13))  # never 2 frames in 24 h... actually 2
    cleaned2, report2 = apply_clutter_filter(spread)
    # 2 frames per rolling day: 400 units, far below the limit
    assert report2.pixels_zeroed == 0


def test_clutter_empty_stream():
    cleaned, report = apply_clutter_filter([])
    assert cleaned == []
    assert report.pixels_zeroed == 0
    assert [r[0] for r in report.rules] == ["year_sum", "rolling_24h"]


# ---------------------------------------------------------------- cropping

def test_crop_index_arithmetic():
    vals = np.zeros((256, 256), dtype=np.int32)
    vals[100, 100] = 7
    frame = mk_frames([vals])[0]
    out = crop_frame(frame, CropSpec(96, 96))
    assert out.values.shape == (64, 64)
    assert out.values[4, 4] == 7
    assert out.values.sum() == 7
    assert out.landmask.shape == (64, 64)


def test_crop_all_zero():
    frame = mk_frames([np.zeros((256, 256))])[0]
    assert crop_frame(frame, CropSpec(10, 20)).values.sum() == 0


def test_crop_out_of_bounds():
    frame = mk_frames([np.zeros((256, 256))])[0]
    with pytest.raises(ValueError):
        crop_frame(frame, CropSpec(193, 0))
    with pytest.raises(ValueError):
        crop_frame(frame, CropSpec(-1, 0))


def test_landmask_center_crop():
    land = np.zeros((256, 256), dtype=bool)
    land[60:180, 80:220] = True       # bbox center (120, 150)
    crop = landmask_center_crop(land)
    assert (crop.origin_row, crop.origin_col) == (88, 118)
    assert crop.size == CROP_SIZE
    with pytest.raises(ValueError):
        landmask_center_crop(np.zeros((256, 256), dtype=bool))


# ------------------------------------------------------------ normalization

def test_fit_normalizer_and_examples():
    frames = mk_frames([np.array([[0, 26], [52, 1]])])
    norm_max = fit_normalizer(frames)
    assert norm_max == 52.0
    np.testing.assert_allclose(normalize(np.array([0.0, 26.0, 52.0]), norm_max),
                               [0.0, 0.5, 1.0])
    # test split may legitimately exceed 1
    assert normalize(np.array([60.0]), norm_max)[0] == pytest.approx(1.1538, rel=1e-3)


def test_fit_normalizer_all_zero_is_config_error():
    with pytest.raises(ConfigError):
        fit_normalizer(mk_frames([np.zeros((4, 4))] * 3))


def test_normalize_rejects_bad_norm_max():
    with pytest.raises(ValueError):
        normalize(np.ones(3), 0.0)
    with pytest.raises(ValueError):
        denormalize(np.ones(3), -1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1.0, 1e5))
def test_roundtrip_within_1e_minus_6(seed, norm_max):
    rng = np.random.default_rng(seed)
    grid = rng.integers(0, int(norm_max) + 1, size=(8, 8)).astype(np.float64)
    back = denormalize(normalize(grid, norm_max), norm_max)
    np.testing.assert_allclose(back, grid, rtol=1e-6, atol=1e-6 * norm_max)


# --------------------------------------------------------- window selection

def uniform_frames(n, frac=1.0, size=8):
    """n frames whose rainy fraction over a full landmask is `frac` exactly."""
    frames = np.zeros((n, size, size), dtype=np.float32)
    k = int(round(frac * size * size))
    for t in range(n):
        flat = frames[t].reshape(-1)
        flat[:k] = 0.5
    return frames


def times(n, start=T0, step=STEP):
    return [start + i * step for i in range(n)]


def test_window_count_is_n_minus_23():
    frames = uniform_frames(30)
    land = np.ones((8, 8), dtype=bool)
    samples = select_sequences(frames, times(30), land)
    assert len(samples) == 30 - 23
    # chronological t0 spacing of 5 minutes
    assert samples[1].t0 - samples[0].t0 == STEP
    assert samples[0].x.shape == (12, 8, 8)
    assert samples[0].y.shape == (12, 8, 8)
    # x is frames [i, i+12), y is [i+12, i+24)
    np.testing.assert_array_equal(samples[0].y, frames[12:24])


def test_exactly_half_rainy_is_rejected():
    land = np.ones((8, 8), dtype=bool)
    # exactly 32 of 64 land pixels rainy in every output frame: strict > fails
    frames = uniform_frames(24, frac=0.5)
    assert select_sequences(frames, times(24), land) == []
    # one more rainy pixel per frame tips the mean over the boundary
    just_over = uniform_frames(24, frac=33 / 64)
    assert len(select_sequences(just_over, times(24), land)) == 1


def test_all_zero_outputs_rejected():
    frames = uniform_frames(24, frac=1.0)
    frames[12:] = 0.0
    land = np.ones((8, 8), dtype=bool)
    assert select_sequences(frames, times(24), land) == []


def test_short_stream_gives_empty_list():
    frames = uniform_frames(23)
    assert select_sequences(frames, times(23), np.ones((8, 8), bool)) == []


def test_gap_drops_spanning_windows():
    land = np.ones((8, 8), dtype=bool)
    # a 30-minute gap in the middle: the two 20-frame halves hold no window
    ts = times(40)
    ts = ts[:20] + [t + timedelta(minutes=30) for t in ts[20:]]
    assert select_sequences(uniform_frames(40), ts, land) == []
    # with 30 frames per side each half contributes 30 - 23 windows
    ts2 = times(60)
    ts2 = ts2[:30] + [t + timedelta(minutes=30) for t in ts2[30:]]
    samples2 = select_sequences(uniform_frames(60), ts2, land)
    assert len(samples2) == (30 - 23) * 2


def test_mean_rule_vs_per_frame_rule():
    land = np.ones((8, 8), dtype=bool)
    frames = uniform_frames(24, frac=1.0)
    # half the output frames fully rainy, half dry: mean fraction = 0.5 -> reject
    frames[12:18] = 0.0
    assert select_sequences(frames, times(24), land) == []
    # 7 rainy output frames: mean = 7/12 > 0.5 -> accept, but per-frame rejects
    frames2 = uniform_frames(24, frac=1.0)
    frames2[12:17] = 0.0
    assert len(select_sequences(frames2, times(24), land)) == 1
    assert select_sequences(frames2, times(24), land, per_frame=True) == []


def test_threshold_monotonicity():
    rng = np.random.default_rng(3)
    frames = (rng.random((40, 8, 8)) > 0.45).astype(np.float32) * 0.3
    land = np.ones((8, 8), dtype=bool)
    ts = times(40)
    low = {s.t0 for s in select_sequences(frames, ts, land, rain_fraction_threshold=0.3)}
    high = {s.t0 for s in select_sequences(frames, ts, land, rain_fraction_threshold=0.6)}
    assert high <= low


def test_rain_fraction_needs_land():
    with pytest.raises(ValueError):
        select_sequences(uniform_frames(24), times(24), np.zeros((8, 8), bool))


def test_season_of():
    assert season_of(datetime(2020, 12, 21)) == "winter"
    assert season_of(datetime(2020, 1, 15)) == "winter"
    assert season_of(datetime(2020, 3, 1)) == "spring"
    assert season_of(datetime(2020, 7, 31)) == "summer"
    assert season_of(datetime(2020, 9, 1)) == "autumn"
    assert season_of(from_epoch(0)) == "winter"
