import numpy as np
import pytest
import torch

from gnetcast.config import (DataConfig, DiscriminatorConfig, GeneratorConfig,
                             RunConfig, StormConfig, TrainConfig)
from gnetcast.container import read_container, write_container
from gnetcast.masks import masks_for_sample
from gnetcast.pipeline import prepare_split
from gnetcast.synthetic import gen_storm_archive, synth_archive

# keep the single-core CPU deterministic and honest
torch.set_num_threads(1)


@pytest.fixture
def tiny_gen_cfg():
    # 1/8 widths: (8, 16, 32, 64, 64); reduction must not exceed the narrowest
    return GeneratorConfig(width_scale=0.125, cbam_reduction=8)


@pytest.fixture
def quarter_gen_cfg():
    return GeneratorConfig(width_scale=0.25)


@pytest.fixture
def tiny_disc_cfg():
    return DiscriminatorConfig(width_scale=0.125, cbam_reduction=8)


def rainy_storm_cfg(seed=0, n_frames=48, grid=256):
    # drizzle floor makes every land pixel rainy so window selection keeps all
    return StormConfig(seed=seed, n_frames=n_frames, grid_size=grid,
                       n_cells=5, background_mm=0.02, noise_sigma=0.0)


@pytest.fixture(scope="session")
def desk_container(tmp_path_factory):
    """Small end-to-end prepared container shared by read-only tests."""
    root = tmp_path_factory.mktemp("desk")
    train_arch = root / "train.h5"
    test_arch = root / "test.h5"
    synth_archive(train_arch, rainy_storm_cfg(seed=0, n_frames=48))
    synth_archive(test_arch, rainy_storm_cfg(seed=1, n_frames=36))
    train_s, land, norm_max, crop, _ = prepare_split(train_arch, "hdf5-radar-v1", None)
    test_s, _, _, _, _ = prepare_split(test_arch, "hdf5-radar-v1", crop, norm_max=norm_max)
    for s in train_s + test_s:
        s.m = masks_for_sample(s.x, norm_max)
    path = root / "dataset.h5"
    write_container(path, {"train": train_s, "test": test_s}, norm_max, crop, land)
    return path


@pytest.fixture(scope="session")
def desk_train(desk_container):
    return read_container(desk_container, "train")


@pytest.fixture(scope="session")
def desk_test(desk_container):
    return read_container(desk_container, "test")


def small_tensor_data(n=6, seed=0, size=64):
    """Random normalized-looking arrays shaped like container samples."""
    rng = np.random.default_rng(seed)
    x = rng.random((n, 12, size, size), dtype=np.float32) * 0.4
    y = rng.random((n, 12, size, size), dtype=np.float32) * 0.4
    m = (rng.random((n, 25, size, size)) > 0.8).astype(np.float32)
    return x, m, y


@pytest.fixture
def fast_train_cfg():
    return TrainConfig(max_epochs=2, batch_size=4, early_stop_patience=15,
                       plateau_patience=4, seed=0)
