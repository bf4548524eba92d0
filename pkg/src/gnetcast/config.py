"""Dataclass configs and the YAML/env run-config loader.

A run config is a YAML file with one section per concern (run, data,
storm_train, storm_test, generator, discriminator, train).  Unknown sections
or keys are rejected with a ConfigError naming the offender.  Environment
variables prefixed with ``GNETCAST_`` override individual keys, e.g.
``GNETCAST_TRAIN_MAX_EPOCHS=3`` sets ``train.max_epochs``.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields

import yaml


class ConfigError(ValueError):
    """Bad or inconsistent configuration; the message names the offending key."""


ENV_PREFIX = "GNETCAST_"


@dataclass
class RunSection:
    seed: int = 0
    output_dir: str = "runs/default"


@dataclass
class DataConfig:
    train_archive: str = "data/train_archive.h5"
    test_archive: str = "data/test_archive.h5"
    dataset: str = "data/dataset.h5"
    schema: str = "hdf5-radar-v1"
    # crop origin (row, col) of the 64x64 cutout; None = center of landmask bbox
    crop_origin: tuple | None = None
    rain_fraction_threshold: float = 0.5
    per_frame_rain_rule: bool = False
    mask_inclusive: bool = False
    validation_fraction: float = 0.1

    def validate(self):
        if not 0.0 <= self.rain_fraction_threshold <= 1.0:
            raise ConfigError("data.rain_fraction_threshold must be in [0, 1]")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("data.validation_fraction must be in (0, 1)")
        if self.crop_origin is not None and len(self.crop_origin) != 2:
            raise ConfigError("data.crop_origin must be a (row, col) pair")


@dataclass
class StormConfig:
    """Synthetic storm archive: advected Gaussian cells on a wrap-around grid."""

    seed: int = 0
    n_frames: int = 48
    n_cells: int = 6
    grid_size: int = 256
    # cell amplitude at frame 0, mm per 5-minute frame
    amplitude_range: tuple = (0.5, 3.0)
    sigma_range: tuple = (6.0, 14.0)      # cell radius, pixels
    velocity: tuple = (1.5, 0.5)          # (rows, cols) pixels per frame
    growth_rate: float = 1.0              # per-frame amplitude multiplier
    noise_sigma: float = 0.0              # additive noise, stored units
    background_mm: float = 0.0            # uniform drizzle, mm per frame
    landmask: str = "full"                # "full" or "disk"
    start_time: str = "2020-06-01T00:00:00"

    def validate(self):
        if self.n_frames < 1:
            raise ConfigError("storm.n_frames must be positive")
        if self.n_cells < 0:
            raise ConfigError("storm.n_cells must be >= 0")
        if self.grid_size < 8:
            raise ConfigError("storm.grid_size too small")
        lo, hi = self.amplitude_range
        if lo < 0 or hi < lo:
            raise ConfigError("storm.amplitude_range must be 0 <= lo <= hi")
        if self.growth_rate < 0:
            raise ConfigError("storm.growth_rate must be >= 0")
        if self.noise_sigma < 0:
            raise ConfigError("storm.noise_sigma must be >= 0")
        if self.landmask not in ("full", "disk"):
            raise ConfigError("storm.landmask must be 'full' or 'disk'")


@dataclass
class GeneratorConfig:
    in_frames: int = 12
    mask_channels: int = 25
    out_frames: int = 12
    encoder_widths: tuple = (64, 128, 256, 512, 512)
    decoder_widths: tuple = (256, 128, 64, 64)
    dropout_p: float = 0.5
    dual_encoder: bool = True
    aleatoric_head: bool = False
    width_scale: float = 1.0
    cbam_reduction: int = 16
    cbam_spatial_kernel: int = 7

    def scaled_encoder_widths(self):
        return tuple(max(1, round(w * self.width_scale)) for w in self.encoder_widths)

    def scaled_decoder_widths(self):
        return tuple(max(1, round(w * self.width_scale)) for w in self.decoder_widths)

    def validate(self):
        if self.out_frames != 12:
            raise ConfigError("generator.out_frames must be 12")
        if self.in_frames < 1 or self.mask_channels < 1:
            raise ConfigError("generator input channel counts must be positive")
        if len(self.encoder_widths) != 5:
            raise ConfigError("generator.encoder_widths must have 5 levels")
        if len(self.decoder_widths) != 4:
            raise ConfigError("generator.decoder_widths must have 4 levels")
        if any(w < 1 for w in self.scaled_encoder_widths()):
            raise ConfigError("generator.encoder_widths must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("generator.dropout_p must be in [0, 1)")
        if min(self.scaled_encoder_widths()) < self.cbam_reduction:
            raise ConfigError(
                "generator.cbam_reduction exceeds the narrowest encoder width; "
                "lower cbam_reduction or raise width_scale"
            )
        if self.cbam_spatial_kernel % 2 == 0:
            raise ConfigError("generator.cbam_spatial_kernel must be odd")


@dataclass
class DiscriminatorConfig:
    in_channels: int = 24
    input_size: int = 64
    stage_widths: tuple = (64, 128, 256, 512)
    leaky_slope: float = 0.2
    width_scale: float = 1.0
    cbam_reduction: int = 16
    cbam_spatial_kernel: int = 7

    def scaled_widths(self):
        return tuple(max(1, round(w * self.width_scale)) for w in self.stage_widths)

    def validate(self):
        if self.input_size != 64:
            raise ConfigError("discriminator.input_size must be 64 (four stride-2 stages map 64 -> 4)")
        if len(self.stage_widths) != 4:
            raise ConfigError("discriminator.stage_widths must have 4 stages")
        if self.in_channels != 24:
            raise ConfigError("discriminator.in_channels must be 24 (12 input + 12 candidate frames)")
        if min(self.scaled_widths()) < self.cbam_reduction:
            raise ConfigError(
                "discriminator.cbam_reduction exceeds the narrowest stage width"
            )
        if self.cbam_spatial_kernel % 2 == 0:
            raise ConfigError("discriminator.cbam_spatial_kernel must be odd")


@dataclass
class TrainConfig:
    max_epochs: int = 200
    batch_size: int = 32
    lr_generator: float = 1e-3
    lr_discriminator: float = 1e-3
    adam_betas: tuple = (0.9, 0.999)
    plateau_patience: int = 4
    plateau_factor: float = 0.1
    early_stop_patience: int = 15
    lambda_l2: float = 1e6
    d_update_every: int = 2
    epsilon_log: float = 1e-7
    non_saturating: bool = False
    seed: int = 0

    def validate(self):
        if self.max_epochs < 1:
            raise ConfigError("train.max_epochs must be positive")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be positive")
        if self.lr_generator <= 0 or self.lr_discriminator <= 0:
            raise ConfigError("train learning rates must be positive")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ConfigError("train patience values must be positive")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError("train.plateau_factor must be in (0, 1)")
        if self.lambda_l2 < 0:
            raise ConfigError("train.lambda_l2 must be >= 0")
        if self.d_update_every < 1:
            raise ConfigError("train.d_update_every must be >= 1")
        if not 0.0 < self.epsilon_log < 0.5:
            raise ConfigError("train.epsilon_log must be in (0, 0.5)")


_SECTIONS = {
    "run": RunSection,
    "data": DataConfig,
    "storm_train": StormConfig,
    "storm_test": StormConfig,
    "generator": GeneratorConfig,
    "discriminator": DiscriminatorConfig,
    "train": TrainConfig,
}


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataConfig = field(default_factory=DataConfig)
    storm_train: StormConfig = field(default_factory=StormConfig)
    storm_test: StormConfig = field(default_factory=lambda: StormConfig(seed=1, n_frames=36))
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        self.data.validate()
        self.storm_train.validate()
        self.storm_test.validate()
        self.generator.validate()
        self.discriminator.validate()
        self.train.validate()
        return self

    def to_dict(self):
        return {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS}

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def _coerce(section, key, value):
    """Coerce YAML/env scalars to the field's declared default type."""
    default = getattr(_SECTIONS[section](), key)
    if isinstance(default, tuple) and isinstance(value, (list, tuple)):
        return tuple(value)
    if isinstance(default, bool) and isinstance(value, bool):
        return value
    if isinstance(default, bool) and not isinstance(value, bool):
        raise ConfigError(f"{section}.{key} must be a boolean")
    if isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    return value


def _apply(cfg_section, section_name, mapping):
    known = {f.name for f in fields(cfg_section)}
    for key, value in mapping.items():
        if key not in known:
            raise ConfigError(f"unknown config key: {section_name}.{key}")
        setattr(cfg_section, key, _coerce(section_name, key, value))


def _env_overrides(env):
    """Yield (section, key, parsed_value) for GNETCAST_* variables."""
    # longest section name wins so STORM_TRAIN_SEED parses as storm_train.seed
    names = sorted(_SECTIONS, key=len, reverse=True)
    for var, raw in env.items():
        if not var.startswith(ENV_PREFIX):
            continue
        rest = var[len(ENV_PREFIX):].lower()
        for name in names:
            if rest.startswith(name + "_"):
                key = rest[len(name) + 1:]
                yield name, key, yaml.safe_load(raw)
                break
        else:
            raise ConfigError(f"environment override {var} matches no config section")


def load_config(path=None, env=None) -> RunConfig:
    """Build a RunConfig from an optional YAML file plus GNETCAST_* env overrides."""
    cfg = RunConfig()
    if path is not None:
        try:
            text = open(path).read()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"malformed YAML in {path}: {e}") from e
        if not isinstance(doc, dict):
            raise ConfigError(f"config root in {path} must be a mapping")
        for section, mapping in doc.items():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section: {section}")
            if mapping is None:
                continue
            if not isinstance(mapping, dict):
                raise ConfigError(f"config section {section} must be a mapping")
            _apply(getattr(cfg, section), section, mapping)
    env = os.environ if env is None else env
    for section, key, value in _env_overrides(env):
        known = {f.name for f in fields(getattr(cfg, section))}
        if key not in known:
            var = f"{ENV_PREFIX}{section.upper()}_{key.upper()}"
            raise ConfigError(f"unknown config key {section}.{key} from {var}")
        setattr(getattr(cfg, section), key, _coerce(section, key, value))
    return cfg.validate()
