"""Experiment configuration: one YAML file, strict keys, full defaults.

Unknown keys are rejected with the offending dotted path named, so typos
fail loudly instead of silently running defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .regressor import LossSchedule, TrainConfig
from .geometry import RansacConfig
from .scene_sim import AmbiguityConfig


class ConfigError(Exception):
    """Invalid configuration file (unknown key, bad type, bad value)."""


@dataclass(frozen=True)
class SceneSection:
    layout: str = "grid_of_rooms"
    n_landmarks: int = 180
    n_cameras: int = 36
    n_cells: int = 9
    local_dim: int = 64
    pixel_jitter_sigma: float = 0.0


@dataclass(frozen=True)
class AmbiguitySection:
    duplicate_fraction: float = 0.0
    group_size: int = 2
    descriptor_noise_sigma: float = 0.0

    def to_ambiguity(self) -> AmbiguityConfig:
        return AmbiguityConfig(
            duplicate_fraction=self.duplicate_fraction,
            group_size=self.group_size,
            descriptor_noise_sigma=self.descriptor_noise_sigma,
        )


@dataclass(frozen=True)
class EncodingSection:
    global_dim: int = 64
    fit_iterations: int = 600
    margin: float = 0.1
    content_sigma: float = 0.5
    covis_positive_threshold: int = 1


@dataclass(frozen=True)
class HeadSection:
    hidden_width: int = 128
    residual_blocks: int = 2
    clusters: int = 1


@dataclass(frozen=True)
class LossSection:
    tau_min: float = 1.0
    tau_max: float = 50.0
    z_near: float = 0.1
    z_far: float = 1000.0
    e_max: float = 1000.0
    z_pseudo: float = 10.0

    def to_schedule(self) -> LossSchedule:
        return LossSchedule(**dataclasses.asdict(self))


@dataclass(frozen=True)
class TrainSection:
    batch_size: int = 512
    iterations: int = 3000
    lr_start: float = 2e-4
    lr_peak: float = 5e-3
    lr_end: float = 2e-8
    weight_decay: float = 1e-2
    sigma: float = 0.1
    samples_per_image: int = 1024
    warmup_fraction: float = 0.3

    def to_train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            iterations=self.iterations,
            lr_start=self.lr_start,
            lr_peak=self.lr_peak,
            lr_end=self.lr_end,
            weight_decay=self.weight_decay,
            sigma=self.sigma,
            seed=seed,
            warmup_fraction=self.warmup_fraction,
        )


@dataclass(frozen=True)
class RansacSection:
    hypothesis_count: int = 64
    inlier_threshold_px: float = 10.0
    refinement_iterations: int = 20

    def to_ransac_config(self, seed: int) -> RansacConfig:
        return RansacConfig(
            hypothesis_count=self.hypothesis_count,
            inlier_threshold_px=self.inlier_threshold_px,
            refinement_iterations=self.refinement_iterations,
            rng_seed=seed,
        )


@dataclass(frozen=True)
class EvalSection:
    heldout_fraction: float = 0.25
    samples_per_image: int = 256
    thresholds: tuple = ((0.05, 5.0), (0.25, 2.0), (0.5, 5.0), (5.0, 10.0))


@dataclass(frozen=True)
class AblateSection:
    cluster_ks: tuple = (4, 32, 128)
    seeds: tuple = (0, 1, 2, 3, 4)
    include_no_global: bool = True


@dataclass(frozen=True)
class CovisSection:
    bins: int = 36
    reference_landmarks: int = 5000


@dataclass(frozen=True)
class Toy2dSection:
    grid: int = 19
    samples_per_tile: int = 64
    encoding_dim: int = 32
    tile_size: float = 10.0
    alias_fraction: float = 0.0
    seeds: tuple = (0, 1, 2, 3, 4)
    batch_size: int = 256
    iterations: int = 800
    prior_samples: int = 10000
    prior_clusters: int = 50


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "out"
    scene: SceneSection = field(default_factory=SceneSection)
    ambiguity: AmbiguitySection = field(default_factory=AmbiguitySection)
    encodings: EncodingSection = field(default_factory=EncodingSection)
    head: HeadSection = field(default_factory=HeadSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)
    ransac: RansacSection = field(default_factory=RansacSection)
    eval: EvalSection = field(default_factory=EvalSection)
    ablate: AblateSection = field(default_factory=AblateSection)
    covis: CovisSection = field(default_factory=CovisSection)
    toy2d: Toy2dSection = field(default_factory=Toy2dSection)


_SECTION_TYPES = {
    "scene": SceneSection,
    "ambiguity": AmbiguitySection,
    "encodings": EncodingSection,
    "head": HeadSection,
    "loss": LossSection,
    "train": TrainSection,
    "ransac": RansacSection,
    "eval": EvalSection,
    "ablate": AblateSection,
    "covis": CovisSection,
    "toy2d": Toy2dSection,
}

_LIST_FIELDS = {"thresholds", "cluster_ks", "seeds"}


def _build_section(cls, data: dict, prefix: str):
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown key {prefix}.{key}")
        if key in _LIST_FIELDS:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{prefix}.{key} must be a list")
            value = tuple(tuple(v) if isinstance(v, (list, tuple)) else v for v in value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section {prefix}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    kwargs = {}
    for key, value in data.items():
        if key not in top:
            raise ConfigError(f"unknown key {key}")
        if key in _SECTION_TYPES:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key} must be a mapping")
            kwargs[key] = _build_section(_SECTION_TYPES[key], value, key)
        else:
            kwargs[key] = value
    try:
        cfg = ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    from .scene_sim import LAYOUTS

    if cfg.scene.layout not in LAYOUTS:
        raise ConfigError(f"scene.layout must be one of {LAYOUTS}")
    if cfg.scene.n_landmarks < 10:
        raise ConfigError("scene.n_landmarks must be >= 10")
    if cfg.scene.n_cameras < 2:
        raise ConfigError("scene.n_cameras must be >= 2")
    if not 0.0 <= cfg.ambiguity.duplicate_fraction <= 1.0:
        raise ConfigError("ambiguity.duplicate_fraction must be in [0, 1]")
    if cfg.encodings.global_dim < 0:
        raise ConfigError("encodings.global_dim must be >= 0")
    if cfg.head.clusters < 1:
        raise ConfigError("head.clusters must be >= 1")
    if not 0.0 <= cfg.eval.heldout_fraction < 1.0:
        raise ConfigError("eval.heldout_fraction must be in [0, 1)")
    for pair in cfg.eval.thresholds:
        if len(pair) != 2 or pair[0] <= 0 or pair[1] <= 0:
            raise ConfigError("eval.thresholds entries must be (meters, degrees) > 0")


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    return config_from_dict(data or {})


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(config_to_dict(cfg), sort_keys=True, default=list)
    return hashlib.sha256(canon.encode()).hexdigest()
