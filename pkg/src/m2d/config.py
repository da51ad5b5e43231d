"""Pipeline configuration: one YAML file, a profiles section, strict keys.

Base defaults are paper-scale; the built-in "desk" profile shrinks the model
and epoch counts to laptop scale.  Unknown keys are rejected with their full
path so a typo can't silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .models import ModelConfig
from .segmentation import SegmentationConfig
from .synth import SynthSpec
from .training import CoascentConfig, TrainConfig


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class AudioSection:
    sample_rate: int = 22050


@dataclass
class SegmentationSection:
    min_beats: int = 8
    max_beats: int = 32
    melody_jump_threshold: float = 0.1
    onset_valley_quantile: float = 0.25

    def build(self) -> SegmentationConfig:
        return SegmentationConfig(
            min_beats=self.min_beats,
            max_beats=self.max_beats,
            melody_jump_threshold=self.melody_jump_threshold,
            onset_valley_quantile=self.onset_valley_quantile,
        )


@dataclass
class ModelSection:
    embed_dim: int = 512
    depth_multiplier: float = 1.0
    n_classes: int = 1101

    def build(self, n_classes=None) -> ModelConfig:
        return ModelConfig(
            embed_dim=self.embed_dim,
            depth_multiplier=self.depth_multiplier,
            n_classes=self.n_classes if n_classes is None else n_classes,
        )


@dataclass
class TrainingSection:
    beta1: float = 1.0
    beta2: float = 1.0
    beta3: float = 10.0
    pretrain_lr: float = 1e-4
    pretrain_decay_every: int = 50
    pretrain_epochs: int = 200
    pretrain_subset: int = 0  # 0 = use every unlabeled phrase
    finetune_lr: float = 1e-2
    finetune_momentum: float = 0.9
    finetune_weight_decay: float = 5e-4
    finetune_epochs: int = 500
    batch_size: int = 16
    balance: bool = False

    def build(self, seed: int = 0) -> TrainConfig:
        return TrainConfig(
            beta1=self.beta1,
            beta2=self.beta2,
            beta3=self.beta3,
            pretrain_lr=self.pretrain_lr,
            pretrain_decay_every=self.pretrain_decay_every,
            pretrain_epochs=self.pretrain_epochs,
            finetune_lr=self.finetune_lr,
            finetune_momentum=self.finetune_momentum,
            finetune_weight_decay=self.finetune_weight_decay,
            finetune_epochs=self.finetune_epochs,
            batch_size=self.batch_size,
            seed=seed,
        )


@dataclass
class CoascentSection:
    tau: float = 0.9
    alpha: float = 0.5
    lr: float = 1e-5
    epochs_per_round: int = 5
    max_rounds: int = 20

    def build(self, seed: int = 0, batch_size: int = 16) -> CoascentConfig:
        return CoascentConfig(
            tau=self.tau,
            alpha=self.alpha,
            lr=self.lr,
            epochs_per_round=self.epochs_per_round,
            max_rounds=self.max_rounds,
            batch_size=batch_size,
            seed=seed,
        )


@dataclass
class SynthSection:
    n_styles: int = 4
    classes_per_style: int = 3
    tempo_lo: float = 100.0
    tempo_hi: float = 160.0
    beats_per_phrase: int = 16
    phrases_per_song_lo: int = 8
    phrases_per_song_hi: int = 12
    noise_snr_db: float = 20.0
    n_labeled_songs: int = 20
    n_unlabeled_songs: int = 400
    write_audio: bool = True

    def build(self, seed: int = 0) -> SynthSpec:
        return SynthSpec(
            n_styles=self.n_styles,
            classes_per_style=self.classes_per_style,
            tempo_range=(self.tempo_lo, self.tempo_hi),
            beats_per_phrase=self.beats_per_phrase,
            phrases_per_song=(self.phrases_per_song_lo, self.phrases_per_song_hi),
            noise_snr_db=self.noise_snr_db,
            seed=seed,
        )


@dataclass
class PipelineConfig:
    audio: AudioSection = field(default_factory=AudioSection)
    segmentation: SegmentationSection = field(default_factory=SegmentationSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    coascent: CoascentSection = field(default_factory=CoascentSection)
    synth: SynthSection = field(default_factory=SynthSection)


BUILTIN_PROFILES = {
    "paper": {},
    "desk": {
        "model": {"embed_dim": 64, "depth_multiplier": 0.125, "n_classes": 12},
        "training": {"pretrain_epochs": 60, "finetune_epochs": 100},
    },
}


def _coerce(value, target_type, key):
    if target_type is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(key, f"expected bool, got {value!r}")
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(key, f"expected int, got {value!r}")
        return int(value)
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected number, got {value!r}")
        return float(value)
    return value


def _apply(section, data: dict, path: str):
    known = {f.name for f in fields(section)}
    for key, value in data.items():
        here = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(here, "unknown key")
        setattr(section, key, _coerce(value, type(getattr(section, key)), here))


def _merge_into(cfg: PipelineConfig, data: dict, path: str = "") -> None:
    sections = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for key, value in data.items():
        here = f"{path}.{key}" if path else key
        if key not in sections:
            raise ConfigError(here, "unknown section")
        if not isinstance(value, dict):
            raise ConfigError(here, "expected a mapping of options")
        _apply(sections[key], value, here)


def load_config(path=None, profile: str = "desk", overrides: dict | None = None) -> PipelineConfig:
    """Defaults -> profile -> file body -> file profile -> overrides."""
    cfg = PipelineConfig()
    file_data: dict = {}
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(raw, dict):
            raise ConfigError("", "config root must be a mapping")
        file_data = raw
    file_profiles = file_data.pop("profiles", {}) or {}
    if not isinstance(file_profiles, dict):
        raise ConfigError("profiles", "must be a mapping of profile names")

    if profile:
        if profile in BUILTIN_PROFILES:
            _merge_into(cfg, BUILTIN_PROFILES[profile], f"profiles.{profile}")
        elif profile not in file_profiles:
            raise ConfigError(f"profiles.{profile}", "unknown profile")
    _merge_into(cfg, file_data)
    if profile and profile in file_profiles:
        prof = file_profiles[profile]
        if not isinstance(prof, dict):
            raise ConfigError(f"profiles.{profile}", "expected a mapping")
        _merge_into(cfg, prof, f"profiles.{profile}")
    if overrides:
        _merge_into(cfg, overrides)
    return cfg
