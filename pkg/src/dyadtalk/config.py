"""Architecture and optimizer hyperparameter containers, with the presets used
throughout the tests (full / toy / tiny)."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

OUTPUT_ACTIVATIONS = ("sigmoid", "linear")
MOD_VARIANTS = ("single", "mlp")
AUDIO_ENCODERS = ("toy_conv", "feature_file")
ATTN_SCALES = ("full_dim", "per_head")


class ConfigError(ValueError):
    """Raised when a config violates one of its documented constraints."""


@dataclass
class ModelConfig:
    """Hyperparameters of the dual-speaker blendshape predictor.

    ``d`` is the shared feature width every stage operates in; ``audio_dim``
    is the raw audio-encoder output width before the shared projection.
    """

    d: int = 256
    audio_dim: int = 1024
    heads: int = 4
    lstm_hidden: int = 512
    lstm_layers: int = 2
    enc_layers: int = 3
    dec_layers: int = 3
    ffn_dim: int = 512
    dropout: float = 0.1
    alpha: float = 1.0
    output_activation: str = "sigmoid"
    mod_variant: str = "single"  # "single": one linear + ReLU; "mlp": expand/norm/contract
    mask_window: int | None = None  # None = attend to all past frames
    channels: int = 56
    fps: float = 25.0
    sample_rate: int = 16000
    audio_encoder: str = "toy_conv"
    audio_attn_layers: int = 2
    attn_scale: str = "full_dim"  # logit scale of the audio->motion cross-attention

    def __post_init__(self) -> None:
        if self.d < 2 or self.d % 2:
            raise ConfigError("d must be an even integer >= 2")
        for name in ("audio_dim", "heads", "lstm_hidden", "lstm_layers", "enc_layers",
                     "dec_layers", "ffn_dim", "channels", "audio_attn_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.d % self.heads:
            raise ConfigError("d must be divisible by heads")
        if self.audio_dim % self.heads:
            raise ConfigError("audio_dim must be divisible by heads")
        if self.mask_window is not None and self.mask_window < 1:
            raise ConfigError("mask_window must be >= 1 (or None for unlimited past)")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")
        if self.mod_variant not in MOD_VARIANTS:
            raise ConfigError(f"mod_variant must be one of {MOD_VARIANTS}")
        if self.audio_encoder not in AUDIO_ENCODERS:
            raise ConfigError(f"audio_encoder must be one of {AUDIO_ENCODERS}")
        if self.attn_scale not in ATTN_SCALES:
            raise ConfigError(f"attn_scale must be one of {ATTN_SCALES}")
        if self.fps <= 0 or self.sample_rate <= 0:
            raise ConfigError("fps and sample_rate must be positive")
        if self.audio_encoder == "toy_conv" and self.sample_rate % round(self.fps):
            raise ConfigError("toy_conv requires sample_rate to be a multiple of fps")

    @property
    def samples_per_frame(self) -> int:
        return int(round(self.sample_rate / self.fps))

    @classmethod
    def full(cls) -> "ModelConfig":
        return cls()

    @classmethod
    def toy(cls) -> "ModelConfig":
        """Small preset that trains on a laptop CPU in minutes."""
        return cls(d=128, audio_dim=64, lstm_hidden=32, ffn_dim=256)

    @classmethod
    def tiny(cls) -> "ModelConfig":
        """Minimal preset for finite-difference gradient verification."""
        return cls(d=16, audio_dim=8, heads=2, lstm_hidden=8, lstm_layers=2,
                   enc_layers=1, dec_layers=1, ffn_dim=32, dropout=0.0,
                   audio_attn_layers=1)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return _from_dict(cls, data)


@dataclass
class TrainConfig:
    """Optimization hyperparameters; ``seed`` fixes init, shuffling and dropout."""

    learning_rate: float = 1e-4
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    window_frames: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        for name in ("epochs", "batch_size", "window_frames"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @classmethod
    def toy(cls) -> "TrainConfig":
        return cls(learning_rate=1e-3, epochs=50, batch_size=8, window_frames=125)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return _from_dict(cls, data)


def _from_dict(cls, data: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**data)


def load_config_file(path: str | Path, cls):
    """Read a JSON config file into ``cls`` (ModelConfig or TrainConfig)."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return _from_dict(cls, data)
