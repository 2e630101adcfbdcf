"""Dual-speaker 3D talking-head pipeline: synthetic dyadic conversation data,
a blendshape prediction model, a training harness, and motion metrics."""

from .config import ModelConfig, TrainConfig
from .datamodel import (
    AudioTrack,
    BlendshapeSeq,
    ClipRecord,
    DatasetManifest,
    NormalizationStats,
    PartitionLayout,
    TurnSegment,
    ValidationError,
    count_rounds,
    denormalize_motion,
    normalize_motion,
    read_clip,
    write_clip,
)
from .metrics import GaussianStats, MetricReport, evaluate_suite, fit_gaussian, frechet_distance
from .model import DyadTalkModel, build_model, init_weights
from .synthgen import GenParams, audio_envelope, generate_clip, generate_dataset
from .training import (
    Checkpoint,
    gradcheck,
    load_checkpoint,
    loss_blendshape,
    loss_total,
    loss_velocity,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AudioTrack", "BlendshapeSeq", "Checkpoint", "ClipRecord", "DatasetManifest",
    "DyadTalkModel", "GaussianStats", "GenParams", "MetricReport", "ModelConfig",
    "NormalizationStats", "PartitionLayout", "TrainConfig", "TurnSegment",
    "ValidationError", "audio_envelope", "build_model", "count_rounds",
    "denormalize_motion", "evaluate_suite", "fit_gaussian", "frechet_distance",
    "generate_clip", "generate_dataset", "gradcheck", "init_weights",
    "load_checkpoint", "loss_blendshape", "loss_total", "loss_velocity",
    "normalize_motion", "read_clip", "save_checkpoint", "train", "write_clip",
]
