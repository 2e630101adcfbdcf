"""Joint encoder stage: per-speaker audio encoders, the shared audio
projection, the blendshape MLP encoder, and the stage-tagged feature type."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .datamodel import ValidationError
from .layers import TransformerEncoderBlock, causal_bias


class Stage(str, Enum):
    """Which point of the pipeline a feature matrix came from."""

    AUDIO_HIDDEN_A = "audio_hidden_a"
    AUDIO_HIDDEN_B = "audio_hidden_b"
    AUDIO_PROJ_A = "audio_proj_a"
    AUDIO_PROJ_B = "audio_proj_b"
    MOTION_EMBED = "motion_embed"
    CROSS_FUSED = "cross_fused"
    TEMPORAL = "temporal"
    JOINT = "joint"
    INTERACTION_ENC = "interaction_enc"
    ALIGNED = "aligned"
    DECODED = "decoded"
    MODULATED = "modulated"


def stage_dim(stage: Stage, cfg: ModelConfig) -> int:
    if stage in (Stage.AUDIO_HIDDEN_A, Stage.AUDIO_HIDDEN_B):
        return cfg.audio_dim
    if stage is Stage.JOINT:
        return 2 * cfg.d
    return cfg.d


@dataclass
class FeatureSeq:
    """A stage-tagged real matrix [frames x dim] of intermediate features."""

    values: torch.Tensor
    stage: Stage

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ValidationError("values: expected a non-empty [frames x dim] matrix")
        if not torch.isfinite(self.values).all():
            raise ValidationError("values: non-finite entries")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def check_stage(feat: FeatureSeq, stage: Stage, cfg: ModelConfig) -> None:
    if feat.stage is not stage:
        raise ValidationError(f"stage: expected {stage.value}, got {feat.stage.value}")
    want = stage_dim(stage, cfg)
    if feat.dim != want:
        raise ValidationError(f"{stage.value}: dim {feat.dim} != expected {want}")


def resample_frames(x: torch.Tensor, target_len: int) -> torch.Tensor:
    """Linearly interpolate [batch, frames, dim] along the frame axis."""
    if x.shape[1] == target_len:
        return x
    if x.shape[1] == 1:
        return x.expand(-1, target_len, -1).contiguous()
    out = F.interpolate(x.transpose(1, 2), size=target_len,
                        mode="linear", align_corners=True)
    return out.transpose(1, 2)


def _stride_plan(total: int) -> list[int]:
    """Factor the per-frame hop into conv strides of at most 8."""
    strides, left = [], total
    while left > 1:
        for factor in range(8, 1, -1):
            if left % factor == 0:
                strides.append(factor)
                left //= factor
                break
        else:
            raise ValidationError(f"samples-per-frame {total} has a prime factor > 8; "
                                  "choose sample_rate/fps with small factors")
    return strides


class ToyAudioEncoder(nn.Module):
    """From-scratch stand-in for a pretrained speech encoder.

    A stack of strided 1-D convolutions whose total stride equals the samples
    per motion frame, followed by a few causally masked self-attention blocks;
    the output is linearly resampled to exactly the motion frame count.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        strides = _stride_plan(cfg.samples_per_frame)
        n = len(strides)
        widths = [max(4, cfg.audio_dim // 2 ** (n - 1 - i)) for i in range(n - 1)]
        widths.append(cfg.audio_dim)
        convs = []
        in_ch = 1
        for stride, out_ch in zip(strides, widths):
            convs.append(nn.Conv1d(in_ch, out_ch, kernel_size=2 * stride,
                                   stride=stride, padding=stride // 2))
            in_ch = out_ch
        self.convs = nn.ModuleList(convs)
        self.act = nn.ReLU()
        self.blocks = nn.ModuleList([
            TransformerEncoderBlock(cfg.audio_dim, cfg.heads, 2 * cfg.audio_dim,
                                    cfg.dropout)
            for _ in range(cfg.audio_attn_layers)
        ])
        self._strides = strides

    def receptive_field_samples(self) -> int:
        rf, jump = 1, 1
        for conv, stride in zip(self.convs, self._strides):
            rf += (conv.kernel_size[0] - 1) * jump
            jump *= stride
        return rf

    def lookahead_frames(self) -> int:
        """Conservative bound on how many future frames can influence a frame
        (conv receptive field plus the resampling neighbourhood)."""
        return int(math.ceil(self.receptive_field_samples()
                             / self.cfg.samples_per_frame)) + 2

    def forward(self, wave: torch.Tensor, n_frames: int) -> torch.Tensor:
        if wave.ndim != 2:
            raise ValidationError("wave: expected [batch, samples]")
        if wave.shape[1] < self.cfg.samples_per_frame:
            raise ValidationError("wave: shorter than one motion frame")
        x = wave[:, None, :]
        for conv in self.convs:
            x = self.act(conv(x))
        x = x.transpose(1, 2)
        bias = causal_bias(x.shape[1], device=x.device, dtype=x.dtype)
        for block in self.blocks:
            x = block(x, bias)
        return resample_frames(x, n_frames)


class BlendshapeEncoder(nn.Module):
    """Two-layer MLP b -> d/2 -> d with ReLU activations (output is ReLU'd too)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.fc1 = nn.Linear(cfg.channels, cfg.d // 2)
        self.fc2 = nn.Linear(cfg.d // 2, cfg.d)
        self.act = nn.ReLU()

    def forward(self, motion: torch.Tensor) -> torch.Tensor:
        return self.act(self.fc2(self.act(self.fc1(motion))))


# --- precomputed audio feature files -----------------------------------------
#
# <stem>.f32  row-major little-endian float32 [frames x dim]
# <stem>.json {"frames": int, "dim": int, "source": str}


def write_feature_file(stem: str | Path, features: np.ndarray, source: str = "") -> list[Path]:
    features = np.ascontiguousarray(features, dtype=np.float32)
    if features.ndim != 2:
        raise ValidationError("features: expected [frames x dim]")
    payload = Path(str(stem) + ".f32")
    sidecar = Path(str(stem) + ".json")
    payload.write_bytes(features.astype("<f4").tobytes())
    sidecar.write_text(json.dumps(
        {"frames": features.shape[0], "dim": features.shape[1], "source": source},
        sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return [payload, sidecar]


def read_feature_file(stem: str | Path) -> np.ndarray:
    payload = Path(str(stem) + ".f32")
    sidecar = Path(str(stem) + ".json")
    if not sidecar.exists():
        raise FileNotFoundError(f"missing file: {sidecar}")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    raw = np.frombuffer(payload.read_bytes(), dtype="<f4")
    if raw.size != meta["frames"] * meta["dim"]:
        raise ValidationError(f"{payload.name}: feature payload shape mismatch")
    features = raw.reshape(meta["frames"], meta["dim"])
    if not np.isfinite(features).all():
        raise ValidationError(f"{payload.name}: non-finite feature values")
    return features
