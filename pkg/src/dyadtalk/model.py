"""End-to-end dual-speaker blendshape predictor.

The batched tensor path (``forward``) is what training uses; the stage methods
(``encode_audio`` .. ``predict_blendshapes``) expose each pipeline step on
single-clip, stage-tagged features for inspection and testing.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn

from .config import ModelConfig
from .datamodel import AudioTrack, BlendshapeSeq, ValidationError, frame_count
from .encoders import (
    BlendshapeEncoder,
    FeatureSeq,
    Stage,
    ToyAudioEncoder,
    check_stage,
    resample_frames,
)
from .enhancer import CrossModalEnhancer, fuse_features
from .interaction import InteractionModule
from .synthesis import SynthesisModule


class DyadTalkModel(nn.Module):
    """Predicts speaker B's blendshape motion from (audio A, motion A, audio B)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.audio_encoder == "toy_conv":
            # independent per-speaker encoder instances
            self.audio_encoder_a = ToyAudioEncoder(cfg)
            self.audio_encoder_b = ToyAudioEncoder(cfg)
        else:
            self.audio_encoder_a = None
            self.audio_encoder_b = None
        self.audio_proj = nn.Linear(cfg.audio_dim, cfg.d, bias=False)  # shared
        self.motion_encoder = BlendshapeEncoder(cfg)
        self.enhancer = CrossModalEnhancer(cfg)
        self.interaction = InteractionModule(cfg)
        self.synthesis = SynthesisModule(cfg)

    # --- batched tensor path --------------------------------------------------

    def forward(self, wave_a: torch.Tensor, wave_b: torch.Tensor,
                motion_a: torch.Tensor) -> torch.Tensor:
        """wave_*: [batch, samples]; motion_a: [batch, frames, channels]
        (normalized). Returns predicted B motion [batch, frames, channels]."""
        n_frames = motion_a.shape[1]
        hidden_a = self._encode_wave(wave_a, "A", n_frames)
        hidden_b = self._encode_wave(wave_b, "B", n_frames)
        audio_a = self.audio_proj(hidden_a)
        audio_b = self.audio_proj(hidden_b)
        motion = self.motion_encoder(motion_a)
        joint = self.enhancer(audio_a, motion)
        decoded = self.interaction(joint, audio_b)
        return self.synthesis(decoded)

    def _encode_wave(self, wave: torch.Tensor, side: str, n_frames: int,
                     features: torch.Tensor | None = None) -> torch.Tensor:
        if self.cfg.audio_encoder == "feature_file":
            if features is None:
                raise ValidationError("audio: feature_file mode needs precomputed features")
            if features.ndim == 2:
                features = features[None]
            if features.shape[-1] != self.cfg.audio_dim:
                raise ValidationError(f"features: dim {features.shape[-1]} != "
                                      f"audio_dim {self.cfg.audio_dim}")
            return resample_frames(features, n_frames)
        encoder = self.audio_encoder_a if side == "A" else self.audio_encoder_b
        return encoder(wave, n_frames)

    def lookahead_frames(self) -> int:
        """Frames of future audio that may influence a given output frame."""
        if self.audio_encoder_b is None:
            return 2
        return self.audio_encoder_b.lookahead_frames()

    # --- single-clip stage surface ---------------------------------------------

    def _param_dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def _as_tensor(self, values: np.ndarray) -> torch.Tensor:
        return torch.as_tensor(np.ascontiguousarray(values), dtype=self._param_dtype())

    def encode_audio(self, track: AudioTrack, side: str, *,
                     target_len: int | None = None,
                     features: np.ndarray | None = None) -> FeatureSeq:
        """Encode one waveform to [frames x audio_dim] on the motion clock."""
        if side not in ("A", "B"):
            raise ValidationError("side: must be 'A' or 'B'")
        n_frames = target_len or frame_count(track.n_samples, track.sample_rate,
                                             self.cfg.fps)
        feats = None if features is None else self._as_tensor(features)
        with torch.no_grad():
            out = self._encode_wave(self._as_tensor(track.samples)[None], side,
                                    n_frames, feats)
        stage = Stage.AUDIO_HIDDEN_A if side == "A" else Stage.AUDIO_HIDDEN_B
        return FeatureSeq(out[0], stage)

    def project_audio(self, hidden: FeatureSeq) -> FeatureSeq:
        if hidden.stage not in (Stage.AUDIO_HIDDEN_A, Stage.AUDIO_HIDDEN_B):
            raise ValidationError("stage: project_audio expects an audio_hidden input")
        check_stage(hidden, hidden.stage, self.cfg)
        with torch.no_grad():
            out = self.audio_proj(hidden.values[None])[0]
        stage = Stage.AUDIO_PROJ_A if hidden.stage is Stage.AUDIO_HIDDEN_A \
            else Stage.AUDIO_PROJ_B
        return FeatureSeq(out, stage)

    def encode_blendshapes(self, motion: BlendshapeSeq) -> FeatureSeq:
        if motion.channels != self.cfg.channels:
            raise ValidationError(f"motion: {motion.channels} channels != "
                                  f"config {self.cfg.channels}")
        with torch.no_grad():
            out = self.motion_encoder(self._as_tensor(motion.values)[None])[0]
        return FeatureSeq(out, Stage.MOTION_EMBED)

    def cross_attend(self, audio: FeatureSeq, motion: FeatureSeq,
                     need_weights: bool = False):
        check_stage(audio, Stage.AUDIO_PROJ_A, self.cfg)
        check_stage(motion, Stage.MOTION_EMBED, self.cfg)
        with torch.no_grad():
            out, weights = self.enhancer.cross_attend(audio.values[None],
                                                      motion.values[None],
                                                      need_weights=need_weights)
        fused = FeatureSeq(out[0], Stage.CROSS_FUSED)
        return (fused, weights[0]) if need_weights else fused

    def temporal_enhance(self, fused: FeatureSeq) -> FeatureSeq:
        check_stage(fused, Stage.CROSS_FUSED, self.cfg)
        with torch.no_grad():
            out = self.enhancer.temporal_enhance(fused.values[None])[0]
        return FeatureSeq(out, Stage.TEMPORAL)

    def fuse_features(self, audio: FeatureSeq, temporal: FeatureSeq) -> FeatureSeq:
        check_stage(audio, Stage.AUDIO_PROJ_A, self.cfg)
        check_stage(temporal, Stage.TEMPORAL, self.cfg)
        return FeatureSeq(fuse_features(audio.values, temporal.values), Stage.JOINT)

    def encode_interaction(self, joint: FeatureSeq) -> FeatureSeq:
        check_stage(joint, Stage.JOINT, self.cfg)
        with torch.no_grad():
            out = self.interaction.encode(joint.values[None])[0]
        return FeatureSeq(out, Stage.INTERACTION_ENC)

    def modal_align(self, encoded: FeatureSeq, need_weights: bool = False):
        check_stage(encoded, Stage.INTERACTION_ENC, self.cfg)
        with torch.no_grad():
            out, weights = self.interaction.align(encoded.values[None],
                                                  need_weights=need_weights)
        aligned = FeatureSeq(out[0], Stage.ALIGNED)
        return (aligned, weights[0]) if need_weights else aligned

    def decode_interaction(self, listener_audio: FeatureSeq,
                           aligned: FeatureSeq) -> FeatureSeq:
        check_stage(listener_audio, Stage.AUDIO_PROJ_B, self.cfg)
        check_stage(aligned, Stage.ALIGNED, self.cfg)
        if listener_audio.length != aligned.length:
            raise ValidationError("decode: audio/aligned frame counts differ")
        with torch.no_grad():
            out = self.interaction.decode(listener_audio.values[None],
                                          aligned.values[None])[0]
        return FeatureSeq(out, Stage.DECODED)

    def modulate_expression(self, decoded: FeatureSeq) -> FeatureSeq:
        check_stage(decoded, Stage.DECODED, self.cfg)
        with torch.no_grad():
            out = self.synthesis.modulator(decoded.values[None])[0]
        return FeatureSeq(out, Stage.MODULATED)

    def predict_blendshapes(self, modulated: FeatureSeq) -> BlendshapeSeq:
        check_stage(modulated, Stage.MODULATED, self.cfg)
        with torch.no_grad():
            out = self.synthesis.head(modulated.values[None])[0]
        return BlendshapeSeq(out.to(torch.float32).numpy(), fps=self.cfg.fps)

    def predict(self, audio_a: AudioTrack, motion_a: BlendshapeSeq,
                audio_b: AudioTrack, *,
                features_a: np.ndarray | None = None,
                features_b: np.ndarray | None = None) -> BlendshapeSeq:
        """Full pipeline on one clip. motion_a must be normalized; the result is
        normalized-space B motion with exactly motion_a.n_frames frames."""
        if motion_a.channels != self.cfg.channels:
            raise ValidationError(f"motion_a: {motion_a.channels} channels != "
                                  f"config {self.cfg.channels}")
        frame_period = 1.0 / self.cfg.fps
        for name, track in (("audio_a", audio_a), ("audio_b", audio_b)):
            if abs(track.duration_s - motion_a.duration_s) > frame_period + 1e-9:
                raise ValidationError(f"{name}: duration disagrees with motion_a by "
                                      "more than one frame period")
        n_frames = motion_a.n_frames
        with torch.no_grad():
            hidden_a = self._encode_wave(self._as_tensor(audio_a.samples)[None], "A",
                                         n_frames,
                                         None if features_a is None
                                         else self._as_tensor(features_a))
            hidden_b = self._encode_wave(self._as_tensor(audio_b.samples)[None], "B",
                                         n_frames,
                                         None if features_b is None
                                         else self._as_tensor(features_b))
            proj_a = self.audio_proj(hidden_a)
            proj_b = self.audio_proj(hidden_b)
            motion = self.motion_encoder(self._as_tensor(motion_a.values)[None])
            joint = self.enhancer(proj_a, motion)
            decoded = self.interaction(joint, proj_b)
            pred = self.synthesis(decoded)[0]
        return BlendshapeSeq(pred.to(torch.float32).numpy(), fps=self.cfg.fps,
                             layout=motion_a.layout)


def init_weights(model: nn.Module, seed: int) -> None:
    """Documented, reproducible init: every weight matrix uniform in
    +-1/sqrt(fan_in), biases zero, LSTM forget-gate bias 1, LayerNorm identity."""
    gen = torch.Generator().manual_seed(seed)

    def uniform_(param: torch.Tensor, fan_in: int) -> None:
        bound = 1.0 / math.sqrt(fan_in)
        with torch.no_grad():
            param.uniform_(-bound, bound, generator=gen)

    for module in model.modules():
        if isinstance(module, nn.Linear):
            uniform_(module.weight, module.in_features)
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.Conv1d):
            uniform_(module.weight, module.in_channels * module.kernel_size[0])
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.LSTM):
            hidden = module.hidden_size
            for name, param in module.named_parameters():
                if name.startswith("weight"):
                    uniform_(param, param.shape[1])
                else:
                    nn.init.zeros_(param)
                    if name.startswith("bias_ih"):
                        with torch.no_grad():
                            param[hidden:2 * hidden].fill_(1.0)
        elif isinstance(module, nn.LayerNorm):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)


def build_model(cfg: ModelConfig, seed: int) -> DyadTalkModel:
    model = DyadTalkModel(cfg)
    init_weights(model, seed)
    return model
