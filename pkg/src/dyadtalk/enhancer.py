"""Cross-modal temporal enhancer: audio-queried cross-attention over motion
embeddings, a bidirectional LSTM, and feature concatenation."""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .config import ModelConfig
from .layers import MultiHeadAttention


class CrossModalEnhancer(nn.Module):
    """Fuses projected audio (queries) with motion embeddings (keys/values),
    then runs a BiLSTM and projects 2h back to the shared width d."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        scale = 1.0 / math.sqrt(cfg.d) if cfg.attn_scale == "full_dim" \
            else 1.0 / math.sqrt(cfg.d // cfg.heads)
        # bias-free QKV without an output projection: a single head reduces to
        # plain softmax(QK^T * scale) V
        self.attn = MultiHeadAttention(cfg.d, cfg.heads, bias=False,
                                       out_proj=False, scale=scale)
        self.lstm = nn.LSTM(cfg.d, cfg.lstm_hidden, num_layers=cfg.lstm_layers,
                            bidirectional=True, batch_first=True,
                            dropout=cfg.dropout if cfg.lstm_layers > 1 else 0.0)
        self.temporal_proj = nn.Linear(2 * cfg.lstm_hidden, cfg.d)

    def cross_attend(self, audio: torch.Tensor, motion: torch.Tensor,
                     need_weights: bool = False):
        """audio, motion: [batch, frames, d] on a common frame clock."""
        if audio.shape[1] != motion.shape[1]:
            raise ValueError("cross_attend: audio/motion frame counts differ")
        return self.attn(audio, motion, motion, need_weights=need_weights)

    def temporal_enhance(self, fused: torch.Tensor) -> torch.Tensor:
        out, _ = self.lstm(fused)
        return self.temporal_proj(out)

    def forward(self, audio: torch.Tensor, motion: torch.Tensor) -> torch.Tensor:
        fused, _ = self.cross_attend(audio, motion)
        temporal = self.temporal_enhance(fused)
        return fuse_features(audio, temporal)


def fuse_features(audio: torch.Tensor, temporal: torch.Tensor) -> torch.Tensor:
    """Concatenate along the feature axis; the first d columns stay the audio."""
    if audio.shape[:-1] != temporal.shape[:-1]:
        raise ValueError("fuse_features: frame counts differ")
    return torch.cat([audio, temporal], dim=-1)
