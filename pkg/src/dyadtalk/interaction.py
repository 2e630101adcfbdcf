"""Dual-speaker interaction stage: transformer encoding of the fused features,
a masked alignment attention layer, and a decoder driven by the listener's own
audio with cross-attention into the aligned features."""

from __future__ import annotations

import torch
import torch.nn as nn

from .config import ModelConfig
from .layers import (
    MultiHeadAttention,
    SinusoidalPositionalEncoding,
    TransformerDecoderBlock,
    TransformerEncoderBlock,
    causal_bias,
)


class InteractionModule(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.input_proj = nn.Linear(2 * cfg.d, cfg.d)
        self.pos_enc = SinusoidalPositionalEncoding(cfg.d)
        self.encoder_blocks = nn.ModuleList([
            TransformerEncoderBlock(cfg.d, cfg.heads, cfg.ffn_dim, cfg.dropout)
            for _ in range(cfg.enc_layers)
        ])
        self.align_attn = MultiHeadAttention(cfg.d, cfg.heads, dropout=cfg.dropout)
        self.decoder_blocks = nn.ModuleList([
            TransformerDecoderBlock(cfg.d, cfg.heads, cfg.ffn_dim, cfg.dropout)
            for _ in range(cfg.dec_layers)
        ])

    def encode(self, joint: torch.Tensor) -> torch.Tensor:
        """joint: [batch, frames, 2d] -> [batch, frames, d], global self-attention."""
        x = self.pos_enc(self.input_proj(joint))
        for block in self.encoder_blocks:
            x = block(x)
        return x

    def align(self, encoded: torch.Tensor, need_weights: bool = False):
        """One attention layer under the windowed causal bias: frame t only
        sees frames in (t - mask_window, t]."""
        bias = causal_bias(encoded.shape[1], self.cfg.mask_window,
                           device=encoded.device, dtype=encoded.dtype)
        return self.align_attn(encoded, encoded, encoded, bias,
                               need_weights=need_weights)

    def decode(self, listener_audio: torch.Tensor, aligned: torch.Tensor) -> torch.Tensor:
        """Causal self-attention over the listener's audio features with
        cross-attention into the aligned features under the same window bias."""
        if listener_audio.shape[1] != aligned.shape[1]:
            raise ValueError("decode: audio/aligned frame counts differ")
        length = listener_audio.shape[1]
        self_bias = causal_bias(length, device=listener_audio.device,
                                dtype=listener_audio.dtype)
        cross_bias = causal_bias(length, self.cfg.mask_window,
                                 device=listener_audio.device,
                                 dtype=listener_audio.dtype)
        x = self.pos_enc(listener_audio)
        for block in self.decoder_blocks:
            x = block(x, aligned, self_bias, cross_bias)
        return x

    def forward(self, joint: torch.Tensor, listener_audio: torch.Tensor) -> torch.Tensor:
        encoded = self.encode(joint)
        aligned, _ = self.align(encoded)
        return self.decode(listener_audio, aligned)
