"""Expressive synthesis stage: residual expression modulation and the
blendshape output head."""

from __future__ import annotations

import torch
import torch.nn as nn

from .config import ModelConfig


class ExpressionModulator(nn.Module):
    """Residual modulation D' = D + alpha * Mod(D).

    ``single``: Mod(D) = ReLU(D W + b), a one-layer gate.
    ``mlp``:    Mod(D) = W2 ReLU(LayerNorm(W1 D)), expanding d -> 2d -> d.
    alpha is a fixed config scalar; alpha = 0 makes this an exact identity.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.alpha = cfg.alpha
        self.variant = cfg.mod_variant
        self.act = nn.ReLU()
        if self.variant == "single":
            self.gate = nn.Linear(cfg.d, cfg.d)
        else:
            self.expand = nn.Linear(cfg.d, 2 * cfg.d)
            self.norm = nn.LayerNorm(2 * cfg.d)
            self.contract = nn.Linear(2 * cfg.d, cfg.d)

    def modulation(self, x: torch.Tensor) -> torch.Tensor:
        if self.variant == "single":
            return self.act(self.gate(x))
        return self.contract(self.act(self.norm(self.expand(x))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.alpha * self.modulation(x)


class BlendshapeHead(nn.Module):
    """Affine map d -> channels; the sigmoid variant emits normalized-space
    coefficients in (0, 1), the linear variant returns the raw affine output."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.proj = nn.Linear(cfg.d, cfg.channels)
        self.activation = cfg.output_activation

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        raw = self.proj(x)
        return torch.sigmoid(raw) if self.activation == "sigmoid" else raw


class SynthesisModule(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.modulator = ExpressionModulator(cfg)
        self.head = BlendshapeHead(cfg)

    def forward(self, decoded: torch.Tensor) -> torch.Tensor:
        return self.head(self.modulator(decoded))
