"""Attention and transformer building blocks shared by the pipeline stages."""

from __future__ import annotations

import math

import torch
import torch.nn as nn


def causal_bias(length: int, window: int | None = None, *,
                device=None, dtype=torch.float32) -> torch.Tensor:
    """Additive attention bias: 0 where query i may see key j, -inf elsewhere.

    Frame i sees keys j with i - window < j <= i; window=None allows the whole
    past. Row i always sees itself, so no softmax row is fully masked.
    """
    if window is not None and window < 1:
        raise ValueError("window must be >= 1 (or None for unlimited past)")
    idx = torch.arange(length, device=device)
    allowed = idx[None, :] <= idx[:, None]
    if window is not None:
        allowed &= idx[None, :] > idx[:, None] - window
    bias = torch.zeros(length, length, device=device, dtype=dtype)
    return bias.masked_fill(~allowed, float("-inf"))


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with a configurable logit scale.

    ``scale=None`` uses the conventional 1/sqrt(head_dim); a float overrides it
    (the audio->motion cross-attention scales by 1/sqrt(d) of the full width).
    ``out_proj=False`` with a single head reduces to plain softmax(QK^T)V.
    """

    def __init__(self, dim: int, heads: int, *, bias: bool = True,
                 out_proj: bool = True, scale: float | None = None,
                 dropout: float = 0.0):
        super().__init__()
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = (1.0 / math.sqrt(self.head_dim)) if scale is None else scale
        self.q_proj = nn.Linear(dim, dim, bias=bias)
        self.k_proj = nn.Linear(dim, dim, bias=bias)
        self.v_proj = nn.Linear(dim, dim, bias=bias)
        self.out_proj = nn.Linear(dim, dim) if out_proj else None
        self.drop = nn.Dropout(dropout)

    def forward(self, query: torch.Tensor, key: torch.Tensor, value: torch.Tensor,
                attn_bias: torch.Tensor | None = None, need_weights: bool = False):
        bsz, lq, dim = query.shape
        lk = key.shape[1]
        q = self.q_proj(query).view(bsz, lq, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(key).view(bsz, lk, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(value).view(bsz, lk, self.heads, self.head_dim).transpose(1, 2)
        logits = torch.matmul(q, k.transpose(-2, -1)) * self.scale
        if attn_bias is not None:
            logits = logits + attn_bias
        probs = logits.softmax(dim=-1)
        out = torch.matmul(self.drop(probs), v)
        out = out.transpose(1, 2).reshape(bsz, lq, dim)
        if self.out_proj is not None:
            out = self.out_proj(out)
        return (out, probs) if need_weights else (out, None)


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int, dropout: float = 0.0):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, hidden),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(hidden, dim),
        )

    def forward(self, x):
        return self.net(x)


class TransformerEncoderBlock(nn.Module):
    """Post-norm self-attention block: LN(x + attn), then LN(x + ffn)."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, dropout: float = 0.0):
        super().__init__()
        self.attn = MultiHeadAttention(dim, heads, dropout=dropout)
        self.ffn = FeedForward(dim, ffn_dim, dropout)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, attn_bias=None):
        attn_out, _ = self.attn(x, x, x, attn_bias)
        x = self.norm1(x + self.drop(attn_out))
        x = self.norm2(x + self.drop(self.ffn(x)))
        return x


class TransformerDecoderBlock(nn.Module):
    """Post-norm decoder block: masked self-attention, cross-attention, FFN."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, dropout: float = 0.0):
        super().__init__()
        self.self_attn = MultiHeadAttention(dim, heads, dropout=dropout)
        self.cross_attn = MultiHeadAttention(dim, heads, dropout=dropout)
        self.ffn = FeedForward(dim, ffn_dim, dropout)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.norm3 = nn.LayerNorm(dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, memory, self_bias=None, cross_bias=None):
        attn_out, _ = self.self_attn(x, x, x, self_bias)
        x = self.norm1(x + self.drop(attn_out))
        cross_out, _ = self.cross_attn(x, memory, memory, cross_bias)
        x = self.norm2(x + self.drop(cross_out))
        x = self.norm3(x + self.drop(self.ffn(x)))
        return x


class SinusoidalPositionalEncoding(nn.Module):
    """Classic fixed sin/cos positional table, added to the input."""

    def __init__(self, dim: int, initial_len: int = 512):
        super().__init__()
        self.dim = dim
        self.register_buffer("table", self._build(initial_len), persistent=False)

    def _build(self, length: int) -> torch.Tensor:
        position = torch.arange(length, dtype=torch.float64)[:, None]
        div = torch.exp(torch.arange(0, self.dim, 2, dtype=torch.float64)
                        * (-math.log(10000.0) / self.dim))
        table = torch.zeros(length, self.dim, dtype=torch.float64)
        table[:, 0::2] = torch.sin(position * div)
        table[:, 1::2] = torch.cos(position * div)
        return table

    def forward(self, x):
        length = x.shape[1]
        if length > self.table.shape[0]:
            self.table = self._build(2 * length).to(self.table.device)
        return x + self.table[:length].to(dtype=x.dtype, device=x.device)
