"""Pre-norm Transformer backbone with rotary position encoding."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


def rotary_tables(length: int, head_dim: int, device=None, dtype=torch.float32, base: float = 10000.0):
    inv_freq = 1.0 / (base ** (torch.arange(0, head_dim, 2, device=device, dtype=dtype) / head_dim))
    pos = torch.arange(length, device=device, dtype=dtype)
    angles = torch.outer(pos, inv_freq)  # (L, head_dim/2)
    return angles.cos(), angles.sin()


def apply_rotary(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    """Rotate channel pairs of x: (B, heads, L, head_dim)."""
    x1, x2 = x[..., 0::2], x[..., 1::2]
    out = torch.stack((x1 * cos - x2 * sin, x1 * sin + x2 * cos), dim=-1)
    return out.flatten(-2)


class RotaryAttention(nn.Module):
    def __init__(self, d_model: int, num_heads: int = 8, dropout: float = 0.0):
        super().__init__()
        if d_model % num_heads or (d_model // num_heads) % 2:
            raise ValueError("d_model must split into an even head dimension")
        self.num_heads = num_heads
        self.head_dim = d_model // num_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)
        self.dropout = dropout

    def forward(self, x: torch.Tensor, causal: bool = False) -> torch.Tensor:
        b, l, d = x.shape
        q, k, v = self.qkv(x).view(b, l, 3, self.num_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        cos, sin = rotary_tables(l, self.head_dim, x.device, x.dtype)
        q, k = apply_rotary(q, cos, sin), apply_rotary(k, cos, sin)
        y = F.scaled_dot_product_attention(
            q, k, v, is_causal=causal, dropout_p=self.dropout if self.training else 0.0
        )
        return self.proj(y.transpose(1, 2).reshape(b, l, d))


class TransformerBlock(nn.Module):
    def __init__(self, d_model: int, num_heads: int = 8, ff_mult: int = 4, dropout: float = 0.2):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = RotaryAttention(d_model, num_heads)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, ff_mult * d_model), nn.GELU(), nn.Linear(ff_mult * d_model, d_model)
        )
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, causal: bool = False) -> torch.Tensor:
        x = x + self.dropout(self.attn(self.norm1(x), causal))
        return x + self.dropout(self.ff(self.norm2(x)))


class TransformerBackbone(nn.Module):
    def __init__(self, d_model: int, depth: int = 6, num_heads: int = 8, ff_mult: int = 4, dropout: float = 0.2, causal: bool = False):
        super().__init__()
        self.causal = causal
        self.layers = nn.ModuleList([TransformerBlock(d_model, num_heads, ff_mult, dropout) for _ in range(depth)])
        self.final_norm = nn.LayerNorm(d_model)

    def forward(self, x: torch.Tensor, capture: bool = False):
        outs = []
        for i, layer in enumerate(self.layers):
            x = layer(x, self.causal)
            if i == len(self.layers) - 1:
                x = self.final_norm(x)
            if capture:
                outs.append(x)
        return x, outs
