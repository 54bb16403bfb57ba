"""Prediction heads for downstream adaptation."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class LinearMeanPool(nn.Module):
    """Mean over tokens followed by one linear layer."""

    def __init__(self, dim: int, num_targets: int):
        super().__init__()
        self.linear = nn.Linear(dim, num_targets)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        # tokens (B, L, D), or already pooled (B, D)
        pooled = tokens.mean(1) if tokens.dim() == 3 else tokens
        return self.linear(pooled)


class QueryAttentionHead(nn.Module):
    """Attentive probe: one learned query cross-attends over all tokens.

    Every projection is bias-free, including the final classifier.
    """

    def __init__(self, dim: int, num_targets: int, num_heads: int = 16):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"token dim {dim} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.query = nn.Parameter(torch.randn(1, 1, dim) * 0.02)
        self.q_proj = nn.Linear(dim, dim, bias=False)
        self.k_proj = nn.Linear(dim, dim, bias=False)
        self.v_proj = nn.Linear(dim, dim, bias=False)
        self.out_proj = nn.Linear(dim, dim, bias=False)
        self.classifier = nn.Linear(dim, num_targets, bias=False)

    def attend(self, tokens: torch.Tensor) -> torch.Tensor:
        b, length, d = tokens.shape
        h = self.num_heads

        def split(t):
            return t.view(b, -1, h, d // h).transpose(1, 2)

        q = split(self.q_proj(self.query.expand(b, -1, -1)))
        k, v = split(self.k_proj(tokens)), split(self.v_proj(tokens))
        pooled = F.scaled_dot_product_attention(q, k, v)  # (B, h, 1, d/h)
        return self.out_proj(pooled.transpose(1, 2).reshape(b, d))

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.classifier(self.attend(tokens))


HEADS = {"linear_meanpool": LinearMeanPool, "query_attention": QueryAttentionHead, "linear_frozen": LinearMeanPool}
MODE_HEAD = {"finetune": "linear_meanpool", "frozen": "query_attention", "linear": "linear_frozen"}


def build_head(variant: str, dim: int, num_targets: int, num_heads: int = 16) -> nn.Module:
    if variant not in HEADS:
        raise ValueError(f"unknown head variant {variant!r}")
    if variant == "query_attention":
        return QueryAttentionHead(dim, num_targets, num_heads)
    return HEADS[variant](dim, num_targets)


class DownstreamModel(nn.Module):
    def __init__(self, encoder: nn.Module, head: nn.Module):
        super().__init__()
        self.encoder = encoder
        self.head = head

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder(x).tokens)
