"""Shared encoder: convolutional stem followed by a sequential backbone."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import BackboneConfig, ConfigError, EncoderConfig, StemConfig
from .net1d import Net1DBackbone
from .ssm import SSMBackbone
from .transformer import TransformerBackbone


@dataclass
class EncoderOutput:
    tokens: torch.Tensor  # (B, L', model_dim)
    per_layer: Optional[list] = None  # stem layers then backbone layers, each (B, L', dim)
    stem_tokens: Optional[torch.Tensor] = None


class StemLayer(nn.Module):
    def __init__(self, in_ch, out_ch, kernel, stride, dilation, batch_norm, causal):
        super().__init__()
        self.conv = nn.Conv1d(in_ch, out_ch, kernel, stride=stride, dilation=dilation)
        self.norm = nn.BatchNorm1d(out_ch) if batch_norm else nn.Identity()
        self.stride = stride
        total = dilation * (kernel - 1)
        self.pad = (total, 0) if causal else (total // 2, total - total // 2)

    def forward(self, x):
        length = x.shape[-1]
        y = self.conv(F.pad(x, self.pad))[..., : length // self.stride]
        return F.gelu(self.norm(y))


class ConvStem(nn.Module):
    """Four conv layers; output length is input length // stride product."""

    def __init__(self, cfg: StemConfig, model_dim: int, causal: bool = False):
        super().__init__()
        chans = (cfg.in_channels,) + cfg.out_dims
        self.layers = nn.ModuleList(
            [
                StemLayer(chans[i], chans[i + 1], cfg.kernel_sizes[i], cfg.strides[i], cfg.dilations[i], cfg.use_batch_norm, causal)
                for i in range(4)
            ]
        )
        self.proj = nn.Linear(cfg.out_dims[-1], model_dim) if cfg.out_dims[-1] != model_dim else nn.Identity()

    def forward(self, x: torch.Tensor, capture: bool = False):
        outs = []
        for layer in self.layers:
            x = layer(x)
            if capture:
                outs.append(x.transpose(1, 2))
        return self.proj(x.transpose(1, 2)), outs


def build_backbone(cfg: BackboneConfig, in_dim: int) -> nn.Module:
    if cfg.family == "ssm":
        return SSMBackbone(cfg.model_dim, cfg.depth, cfg.state_dim, cfg.dropout, cfg.causal)
    if cfg.family == "transformer":
        return TransformerBackbone(cfg.model_dim, cfg.depth, cfg.num_heads, cfg.ff_mult, cfg.dropout, cfg.causal)
    if cfg.family == "net1d":
        return Net1DBackbone(in_dim, cfg.model_dim, cfg.depth, cfg.net1d_widths, cfg.net1d_kernel, cfg.dropout, cfg.causal)
    raise ConfigError(f"unknown backbone family {cfg.family!r}")


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        bb = cfg.backbone
        # net1d consumes raw stem channels; the others need model_dim tokens
        stem_out = cfg.stem.out_dims[-1] if bb.family == "net1d" else bb.model_dim
        self.stem = ConvStem(cfg.stem, stem_out, bb.causal)
        self.backbone = build_backbone(bb, stem_out)
        self.token_dim = stem_out

    @property
    def causal(self) -> bool:
        return self.cfg.backbone.causal

    @property
    def model_dim(self) -> int:
        return self.cfg.backbone.model_dim

    def num_tokens(self, length: int) -> int:
        for s in self.cfg.stem.strides:
            length //= s
        return length

    def embed(self, x: torch.Tensor, capture: bool = False):
        """Stem only: (B, C, T) -> (B, L', token_dim)."""
        if x.dim() != 3 or x.shape[1] != self.cfg.stem.in_channels:
            raise ValueError(f"expected input (B, {self.cfg.stem.in_channels}, T), got {tuple(x.shape)}")
        return self.stem(x, capture)

    def contextualize(self, tokens: torch.Tensor, capture: bool = False):
        return self.backbone(tokens, capture)

    def forward(
        self,
        x: torch.Tensor,
        capture_layers: bool = False,
        token_mask: Optional[torch.Tensor] = None,
        mask_embedding: Optional[torch.Tensor] = None,
    ) -> EncoderOutput:
        """Encode a batch; masked token positions are replaced before the backbone."""
        tokens, stem_layers = self.embed(x, capture_layers)
        stem_tokens = tokens
        if token_mask is not None:
            fill = mask_embedding if mask_embedding is not None else torch.zeros_like(tokens[0, 0])
            tokens = torch.where(token_mask.unsqueeze(-1), fill.to(tokens.dtype), tokens)
        out, bb_layers = self.contextualize(tokens, capture_layers)
        return EncoderOutput(out, stem_layers + bb_layers if capture_layers else None, stem_tokens)

    def parameter_groups(self) -> dict:
        return {"stem": list(self.stem.parameters()), "backbone": list(self.backbone.parameters())}


def build_encoder(cfg: EncoderConfig, seed: Optional[int] = None) -> Encoder:
    """Construct an encoder with seeded, reproducible initialization."""
    seed = cfg.seed if seed is None else seed
    if cfg.stem.out_dims[-1] <= 0:
        raise ConfigError("stem output dimension must be positive")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return Encoder(cfg)


@torch.no_grad()
def encode(encoder: Encoder, batch, capture_layers: bool = False) -> EncoderOutput:
    """Evaluation-mode forward (dropout off, running batch-norm statistics)."""
    was_training = encoder.training
    encoder.eval()
    try:
        x = torch.as_tensor(batch, dtype=next(encoder.parameters()).dtype)
        return encoder(x, capture_layers)
    finally:
        encoder.train(was_training)


def count_parameters(encoder: Encoder) -> dict:
    groups = {name: sum(p.numel() for p in params) for name, params in encoder.parameter_groups().items()}
    groups["total"] = sum(p.numel() for p in encoder.parameters())
    return groups
