"""Deep residual 1-D CNN backbone. Stages keep the token rate set by the stem."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class PaddedConv1d(nn.Conv1d):
    """Conv1d with same-length output; causal mode pads only on the left."""

    def __init__(self, in_ch, out_ch, kernel_size, dilation=1, causal=False, bias=True):
        super().__init__(in_ch, out_ch, kernel_size, dilation=dilation, bias=bias)
        self.causal = causal
        total = dilation * (kernel_size - 1)
        self.pad = (total, 0) if causal else (total // 2, total - total // 2)

    def forward(self, x):
        return super().forward(F.pad(x, self.pad))


class ResidualStage(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, dropout: float, causal: bool):
        super().__init__()
        self.bn1 = nn.BatchNorm1d(in_ch)
        self.conv1 = PaddedConv1d(in_ch, out_ch, kernel, causal=causal)
        self.bn2 = nn.BatchNorm1d(out_ch)
        self.conv2 = PaddedConv1d(out_ch, out_ch, kernel, causal=causal)
        self.dropout = nn.Dropout(dropout)
        self.shortcut = nn.Conv1d(in_ch, out_ch, 1, bias=False) if in_ch != out_ch else nn.Identity()

    def forward(self, x):
        y = self.conv1(F.gelu(self.bn1(x)))
        y = self.conv2(self.dropout(F.gelu(self.bn2(y))))
        return self.shortcut(x) + y


def default_widths(model_dim: int, depth: int = 7) -> tuple:
    ramp = [8, 4, 4, 2, 2, 1, 1]
    if depth != 7:
        ramp = [max(1, 2 ** ((depth - 1 - i) // 2)) for i in range(depth)]
    return tuple(max(1, model_dim // r) for r in ramp[:depth])


class Net1DBackbone(nn.Module):
    """Channels-last wrapper: input and output are (B, L, C)."""

    def __init__(self, in_dim: int, model_dim: int, depth: int = 7, widths=None, kernel: int = 7, dropout: float = 0.2, causal: bool = False):
        super().__init__()
        widths = tuple(widths) if widths else default_widths(model_dim, depth)
        if len(widths) != depth or widths[-1] != model_dim:
            raise ValueError("net1d widths must have one entry per stage and end at model_dim")
        self.causal = causal
        chans = (in_dim,) + widths
        self.layers = nn.ModuleList(
            [ResidualStage(chans[i], chans[i + 1], kernel, dropout, causal) for i in range(depth)]
        )

    def forward(self, x: torch.Tensor, capture: bool = False):
        h = x.transpose(1, 2)
        outs = []
        for layer in self.layers:
            h = layer(h)
            if capture:
                outs.append(h.transpose(1, 2))
        return h.transpose(1, 2), outs
