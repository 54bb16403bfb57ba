"""Diagonal state-space layers (S4D parameterization).

The convolution kernel of a diagonal SSM with complex eigenvalues ``A``,
input/output vectors folded into ``C``, and step ``dt`` is

    K[l] = 2 * Re( sum_n C'_n * exp(dt * A_n * l) ),  C'_n = C_n (exp(dt A_n) - 1) / A_n

(zero-order-hold discretization, conjugate pairs folded into the factor 2).
The kernel is applied by FFT convolution. A bidirectional layer keeps a
second kernel acting on future samples, which equals running it over the
time-reversed sequence and summing both directions.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


class S4DKernel(nn.Module):
    """Generates per-channel SSM convolution kernels.

    Args:
        d_model: number of independent channels (H).
        state_dim: real state size N; N/2 complex modes are kept.
        channels: number of kernels per channel (2 for bidirectional).
    """

    def __init__(self, d_model: int, state_dim: int = 8, channels: int = 1, dt_min: float = 1e-3, dt_max: float = 1e-1):
        super().__init__()
        n = state_dim // 2
        log_dt = torch.rand(d_model) * (math.log(dt_max) - math.log(dt_min)) + math.log(dt_min)
        self.log_dt = nn.Parameter(log_dt)
        # S4D-Lin initialization
        self.log_A_real = nn.Parameter(torch.log(0.5 * torch.ones(d_model, n)))
        self.A_imag = nn.Parameter(math.pi * torch.arange(n, dtype=torch.float32).repeat(d_model, 1))
        C = torch.randn(channels, d_model, n, dtype=torch.cfloat)
        self.C = nn.Parameter(torch.view_as_real(C))

    def forward(self, length: int) -> torch.Tensor:
        """Return kernels of shape (channels, H, length)."""
        dt = torch.exp(self.log_dt)
        C = torch.view_as_complex(self.C.contiguous())
        A = -torch.exp(self.log_A_real) + 1j * self.A_imag
        dtA = A * dt.unsqueeze(-1)  # (H, n)
        C = C * (torch.exp(dtA) - 1.0) / A
        steps = torch.arange(length, device=dt.device, dtype=dt.dtype)
        vander = torch.exp(dtA.unsqueeze(-1) * steps)  # (H, n, L)
        return 2 * torch.einsum("chn,hnl->chl", C, vander).real


def fft_conv(u: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """Linear convolution along the last axis via a length-2L FFT.

    u: (B, H, L). k: (H, 2L) laid out circularly; entries [0, L) act on
    current and past samples, entries [L, 2L) on future samples.
    """
    length = u.shape[-1]
    n = 2 * length
    k_f = torch.fft.rfft(k, n=n)
    u_f = torch.fft.rfft(u, n=n)
    return torch.fft.irfft(u_f * k_f, n=n)[..., :length]


class S4DLayer(nn.Module):
    """Sequence mixing by a diagonal SSM; input and output are (B, L, H)."""

    def __init__(self, d_model: int, state_dim: int = 8, bidirectional: bool = True):
        super().__init__()
        self.bidirectional = bidirectional
        self.kernel = S4DKernel(d_model, state_dim, channels=2 if bidirectional else 1)
        self.D = nn.Parameter(torch.randn(d_model))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        u = x.transpose(1, 2)  # (B, H, L)
        length = u.shape[-1]
        k = self.kernel(length)
        # backward kernel k[1][m] weights the sample m + 1 steps ahead
        future = k[1].flip(-1) if self.bidirectional else torch.zeros_like(k[0])
        y = fft_conv(u, torch.cat([k[0], future], dim=-1))
        y = y + u * self.D.unsqueeze(-1)
        return y.transpose(1, 2)


class S4Block(nn.Module):
    """SSM -> GELU -> dropout -> gated linear output, residual, post-LayerNorm.

    No pre-normalization and no batch norm inside the block.
    """

    def __init__(self, d_model: int, state_dim: int = 8, dropout: float = 0.2, bidirectional: bool = True):
        super().__init__()
        self.ssm = S4DLayer(d_model, state_dim, bidirectional)
        self.activation = nn.GELU()
        self.output_linear = nn.Linear(d_model, 2 * d_model)
        self.dropout = nn.Dropout(dropout)
        self.norm = nn.LayerNorm(d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.activation(self.ssm(x))
        y = F.glu(self.output_linear(y), dim=-1)
        y = self.dropout(y)
        return self.norm(x + y)


class SSMBackbone(nn.Module):
    def __init__(self, d_model: int, depth: int = 4, state_dim: int = 8, dropout: float = 0.2, causal: bool = False):
        super().__init__()
        self.causal = causal
        self.layers = nn.ModuleList(
            [S4Block(d_model, state_dim, dropout, bidirectional=not causal) for _ in range(depth)]
        )

    def forward(self, x: torch.Tensor, capture: bool = False):
        outs = []
        for layer in self.layers:
            x = layer(x)
            if capture:
                outs.append(x)
        return x, outs
