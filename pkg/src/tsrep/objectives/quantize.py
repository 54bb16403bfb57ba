"""Non-gradient cluster state: online k-means codebooks and prototype banks."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class Codebook(nn.Module):
    """Online k-means codebook updated by EMA toward assigned feature means.

    Entries never receive gradients. Unused entries stay where they are.
    """

    def __init__(self, num_entries: int, dim: int, ema_momentum: float = 0.9):
        super().__init__()
        self.ema_momentum = ema_momentum
        self.register_buffer("entries", torch.randn(num_entries, dim))
        self.register_buffer("usage_counts", torch.zeros(num_entries))

    @torch.no_grad()
    def assign(self, features: torch.Tensor) -> torch.Tensor:
        """Index of the nearest entry (Euclidean) for each row of ``features``."""
        flat = features.reshape(-1, features.shape[-1]).to(self.entries.dtype)
        dist = torch.cdist(flat, self.entries)
        return dist.argmin(dim=1).reshape(features.shape[:-1])

    @torch.no_grad()
    def update(self, features: torch.Tensor, indices: torch.Tensor) -> None:
        flat = features.reshape(-1, features.shape[-1]).to(self.entries.dtype)
        idx = indices.reshape(-1)
        k = self.entries.shape[0]
        counts = torch.bincount(idx, minlength=k).to(self.entries.dtype)
        sums = torch.zeros_like(self.entries).index_add_(0, idx, flat)
        used = counts > 0
        means = sums[used] / counts[used].unsqueeze(1)
        m = self.ema_momentum
        self.entries[used] = m * self.entries[used] + (1.0 - m) * means
        self.usage_counts += counts


class PrototypeBank(nn.Module):
    """Unit-norm prototypes updated from Sinkhorn assignments after a freeze period."""

    def __init__(self, num_prototypes: int, dim: int, momentum: float = 0.99, freeze_steps: int = 300, temperature: float = 0.1):
        super().__init__()
        self.momentum = momentum
        self.freeze_steps = freeze_steps
        self.temperature = temperature
        self.register_buffer("prototypes", F.normalize(torch.randn(num_prototypes, dim), dim=1))
        self.register_buffer("step_count", torch.zeros(()))

    def logits(self, features: torch.Tensor) -> torch.Tensor:
        # snapshot: update() rewrites the buffer in place before backward runs
        return features @ self.prototypes.clone().t() / self.temperature

    @torch.no_grad()
    def update(self, features: torch.Tensor, assignments: torch.Tensor) -> None:
        """features: (N, D) unit-norm teacher features; assignments: (N, K)."""
        if int(self.step_count.item()) < self.freeze_steps or self.momentum >= 1.0:
            return
        new = F.normalize(assignments.t().to(features.dtype) @ features, dim=1)
        m = self.momentum
        self.prototypes.copy_(F.normalize(m * self.prototypes + (1.0 - m) * new, dim=1))

    @torch.no_grad()
    def tick(self) -> None:
        self.step_count += 1
