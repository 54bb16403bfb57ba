"""Loss kernels shared by the objective modules.

Each function takes already-computed student/teacher tensors so it can be
checked in isolation against scalar re-implementations.
"""

from __future__ import annotations

import logging
from typing import Sequence

import torch
import torch.nn.functional as F

log = logging.getLogger(__name__)


def _zero_like_graph(t: torch.Tensor) -> torch.Tensor:
    return t.sum() * 0.0


def masked_smooth_l1(prediction: torch.Tensor, target: torch.Tensor, mask: torch.Tensor, beta: float = 1.0) -> torch.Tensor:
    """Smooth-l1 averaged over masked positions and feature dims.

    prediction/target: (B, L, D); mask: (B, L) bool.
    """
    if not mask.any():
        log.warning("empty mask, returning zero loss")
        return _zero_like_graph(prediction)
    return F.smooth_l1_loss(prediction[mask], target[mask], beta=beta)


def data2vec_loss(prediction, target, mask, beta: float = 1.0) -> torch.Tensor:
    return masked_smooth_l1(prediction, target, mask, beta)


def data2vec_targets(teacher_layers: Sequence[torch.Tensor], top_k: int = 2) -> torch.Tensor:
    """Layer-normalized mean of the top ``top_k`` teacher backbone layers."""
    avg = torch.stack(list(teacher_layers[-top_k:])).mean(0)
    return F.layer_norm(avg, avg.shape[-1:])


def dinosr_loss(logits: Sequence[torch.Tensor], labels: Sequence[torch.Tensor], mask: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """Mean cross-entropy over masked positions and codebooks.

    logits: one (B, L, K_i) tensor per codebook; labels: matching (B, L) indices.
    """
    if not mask.any():
        log.warning("empty mask, returning zero loss")
        return _zero_like_graph(logits[0])
    terms = [F.cross_entropy(lg[mask] / temperature, lb[mask]) for lg, lb in zip(logits, labels)]
    return torch.stack(terms).mean()


def jepa_loss(prediction: torch.Tensor, target: torch.Tensor, positions: torch.Tensor, beta: float = 1.0) -> torch.Tensor:
    """Smooth-l1 over the listed token positions. prediction/target: (B, L, D)."""
    if positions.numel() == 0:
        raise ValueError("JEPA loss needs at least one prediction position")
    return F.smooth_l1_loss(prediction[:, positions], target[:, positions], beta=beta)


def jepa_targets(teacher_top: torch.Tensor) -> torch.Tensor:
    """Normalize the top teacher layer, then the aggregated target again."""
    dim = teacher_top.shape[-1:]
    per_layer = F.layer_norm(teacher_top, dim)
    return F.layer_norm(per_layer, dim)


def info_nce(scores: torch.Tensor, positive: torch.Tensor) -> torch.Tensor:
    """Cross-entropy of the positive candidate. scores: (..., N); positive: (...) indices."""
    return F.cross_entropy(scores.reshape(-1, scores.shape[-1]), positive.reshape(-1))


def cpc_infonce(context: torch.Tensor, latents: torch.Tensor, heads: Sequence, num_steps: int = 14) -> torch.Tensor:
    """Within-sequence InfoNCE over future horizons 1..num_steps.

    For anchor t and horizon k the score of candidate j is
    ``heads[k-1](context[:, t]) . latents[:, j]``; every latent position of
    the same sequence is a candidate and ``j = t + k`` is the positive.
    The loss is the mean over all (anchor, horizon) pairs.

    context, latents: (B, L, D).
    """
    b, length, _ = context.shape
    if length < num_steps + 1:
        raise ValueError(f"sequence of {length} tokens too short for {num_steps} prediction steps")
    total, count = 0.0, 0
    for k in range(1, num_steps + 1):
        pred = heads[k - 1](context[:, : length - k])  # (B, L-k, D)
        scores = pred @ latents.transpose(1, 2)  # (B, L-k, L)
        positive = torch.arange(k, length, device=context.device).expand(b, -1)
        n = scores.shape[0] * scores.shape[1]
        total = total + info_nce(scores, positive) * n
        count += n
    return total / count


def soft_kl(targets: torch.Tensor, logits: torch.Tensor) -> torch.Tensor:
    """Per-row KL(targets || softmax(logits)); rows along the last axis."""
    log_p = F.log_softmax(logits, dim=-1)
    return (torch.xlogy(targets, targets) - targets * log_p).sum(-1)


def hubertpp_loss(student_logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor, alpha: float = 0.75) -> torch.Tensor:
    """alpha * KL on masked tokens + (1 - alpha) * KL on unmasked tokens.

    student_logits/targets: (B, L, K); mask: (B, L) bool. A group with no
    tokens contributes nothing.
    """
    kl = soft_kl(targets, student_logits)
    loss = _zero_like_graph(student_logits)
    if mask.any():
        loss = loss + alpha * kl[mask].mean()
    if (~mask).any():
        loss = loss + (1.0 - alpha) * kl[~mask].mean()
    return loss
