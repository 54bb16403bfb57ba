import math

import torch


@torch.no_grad()
def sinkhorn_knopp(logits: torch.Tensor, num_iters: int = 3, epsilon: float = 0.05) -> torch.Tensor:
    """Balanced soft assignment of B samples to K clusters.

    Alternately rescales clusters to total mass 1/K and samples to total
    mass 1/B, then rescales so every sample's row sums to one. The
    normalizations run in log space (max-shifted log-sum-exp), so sharp
    logits such as cosine / (temperature * epsilon) cannot underflow a
    whole cluster to zero.

    Args:
        logits: (B, K) similarity scores.
        num_iters: number of row/column normalization rounds.
        epsilon: entropic regularization; smaller gives sharper assignments.

    Returns:
        (B, K) assignment matrix whose rows sum to one.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if logits.dim() != 2 or logits.shape[0] < 1 or logits.shape[1] < 1:
        raise ValueError(f"expected non-empty (B, K) logits, got {tuple(logits.shape)}")
    if not torch.isfinite(logits).all():
        raise ValueError("sinkhorn_knopp received non-finite logits")
    B, K = logits.shape
    log_q = (logits.double() / epsilon).t()  # (K, B); float64 keeps row sums exact to ~1e-15
    log_q = log_q - torch.logsumexp(log_q.flatten(), dim=0)
    for _ in range(num_iters):
        log_q = log_q - torch.logsumexp(log_q, dim=1, keepdim=True) - math.log(K)
        log_q = log_q - torch.logsumexp(log_q, dim=0, keepdim=True) - math.log(B)
    return torch.exp(log_q + math.log(B)).t().to(logits.dtype)
