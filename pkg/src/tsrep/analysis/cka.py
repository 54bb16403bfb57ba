"""Centered kernel alignment with a Gaussian RBF kernel."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch


@dataclass
class CKAMatrix:
    labels: list
    values: np.ndarray  # [L, L]

    def __post_init__(self):
        if self.values.shape != (len(self.labels), len(self.labels)):
            raise ValueError(f"{len(self.labels)} labels for a {self.values.shape} matrix")


def _canonical_columns(x: np.ndarray) -> np.ndarray:
    # Reorder features by their values so that any feature permutation of x
    # yields the same array and therefore bitwise-identical distances.
    order = np.lexsort(x[::-1])
    return x[:, order]


def _sq_distances(x: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return 0.5 * (d2 + d2.T)


def rbf_gram(x, sigma: float = 1.0, sigma_mode: str = "median") -> np.ndarray:
    """RBF Gram matrix exp(-d^2 / (2 s^2)).

    ``sigma_mode="absolute"`` uses s = sigma. ``"median"`` scales the
    bandwidth by the data, s^2 = sigma^2 * median(off-diagonal d^2).
    """
    x = _canonical_columns(np.asarray(x, dtype=np.float64))
    d2 = _sq_distances(x)
    if sigma_mode == "absolute":
        s2 = sigma**2
    elif sigma_mode == "median":
        off = d2[~np.eye(len(d2), dtype=bool)]
        med = float(np.median(off)) if off.size else 0.0
        if med <= 0.0:
            # most rows coincide; fall back to the mean so distinct rows still count
            med = float(off.mean()) if off.size else 0.0
        if med <= 0.0:
            return np.ones_like(d2)
        s2 = sigma**2 * med
    else:
        raise ValueError(f"unknown sigma_mode {sigma_mode!r}")
    return np.exp(-d2 / (2.0 * s2))


def linear_gram(x) -> np.ndarray:
    """Linear-kernel Gram matrix of column-centered features."""
    x = _canonical_columns(np.asarray(x, dtype=np.float64))
    x = x - x.mean(0, keepdims=True)
    return x @ x.T


def gram(x, kernel: str = "rbf", sigma: float = 1.0, sigma_mode: str = "median") -> np.ndarray:
    if kernel == "rbf":
        return rbf_gram(x, sigma, sigma_mode)
    if kernel == "linear":
        return linear_gram(x)
    raise ValueError(f"unknown kernel {kernel!r}")


class _GramStats:
    """Per-Gram quantities reused by every HSIC evaluation against it."""

    def __init__(self, k: np.ndarray, estimator: str):
        n = k.shape[0]
        if estimator == "unbiased" and n < 4:
            estimator = "biased"  # the unbiased form needs n >= 4
        self.n = n
        self.estimator = estimator
        if estimator == "biased":
            self.mat = k - k.mean(0, keepdims=True) - k.mean(1, keepdims=True) + k.mean()
        elif estimator == "unbiased":
            self.mat = k.copy()
            np.fill_diagonal(self.mat, 0.0)
            self.rows = self.mat.sum(1)
            self.total = float(self.rows.sum())
        else:
            raise ValueError(f"unknown HSIC estimator {estimator!r}")


def _hsic(a: _GramStats, b: _GramStats) -> float:
    n = a.n
    if a.estimator == "biased":
        return float(np.sum(a.mat * b.mat)) / (n - 1) ** 2
    # Song et al. (2012) unbiased estimator on zero-diagonal Grams
    trace = float(np.sum(a.mat * b.mat))
    return (trace + a.total * b.total / ((n - 1) * (n - 2)) - 2.0 / (n - 2) * float(a.rows @ b.rows)) / (n * (n - 3))


def _cka(a: _GramStats, b: _GramStats) -> float:
    aa, bb = _hsic(a, a), _hsic(b, b)
    if aa <= 0.0 or bb <= 0.0:
        raise ValueError("degenerate Gram matrix (no spread between samples)")
    return float(np.clip(_hsic(a, b) / np.sqrt(aa * bb), 0.0, 1.0))


def cka_from_grams(k: np.ndarray, l: np.ndarray, estimator: str = "unbiased") -> float:
    return _cka(_GramStats(k, estimator), _GramStats(l, estimator))


def rbf_cka(x, y, sigma: float = 1.0, sigma_mode: str = "median", estimator: str = "unbiased") -> float:
    """CKA between two representations of the same N samples.

    x: [N, D1], y: [N, D2]. ``estimator`` selects the HSIC estimate:
    "unbiased" (default; near 0 for independent data) or "biased" (the
    plain centered form, which carries an O(1/N) positive offset).
    Degenerate input (all rows identical) is defined as 1 when x equals y
    and is an error otherwise.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or len(x) != len(y):
        raise ValueError(f"expected [N, D] arrays with equal N, got {x.shape} and {y.shape}")
    if len(x) < 3:
        raise ValueError("CKA needs at least 3 samples")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    degenerate = (x == x[0]).all() or (y == y[0]).all()
    if degenerate:
        if x.shape == y.shape and np.array_equal(x, y):
            return 1.0
        raise ValueError("degenerate representation (all rows identical)")
    if x.shape == y.shape and np.array_equal(x, y):
        return 1.0
    return cka_from_grams(rbf_gram(x, sigma, sigma_mode), rbf_gram(y, sigma, sigma_mode), estimator)


def standardize(x: np.ndarray) -> np.ndarray:
    """Per-feature z-normalization; constant features become 0."""
    x = np.asarray(x, dtype=np.float64)
    std = x.std(0)
    return (x - x.mean(0)) / np.where(std > 0, std, 1.0)


def layer_cka_matrix(
    activations: Sequence[np.ndarray],
    labels: Optional[Sequence[str]] = None,
    sigma: float = 1.0,
    sigma_mode: str = "median",
    standardize_features: bool = True,
    estimator: str = "unbiased",
    kernel: str = "rbf",
) -> CKAMatrix:
    """All-pairs CKA over layers sharing one sample set; each Gram is built once."""
    labels = list(labels) if labels is not None else [f"L{i}" for i in range(len(activations))]
    if len(labels) != len(activations):
        raise ValueError("one label per layer required")
    stats = []
    for a, name in zip(activations, labels):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or len(a) < 3:
            raise ValueError(f"layer {name!r} needs an [N >= 3, D] array, got {a.shape}")
        stats.append(_GramStats(gram(standardize(a) if standardize_features else a, kernel, sigma, sigma_mode), estimator))
    n = len(stats)
    self_h = [_hsic(st, st) for st in stats]
    vals = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            if np.array_equal(activations[i], activations[j]):
                v = 1.0
            elif self_h[i] <= 0.0 or self_h[j] <= 0.0:
                v = 0.0
            else:
                v = float(np.clip(_hsic(stats[i], stats[j]) / np.sqrt(self_h[i] * self_h[j]), 0.0, 1.0))
            vals[i, j] = vals[j, i] = v
    return CKAMatrix(labels, vals)


def layer_labels(encoder) -> list:
    n_stem = len(encoder.stem.layers)
    n_bb = encoder.cfg.backbone.depth
    return [f"stem{i + 1}" for i in range(n_stem)] + [f"{encoder.cfg.backbone.family}{i + 1}" for i in range(n_bb)]


@torch.no_grad()
def layer_activations(
    encoder,
    values,
    pooling: str = "mean",
    num_samples: Optional[int] = None,
    seed: int = 0,
    batch_size: int = 64,
) -> list:
    """Per-layer probe activations, each [N, D].

    ``pooling="mean"`` averages over tokens per window. ``"tokens"`` pools
    all tokens of all windows and keeps ``num_samples`` of them (same
    positions for every layer).
    """
    if pooling not in ("mean", "tokens"):
        raise ValueError(f"unknown pooling {pooling!r}")
    values = np.asarray(values, dtype=np.float32)
    rng = np.random.default_rng(seed)
    if pooling == "mean" and num_samples is not None and num_samples < len(values):
        values = values[np.sort(rng.choice(len(values), num_samples, replace=False))]
    was_training = encoder.training
    encoder.eval()
    chunks = None
    try:
        for start in range(0, len(values), batch_size):
            layers = encoder(torch.from_numpy(values[start : start + batch_size]), capture_layers=True).per_layer
            layers = [t.mean(1) if pooling == "mean" else t.reshape(-1, t.shape[-1]) for t in layers]
            if chunks is None:
                chunks = [[] for _ in layers]
            for c, t in zip(chunks, layers):
                c.append(t.double().numpy())
    finally:
        encoder.train(was_training)
    acts = [np.concatenate(c) for c in chunks]
    if pooling == "tokens" and num_samples is not None and num_samples < len(acts[0]):
        keep = np.sort(rng.choice(len(acts[0]), num_samples, replace=False))
        acts = [a[keep] for a in acts]
    return acts


STAGES = ("early", "mid", "late")


def stage_index(encoder, stage: str) -> int:
    """Index into the captured layer list: first stem layer, middle or last backbone layer."""
    n_stem = len(encoder.stem.layers)
    depth = encoder.cfg.backbone.depth
    if stage == "early":
        return 0
    if stage == "mid":
        return n_stem + (depth - 1) // 2
    if stage == "late":
        return n_stem + depth - 1
    raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")


def inter_model_cka(
    encoders: Sequence,
    stage: str,
    probe_data,
    labels: Optional[Sequence[str]] = None,
    sigma: float = 1.0,
    sigma_mode: str = "median",
    pooling: str = "mean",
    num_samples: Optional[int] = None,
    seed: int = 0,
    estimator: str = "unbiased",
) -> CKAMatrix:
    """Pairwise CKA across models at one depth stage on shared probe windows."""
    acts = []
    for enc in encoders:
        layers = layer_activations(enc, probe_data, pooling, num_samples, seed)
        acts.append(layers[stage_index(enc, stage)])
    labels = list(labels) if labels is not None else [f"model{i}" for i in range(len(encoders))]
    return layer_cka_matrix(acts, labels, sigma, sigma_mode, estimator=estimator)


def dump_activations(activations: Sequence[np.ndarray], labels: Sequence[str], out_dir) -> Path:
    """Write per-layer activations as float32 blobs plus an ``activations.json`` shape index."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = []
    for i, (a, name) in enumerate(zip(activations, labels)):
        fname = f"layer_{i:03d}.f32"
        np.ascontiguousarray(a, dtype="<f4").tofile(out_dir / fname)
        index.append({"label": str(name), "file": fname, "shape": list(np.shape(a))})
    (out_dir / "activations.json").write_text(json.dumps(index, indent=2) + "\n")
    return out_dir


def load_activations(in_dir) -> tuple:
    """Inverse of :func:`dump_activations`: ``(activations, labels)``."""
    in_dir = Path(in_dir)
    index = json.loads((in_dir / "activations.json").read_text())
    acts, labels = [], []
    for item in index:
        raw = np.fromfile(in_dir / item["file"], dtype="<f4")
        if raw.size != int(np.prod(item["shape"])):
            raise ValueError(f"{item['file']}: {raw.size} values, shape {item['shape']}")
        acts.append(raw.reshape(item["shape"]).astype(np.float64))
        labels.append(item["label"])
    return acts, labels
