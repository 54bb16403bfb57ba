"""Token maskers: span masking and JEPA-style multi-block masking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class MaskError(ValueError):
    pass


@dataclass
class SpanMaskSpec:
    midpoint_prob: float = 0.065
    span_len: int = 10


def expected_span_coverage(spec: SpanMaskSpec) -> float:
    """Analytic masked fraction for positions at least half a span from either edge."""
    return 1.0 - (1.0 - spec.midpoint_prob) ** spec.span_len


def span_masks(num: int, seq_len: int, spec: SpanMaskSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw ``num`` independent span masks, shape (num, seq_len), dtype bool.

    Every position is a span midpoint with probability ``midpoint_prob``; a
    midpoint ``m`` masks ``[m - span_len // 2, m - span_len // 2 + span_len)``
    clipped to the sequence.
    """
    if seq_len < spec.span_len:
        raise MaskError(f"sequence length {seq_len} shorter than span {spec.span_len}")
    mids = rng.random((num, seq_len)) < spec.midpoint_prob
    left = spec.span_len // 2
    right = spec.span_len - left - 1
    # position t is covered by any midpoint in [t - right, t + left]
    padded = np.zeros((num, seq_len + spec.span_len + 1), dtype=np.int32)
    padded[:, right + 1 : right + 1 + seq_len] = mids
    csum = np.cumsum(padded, axis=1)
    t = np.arange(seq_len)
    hits = csum[:, t + right + 1 + left] - csum[:, t]
    return hits > 0


def sample_span_mask(seq_len: int, spec: SpanMaskSpec = SpanMaskSpec(), seed: int = 0) -> np.ndarray:
    return span_masks(1, seq_len, spec, np.random.default_rng(seed))[0]


@dataclass
class BlockMaskSpec:
    context_frac_range: tuple = (0.85, 1.00)
    num_pred_blocks: int = 4
    pred_frac_range: tuple = (0.15, 0.20)
    min_context_tokens: int = 64
    allow_overlap: bool = False
    max_attempts: int = 100


@dataclass
class MultiBlockMask:
    context_block: tuple  # (start, end) of the sampled context region
    context_indices: np.ndarray  # context region minus prediction positions
    pred_blocks: list = field(default_factory=list)  # [(start, end), ...]
    fallback: bool = False  # block lengths were shrunk to the minimum

    def pred_indices(self) -> np.ndarray:
        return np.concatenate([np.arange(s, e) for s, e in self.pred_blocks])


def _block_bounds(seq_len: int, spec: BlockMaskSpec) -> tuple:
    lo = math.ceil(spec.pred_frac_range[0] * seq_len)
    hi = math.floor(spec.pred_frac_range[1] * seq_len)
    clo = max(math.ceil(spec.context_frac_range[0] * seq_len), 1)
    chi = min(math.floor(spec.context_frac_range[1] * seq_len), seq_len)
    return lo, max(lo, hi), clo, max(clo, chi)


def _place_disjoint(lengths, seq_len, rng):
    """Uniformly distribute the free space into gaps around the blocks."""
    free = seq_len - sum(lengths)
    cuts = np.sort(rng.integers(0, free + 1, size=len(lengths)))
    gaps = np.diff(np.concatenate([[0], cuts]))
    blocks, pos = [], 0
    for gap, length in zip(gaps, lengths):
        pos += int(gap)
        blocks.append((pos, pos + int(length)))
        pos += int(length)
    order = rng.permutation(len(blocks))
    return [blocks[i] for i in order]


def _place_any(lengths, seq_len, rng):
    return [(int(s), int(s) + int(l)) for l in lengths for s in [rng.integers(0, seq_len - l + 1)]]


class MultiBlockMasker:
    """Stateful wrapper that counts how often the shrink fallback fires."""

    def __init__(self, spec: BlockMaskSpec = BlockMaskSpec()):
        self.spec = spec
        self.fallback_count = 0
        self.calls = 0

    def __call__(self, seq_len: int, rng: np.random.Generator) -> MultiBlockMask:
        mask = _sample_multiblock(seq_len, self.spec, rng)
        self.calls += 1
        self.fallback_count += int(mask.fallback)
        return mask


def _sample_multiblock(seq_len: int, spec: BlockMaskSpec, rng: np.random.Generator) -> MultiBlockMask:
    lo, hi, clo, chi = _block_bounds(seq_len, spec)
    n = spec.num_pred_blocks
    if lo < 1 or (not spec.allow_overlap and n * lo > seq_len):
        raise MaskError(f"{n} prediction blocks of length >= {lo} cannot fit in {seq_len} tokens")
    place = _place_any if spec.allow_overlap else _place_disjoint

    def attempt(lengths):
        blocks = place(lengths, seq_len, rng)
        ctx_len = int(rng.integers(clo, chi + 1))
        ctx_start = int(rng.integers(0, seq_len - ctx_len + 1))
        keep = np.zeros(seq_len, dtype=bool)
        keep[ctx_start : ctx_start + ctx_len] = True
        for s, e in blocks:
            keep[s:e] = False
        return blocks, (ctx_start, ctx_start + ctx_len), np.flatnonzero(keep)

    for _ in range(spec.max_attempts):
        if not spec.allow_overlap:
            # resample lengths until they fit side by side
            lengths = rng.integers(lo, hi + 1, size=n)
            if lengths.sum() > seq_len:
                continue
        else:
            lengths = rng.integers(lo, hi + 1, size=n)
        blocks, ctx, keep = attempt(lengths)
        if len(keep) >= spec.min_context_tokens:
            return MultiBlockMask(ctx, keep, blocks, fallback=False)
    lengths = np.full(n, lo)
    for _ in range(spec.max_attempts):
        blocks, ctx, keep = attempt(lengths)
        if len(keep) >= spec.min_context_tokens:
            return MultiBlockMask(ctx, keep, blocks, fallback=True)
    raise MaskError(
        f"could not retain {spec.min_context_tokens} context tokens in {seq_len} after shrinking blocks"
    )


def sample_multiblock_mask(seq_len: int, spec: BlockMaskSpec = BlockMaskSpec(), seed: int = 0) -> MultiBlockMask:
    return _sample_multiblock(seq_len, spec, np.random.default_rng(seed))
