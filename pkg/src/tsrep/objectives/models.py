"""The five pretraining objectives as trainable modules.

Every objective owns a student encoder plus its heads. Objectives with a
teacher keep an EMA copy that never receives gradients; codebooks and
prototype banks are buffers updated without gradients. ``forward`` takes a
batch and a numpy Generator (the source of all mask randomness) and returns
``(loss, stats)``. ``update_state=False`` disables every non-gradient state
change, which is what validation uses.
"""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import ConfigError, EncoderConfig, ObjectiveConfig
from ..encoder import Encoder, S4Block, build_encoder
from .ema import ema_update_module, make_teacher
from .losses import (
    cpc_infonce,
    data2vec_loss,
    data2vec_targets,
    dinosr_loss,
    hubertpp_loss,
    jepa_loss,
    jepa_targets,
)
from .masking import BlockMaskSpec, MultiBlockMasker, SpanMaskSpec, span_masks
from .quantize import Codebook, PrototypeBank
from .sinkhorn import sinkhorn_knopp


class Objective(nn.Module):
    kind = "base"
    uses_teacher = True

    def __init__(self, encoder_cfg: EncoderConfig, cfg: ObjectiveConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder_cfg = encoder_cfg
        self.encoder: Encoder = build_encoder(encoder_cfg)
        self.teacher: Optional[nn.Module] = None

    # -- teacher handling -------------------------------------------------
    def _student_for_teacher(self) -> nn.Module:
        return self.encoder

    def _init_teacher(self) -> None:
        self.teacher = make_teacher(self._student_for_teacher())

    def momentum_at(self, step: int) -> float:
        c = self.cfg
        if c.ema_momentum_end is None or c.ema_schedule_steps <= 0:
            return c.ema_momentum
        frac = min(step / c.ema_schedule_steps, 1.0)
        return c.ema_momentum + (c.ema_momentum_end - c.ema_momentum) * frac

    def update_teacher(self, step: int) -> None:
        if self.teacher is not None:
            ema_update_module(self.teacher, self._student_for_teacher(), self.momentum_at(step))

    def train(self, mode: bool = True):
        super().train(mode)
        if self.teacher is not None:
            self.teacher.eval()
        return self

    # -- parameters -------------------------------------------------------
    def head_modules(self) -> list:
        return []

    def parameter_groups(self) -> dict:
        groups = self.encoder.parameter_groups()
        groups["head"] = [p for m in self.head_modules() for p in m.parameters()]
        groups["head"] += [p for n, p in self.named_parameters(recurse=False)]
        return groups

    def trainable_parameters(self) -> list:
        return [p for group in self.parameter_groups().values() for p in group if p.requires_grad]

    def forward(self, x: torch.Tensor, rng: np.random.Generator, update_state: bool = True):
        raise NotImplementedError

    def state_summary(self) -> dict:
        return {}


def _span_mask_tensor(cfg: ObjectiveConfig, batch: int, length: int, rng, device) -> torch.Tensor:
    m = span_masks(batch, length, SpanMaskSpec(cfg.mask_prob, cfg.mask_span), rng)
    return torch.from_numpy(m).to(device)


class Data2Vec(Objective):
    kind = "data2vec"

    def __init__(self, encoder_cfg, cfg):
        super().__init__(encoder_cfg, cfg)
        d = self.encoder.model_dim
        bb = encoder_cfg.backbone
        self.mask_embedding = nn.Parameter(torch.randn(self.encoder.token_dim) * 0.02)
        self.head = S4Block(d, bb.state_dim, bb.dropout, bidirectional=True)
        self._init_teacher()

    def head_modules(self):
        return [self.head]

    def forward(self, x, rng, update_state=True):
        with torch.no_grad():
            t_out = self.teacher(x, capture_layers=True)
            n_bb = len(self.teacher.backbone.layers)
            target = data2vec_targets(t_out.per_layer[-n_bb:], self.cfg.top_k_layers)
        mask = _span_mask_tensor(self.cfg, x.shape[0], target.shape[1], rng, x.device)
        out = self.encoder(x, token_mask=mask, mask_embedding=self.mask_embedding)
        pred = self.head(out.tokens)
        loss = data2vec_loss(pred, target, mask, self.cfg.smooth_l1_beta)
        return loss, {"mask_frac": mask.float().mean().item()}


class DinoSR(Objective):
    kind = "dinosr"

    def __init__(self, encoder_cfg, cfg):
        super().__init__(encoder_cfg, cfg)
        d = self.encoder.model_dim
        bb = encoder_cfg.backbone
        n_layers = len(cfg.codebook_sizes)
        if n_layers > bb.depth:
            raise ConfigError("more codebooks than backbone layers")
        self.mask_embedding = nn.Parameter(torch.randn(self.encoder.token_dim) * 0.02)
        self.head = S4Block(d, bb.state_dim, bb.dropout, bidirectional=True)
        self.classifiers = nn.ModuleList([nn.Linear(d, k) for k in cfg.codebook_sizes])
        self.codebooks = nn.ModuleList([Codebook(k, d, cfg.codebook_momentum) for k in cfg.codebook_sizes])
        self._init_teacher()

    def head_modules(self):
        return [self.head, self.classifiers]

    def forward(self, x, rng, update_state=True):
        n_cb = len(self.codebooks)
        with torch.no_grad():
            t_out = self.teacher(x, capture_layers=True)
            layers = [F.layer_norm(h, h.shape[-1:]) for h in t_out.per_layer[-n_cb:]]
            labels = [cb.assign(h) for cb, h in zip(self.codebooks, layers)]
        mask = _span_mask_tensor(self.cfg, x.shape[0], layers[0].shape[1], rng, x.device)
        out = self.encoder(x, token_mask=mask, mask_embedding=self.mask_embedding)
        h = self.head(out.tokens)
        logits = [clf(h) for clf in self.classifiers]
        loss = dinosr_loss(logits, labels, mask, self.cfg.dinosr_temperature)
        if update_state:
            for cb, feats, lb in zip(self.codebooks, layers, labels):
                cb.update(feats, lb)
        stats = {"codes_used": float(np.mean([torch.unique(lb).numel() for lb in labels]))}
        return loss, stats

    def state_summary(self):
        out = {}
        for i, cb in enumerate(self.codebooks):
            p = cb.usage_counts / cb.usage_counts.sum().clamp(min=1)
            out[f"codebook{i}_entropy"] = float(-(torch.xlogy(p, p)).sum())
        return out


class JEPA(Objective):
    kind = "jepa"

    def __init__(self, encoder_cfg, cfg):
        super().__init__(encoder_cfg, cfg)
        d = self.encoder.model_dim
        bb = encoder_cfg.backbone
        self.mask_token = nn.Parameter(torch.randn(d) * 0.02)
        self.predictor = S4Block(d, bb.state_dim, bb.dropout, bidirectional=True)
        self.masker = MultiBlockMasker(
            BlockMaskSpec(
                (cfg.context_frac_min, cfg.context_frac_max),
                cfg.num_pred_blocks,
                (cfg.pred_frac_min, cfg.pred_frac_max),
                cfg.min_context_tokens,
            )
        )
        self._init_teacher()

    def head_modules(self):
        return [self.predictor]

    def forward(self, x, rng, update_state=True):
        with torch.no_grad():
            target = jepa_targets(self.teacher(x).tokens)
        length = target.shape[1]
        mask = self.masker(length, rng)
        ctx_idx = torch.as_tensor(mask.context_indices, device=x.device)
        pred_idx = torch.as_tensor(mask.pred_indices(), device=x.device)
        tokens, _ = self.encoder.embed(x)
        ctx_out, _ = self.encoder.contextualize(tokens[:, ctx_idx])
        b, d = x.shape[0], ctx_out.shape[-1]
        seq = torch.zeros(b, length, d, dtype=ctx_out.dtype, device=x.device)
        seq = seq.index_copy(1, ctx_idx, ctx_out)
        seq = seq.index_copy(1, pred_idx, self.mask_token.expand(b, len(pred_idx), d).to(seq.dtype))
        pred = self.predictor(seq)
        loss = jepa_loss(pred, target, pred_idx, self.cfg.smooth_l1_beta)
        return loss, {"num_pred": int(len(pred_idx)), "num_context": int(len(ctx_idx)), "fallback": int(mask.fallback)}


class CPC(Objective):
    kind = "cpc"
    uses_teacher = False

    def __init__(self, encoder_cfg, cfg):
        if not encoder_cfg.backbone.causal:
            raise ConfigError("CPC requires a causal backbone (encoder.backbone.causal = true)")
        super().__init__(encoder_cfg, cfg)
        d = self.encoder.model_dim
        self.heads = nn.ModuleList([nn.Linear(d, self.encoder.token_dim, bias=False) for _ in range(cfg.cpc_steps)])
        for h in self.heads:
            nn.init.normal_(h.weight, std=1.0 / d)

    def head_modules(self):
        return [self.heads]

    def forward(self, x, rng, update_state=True):
        out = self.encoder(x)
        loss = cpc_infonce(out.tokens, out.stem_tokens, self.heads, self.cfg.cpc_steps)
        return loss, {"candidates": int(out.tokens.shape[1])}


class HuBERTPP(Objective):
    kind = "hubertpp"

    def __init__(self, encoder_cfg, cfg):
        super().__init__(encoder_cfg, cfg)
        d = self.encoder.model_dim
        p = cfg.projector_dim or d
        self.mask_embedding = nn.Parameter(torch.randn(self.encoder.token_dim) * 0.02)
        self.projector = nn.Linear(d, p)
        self.predictor = nn.Sequential(nn.Linear(p, d), nn.GELU(), nn.Linear(d, p))
        self.banks = nn.ModuleList(
            [
                PrototypeBank(k, p, cfg.prototype_momentum, cfg.freeze_prototypes_steps, cfg.hubert_temperature)
                for k in cfg.prototype_sizes
            ]
        )
        self._init_teacher()

    def _student_for_teacher(self):
        return _EncoderWithProjector(self.encoder, self.projector)

    def head_modules(self):
        return [self.projector, self.predictor]

    def forward(self, x, rng, update_state=True):
        cfg = self.cfg
        with torch.no_grad():
            z_ema = F.normalize(self.teacher.projector(self.teacher.encoder(x).tokens), dim=-1)
            b, length, p = z_ema.shape
            flat = z_ema.reshape(-1, p)
            targets = [sinkhorn_knopp(bank.logits(flat), cfg.sinkhorn_iters, cfg.sinkhorn_epsilon) for bank in self.banks]
        mask = _span_mask_tensor(cfg, b, length, rng, x.device)
        out = self.encoder(x, token_mask=mask, mask_embedding=self.mask_embedding)
        z = F.normalize(self.predictor(self.projector(out.tokens)), dim=-1)
        loss = 0.0
        for bank, tgt in zip(self.banks, targets):
            logits = bank.logits(z)
            loss = loss + hubertpp_loss(logits, tgt.reshape(b, length, -1), mask, cfg.alpha)
        if update_state:
            for bank, tgt in zip(self.banks, targets):
                bank.update(flat, tgt)
                bank.tick()
        self._last_usage = [t.mean(0) for t in targets]
        return loss, {}

    def state_summary(self):
        out = {f"bank{i}_steps": float(b.step_count) for i, b in enumerate(self.banks)}
        for i, usage in enumerate(getattr(self, "_last_usage", [])):
            out[f"bank{i}_usage_entropy"] = float(-(torch.xlogy(usage, usage)).sum())
        return out


class _EncoderWithProjector(nn.Module):
    def __init__(self, encoder, projector):
        super().__init__()
        self.encoder = encoder
        self.projector = projector


OBJECTIVES = {cls.kind: cls for cls in (Data2Vec, DinoSR, JEPA, CPC, HuBERTPP)}


def build_objective(encoder_cfg: EncoderConfig, cfg: ObjectiveConfig, seed: Optional[int] = None) -> Objective:
    """Build an objective (student, heads, teacher, cluster state) with seeded init."""
    if cfg.kind not in OBJECTIVES:
        raise ConfigError(f"unknown objective kind {cfg.kind!r}")
    if cfg.kind == "cpc" and not encoder_cfg.backbone.causal:
        raise ConfigError("CPC requires a causal backbone (encoder.backbone.causal = true)")
    if cfg.kind != "cpc" and encoder_cfg.backbone.causal:
        raise ConfigError(f"{cfg.kind} expects a non-causal backbone")
    if seed is not None:
        encoder_cfg = dataclasses.replace(encoder_cfg, seed=seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(encoder_cfg.seed + 1)
        return OBJECTIVES[cfg.kind](encoder_cfg, cfg)
