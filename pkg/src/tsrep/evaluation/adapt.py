"""Downstream adaptation: finetuning, frozen attentive probing and linear probing."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import EvalConfig
from ..data import DataError, DatasetManifest, WindowSet, collect_windows, load_manifest, make_folds, subsample_training_set
from ..encoder import Encoder
from .heads import MODE_HEAD, DownstreamModel, build_head
from .metrics import MetricReport, macro_auroc, standardized_mae

MODES = ("finetune", "frozen", "linear")
TASK_KINDS = ("multilabel_classification", "regression")


@dataclass
class TaskSpec:
    """A labeled downstream task. Splits may be WindowSets, manifests or manifest paths."""

    kind: str
    num_targets: int
    train: Any
    val: Any = None
    test: Any = None
    window_len: int = 600

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        self._cache = {}

    def split(self, name: str) -> Optional[WindowSet]:
        if name in self._cache:
            return self._cache[name]
        src = getattr(self, name)
        if src is None:
            return None
        if isinstance(src, (str, Path)):
            src = load_manifest(src)
        ws = collect_windows(src, self.window_len) if isinstance(src, DatasetManifest) else src
        self._check_labels(ws, name)
        self._cache[name] = ws
        return ws

    def _check_labels(self, ws: WindowSet, name: str) -> None:
        if ws.labels is None:
            raise DataError(f"{name} split carries no labels")
        if ws.labels.ndim != 2 or ws.labels.shape[1] != self.num_targets:
            raise ValueError(f"{name} labels have shape {ws.labels.shape}, expected (N, {self.num_targets})")
        if self.kind == "multilabel_classification" and not np.isin(ws.labels, (0.0, 1.0)).all():
            raise ValueError(f"{name} classification labels must be 0/1")


def task_from_manifest(
    path: str | Path,
    kind: str = "multilabel_classification",
    window_len: int = 600,
    num_folds: int = 10,
    seed: int = 0,
) -> TaskSpec:
    """Split one labeled manifest by subject: fold 0 is test, fold 1 validation, the rest train."""
    manifest = load_manifest(path)
    folds = make_folds(manifest, num_folds, seed)
    by_fold = {"test": [], "val": [], "train": []}
    for idx, fold in sorted(folds.fold_assignment.items()):
        by_fold["test" if fold == 0 else "val" if fold == 1 else "train"].append(idx)
    num_targets = manifest.num_targets
    if not num_targets:
        raise DataError(f"manifest {path} has no label vectors")
    return TaskSpec(
        kind,
        num_targets,
        manifest.subset(by_fold["train"]),
        manifest.subset(by_fold["val"]),
        manifest.subset(by_fold["test"]),
        window_len,
    )


def resolve_encoder(checkpoint) -> Encoder:
    """Private encoder copy from an Encoder, an objective, or a checkpoint directory."""
    if isinstance(checkpoint, Encoder):
        return copy.deepcopy(checkpoint)
    if isinstance(checkpoint, nn.Module) and isinstance(getattr(checkpoint, "encoder", None), Encoder):
        return copy.deepcopy(checkpoint.encoder)
    from ..trainer import load_objective

    return load_objective(checkpoint)["objective"].encoder


def _batches(n: int, batch_size: int, rng: Optional[np.random.Generator] = None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield torch.from_numpy(order[start : start + batch_size])


@torch.no_grad()
def _features(encoder: Encoder, values: np.ndarray, pooled: bool, batch_size: int) -> torch.Tensor:
    encoder.eval()
    x = torch.from_numpy(np.ascontiguousarray(values, dtype=np.float32))
    out = []
    for idx in _batches(len(x), batch_size):
        tokens = encoder(x[idx]).tokens
        out.append(tokens.mean(1) if pooled else tokens)
    return torch.cat(out)


def _snapshot(module: nn.Module) -> dict:
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def adapt(
    checkpoint,
    task: TaskSpec,
    mode: str,
    eval_cfg: Optional[EvalConfig] = None,
    train_indices=None,
    feature_cache: Optional[dict] = None,
) -> tuple:
    """Fit a head (and, for finetuning, the encoder) on the task's training split.

    Returns ``(model, MetricReport)``; the report is computed on the test
    split with per-sample predictions retained. ``train_indices`` restricts
    the training split (label-efficiency subsets). Final-epoch parameters
    are used; there is no early stopping.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    cfg = eval_cfg or EvalConfig()
    train, val, test = task.split("train"), task.split("val"), task.split("test")
    if test is None:
        raise DataError("task has no test split")
    if train_indices is not None:
        train = train.take(train_indices)
    if len(train) == 0:
        raise DataError("empty training split")

    y_train = train.labels.astype(np.float32)
    regression = task.kind == "regression"
    if regression:
        mean = y_train.mean(0)
        std = y_train.std(0)
        scale = np.where(std > 0, std, 1.0).astype(np.float32)
        y_fit = (y_train - mean) / scale
    else:
        y_fit = y_train

    encoder = resolve_encoder(checkpoint)
    dim = encoder.model_dim
    frozen = mode != "finetune"
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        head = build_head(MODE_HEAD[mode], dim, task.num_targets, cfg.num_heads)
        model = DownstreamModel(encoder, head)
        from ..trainer import make_optimizer

        if frozen:
            for p in encoder.parameters():
                p.requires_grad_(False)
            before = _snapshot(encoder)
            pooled = mode == "linear"
            cache = feature_cache if feature_cache is not None else {}

            def feats(ws, key):
                k = (key, pooled)
                if k not in cache:
                    cache[k] = _features(encoder, ws.values, pooled, cfg.batch_size)
                return cache[k]

            x_train = feats(task.split("train"), "train")
            if train_indices is not None:
                x_train = x_train[torch.as_tensor(np.asarray(train_indices, dtype=np.int64))]
            opt = make_optimizer({"head": list(head.parameters())}, cfg.learning_rate, cfg.weight_decay)
            forward = head
        else:
            x_train = torch.from_numpy(np.ascontiguousarray(train.values, dtype=np.float32))
            groups = {"head": list(head.parameters()), **encoder.parameter_groups()}
            f = cfg.lr_factor
            opt = make_optimizer(groups, cfg.learning_rate, cfg.weight_decay, {"head": 1.0, "backbone": f, "stem": f * f})
            forward = model

        y_t = torch.from_numpy(np.ascontiguousarray(y_fit))
        for epoch in range(1, cfg.epochs + 1):
            forward.train()
            if frozen:
                encoder.eval()
            for idx in _batches(len(x_train), cfg.batch_size, np.random.default_rng((cfg.seed, epoch))):
                out = forward(x_train[idx])
                target = y_t[idx]
                loss = F.l1_loss(out, target) if regression else F.binary_cross_entropy_with_logits(out, target)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()

        forward.eval()
        model.eval()

        @torch.no_grad()
        def predict(ws, key):
            x = feats(ws, key) if frozen else torch.from_numpy(np.ascontiguousarray(ws.values, dtype=np.float32))
            out = torch.cat([forward(x[idx]) for idx in _batches(len(x), cfg.batch_size)]).double().numpy()
            return out * scale + mean if regression else 1.0 / (1.0 + np.exp(-out))

        def score(preds, ws):
            if regression:
                return standardized_mae(preds, ws.labels, mean, std)
            return macro_auroc(preds, ws.labels)

        test_pred = predict(test, "test")
        result = score(test_pred, test)
        extra = {"train_size": int(len(x_train)), "epochs": cfg.epochs}
        if val is not None and len(val):
            extra["val_macro"] = score(predict(val, "val"), val).macro

    if frozen:
        after = encoder.state_dict()
        for k, v in before.items():
            if not torch.equal(v, after[k]):
                raise RuntimeError(f"encoder tensor {k!r} changed in {mode} mode")
    report = MetricReport(
        mode,
        "mae" if regression else "auroc",
        result.per_target,
        result.macro,
        result.excluded,
        test_pred.astype(np.float32),
        test.labels.astype(np.float32),
        extra,
    )
    return model, report


def label_efficiency(checkpoint, task: TaskSpec, fractions=None, mode: str = "finetune", eval_cfg: Optional[EvalConfig] = None, seed: int = 0) -> list:
    """One adapt() per nested training subset.

    Returns rows ``{"fraction", "train_size", "macro", "error", "report"}``
    in the order of ``fractions``; ``error`` is 1 - AUROC (or MAE).
    """
    cfg = eval_cfg or EvalConfig()
    fractions = tuple(cfg.fractions if fractions is None else fractions)
    n = len(task.split("train"))
    subsets = subsample_training_set(n, fractions, seed)
    cache = {}
    rows = []
    for frac in fractions:
        idx = subsets[frac]
        _, report = adapt(checkpoint, task, mode, cfg, None if frac == 1.0 else idx, feature_cache=cache)
        rows.append({"fraction": frac, "train_size": int(len(idx)), "macro": report.macro, "error": report.error, "report": report})
    return rows
