"""Pretraining loop, validation, checkpointing and continual pretraining."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .checkpoint import CheckpointError, check_compatible, load_checkpoint, save_checkpoint
from .config import (
    ConfigError,
    EncoderConfig,
    ObjectiveConfig,
    TrainConfig,
    config_from_dict,
    config_to_dict,
    dump_config,
)
from .objectives import Objective, build_objective

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Non-finite loss during training."""


@dataclass
class RunRecord:
    step_losses: list = field(default_factory=list)  # [(step, loss)]
    val_losses: list = field(default_factory=list)  # [(epoch, val_loss)]
    wall_clock: float = 0.0
    config: dict = field(default_factory=dict)
    dataset_size: int = 0

    def write(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "train_loss.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss"])
            w.writerows([(s, repr(float(v))) for s, v in self.step_losses])
        with open(out_dir / "val_loss.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "val_loss"])
            w.writerows([(e, repr(float(v))) for e, v in self.val_losses])
        info = {"dataset_size": self.dataset_size, "wall_clock_s": round(self.wall_clock, 3)}
        (out_dir / "run_info.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def _as_tensor(values) -> torch.Tensor:
    if torch.is_tensor(values):
        return values.float()
    return torch.from_numpy(np.ascontiguousarray(values, dtype=np.float32))


def make_optimizer(params_by_group: dict, lr: float, weight_decay: float, lr_scale: Optional[dict] = None):
    """Adam with weight decay applied only to matrices/kernels (ndim > 1)."""
    groups = []
    for name, params in params_by_group.items():
        scale = 1.0 if lr_scale is None else lr_scale.get(name, 1.0)
        decay = [p for p in params if p.requires_grad and p.ndim > 1]
        no_decay = [p for p in params if p.requires_grad and p.ndim <= 1]
        for ps, wd in ((decay, weight_decay), (no_decay, 0.0)):
            if ps:
                groups.append({"params": ps, "lr": lr * scale, "weight_decay": wd})
    return torch.optim.Adam(groups, lr=lr)


def objective_config_dict(objective: Objective, train_cfg: Optional[TrainConfig] = None) -> dict:
    out = {"encoder": config_to_dict(objective.encoder_cfg), "objective": config_to_dict(objective.cfg)}
    if train_cfg is not None:
        out["train"] = config_to_dict(train_cfg)
    return out


def save_objective(path, objective: Objective, optimizer=None, train_cfg=None, extra=None) -> Path:
    return save_checkpoint(
        path,
        objective.state_dict(),
        objective_config_dict(objective, train_cfg),
        None if optimizer is None else optimizer.state_dict(),
        extra,
    )


def load_objective(path, with_optimizer: bool = False):
    """Rebuild an objective (and optionally its optimizer) from a checkpoint directory."""
    ckpt = load_checkpoint(path)
    cfg = ckpt["config"]
    try:
        enc_cfg = config_from_dict(EncoderConfig, cfg["encoder"])
        obj_cfg = config_from_dict(ObjectiveConfig, cfg["objective"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"checkpoint config incomplete: {exc}") from exc
    objective = build_objective(enc_cfg, obj_cfg)
    check_compatible(objective, ckpt["model_state"])
    objective.load_state_dict(ckpt["model_state"])
    result = {"objective": objective, "extra": ckpt["extra"], "config": cfg}
    if with_optimizer:
        train_cfg = config_from_dict(TrainConfig, cfg.get("train", {}))
        opt = make_optimizer(objective.parameter_groups(), train_cfg.learning_rate, train_cfg.weight_decay)
        if ckpt["optimizer_state"] is not None:
            opt.load_state_dict(ckpt["optimizer_state"])
        result["optimizer"] = opt
        result["train_cfg"] = train_cfg
    return result


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


@torch.no_grad()
def validate(objective: Objective, values, batch_size: int = 64, seed: int = 0) -> float:
    """Mean loss with frozen state: no gradients, no EMA/codebook/prototype updates.

    Mask randomness is fixed per batch index, so repeated calls agree exactly.
    """
    was_training = objective.training
    objective.eval()
    x_all = _as_tensor(values)
    total, count = 0.0, 0
    try:
        for i, start in enumerate(range(0, len(x_all), batch_size)):
            x = x_all[start : start + batch_size]
            loss, _ = objective(x, np.random.default_rng((seed, 2, i)), update_state=False)
            total += float(loss) * len(x)
            count += len(x)
    finally:
        objective.train(was_training)
    return total / max(count, 1)


def _diagnostics(objective: Objective, x: torch.Tensor, step: int, loss: float) -> dict:
    return {
        "step": step,
        "loss": loss,
        "batch": {
            "mean": float(x.mean()),
            "std": float(x.std()),
            "min": float(x.min()),
            "max": float(x.max()),
            "finite": bool(torch.isfinite(x).all()),
        },
        "state": objective.state_summary(),
    }


def train_objective(
    objective: Objective,
    train_values,
    train_cfg: TrainConfig,
    val_values=None,
    out_dir: Optional[str | Path] = None,
    optimizer=None,
    extra: Optional[dict] = None,
    start_step: int = 0,
) -> tuple:
    """Run SSL training on an already-built objective.

    Returns ``(optimizer, RunRecord)``. With ``out_dir`` a checkpoint is
    written after every epoch to ``out_dir/epochs/epoch_NNN`` and the final
    state to ``out_dir/checkpoint``.
    """
    record = RunRecord(dataset_size=len(train_values), config=objective_config_dict(objective, train_cfg))
    if optimizer is None:
        optimizer = make_optimizer(objective.parameter_groups(), train_cfg.learning_rate, train_cfg.weight_decay)
    x_all = _as_tensor(train_values)
    out_dir = Path(out_dir) if out_dir is not None else None
    extra = dict(extra or {})
    step = start_step
    t0 = time.perf_counter()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(train_cfg.seed)
        objective.train()
        done = False
        for epoch in range(1, train_cfg.epochs + 1):
            for idx in _batches(len(x_all), train_cfg.batch_size, np.random.default_rng((train_cfg.seed, epoch))):
                x = x_all[torch.from_numpy(idx)]
                loss, _ = objective(x, np.random.default_rng((train_cfg.seed, 1, step)))
                value = float(loss.detach())
                if not math.isfinite(value):
                    diag = _diagnostics(objective, x, step, value)
                    if out_dir is not None:
                        out_dir.mkdir(parents=True, exist_ok=True)
                        (out_dir / "diagnostics.json").write_text(json.dumps(diag, indent=2, sort_keys=True))
                    raise NumericalError(f"non-finite loss at step {step}: {json.dumps(diag, sort_keys=True)}")
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                if train_cfg.grad_clip:
                    torch.nn.utils.clip_grad_norm_(objective.trainable_parameters(), train_cfg.grad_clip)
                optimizer.step()
                objective.update_teacher(step)
                record.step_losses.append((step, value))
                step += 1
                if train_cfg.max_steps is not None and step - start_step >= train_cfg.max_steps:
                    done = True
                    break
            if val_values is not None and len(val_values):
                record.val_losses.append((epoch, validate(objective, val_values, train_cfg.batch_size, train_cfg.seed)))
            if out_dir is not None:
                extra.update(step=step, epoch=epoch)
                save_objective(out_dir / "epochs" / f"epoch_{epoch:03d}", objective, optimizer, train_cfg, extra)
            if done:
                break
    record.wall_clock = time.perf_counter() - t0
    extra["step"] = step
    if out_dir is not None:
        save_objective(out_dir / "checkpoint", objective, optimizer, train_cfg, extra)
        record.write(out_dir)
    return optimizer, record


def pretrain(
    train_values,
    objective_cfg: ObjectiveConfig,
    encoder_cfg: EncoderConfig,
    train_cfg: TrainConfig,
    val_values=None,
    out_dir: Optional[str | Path] = None,
):
    """Build an objective from configs and pretrain it.

    Returns ``(objective, RunRecord)``; the checkpoint lives in
    ``out_dir/checkpoint`` when ``out_dir`` is given.
    """
    if objective_cfg.kind == "cpc" and not encoder_cfg.backbone.causal:
        raise ConfigError("CPC requires a causal backbone (encoder.backbone.causal = true)")
    objective = build_objective(encoder_cfg, objective_cfg)
    provenance = [{"stage": "pretrain", "objective": objective_cfg.kind, "windows": len(train_values), "epochs": train_cfg.epochs}]
    _, record = train_objective(objective, train_values, train_cfg, val_values, out_dir, extra={"provenance": provenance})
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "config.cfg").write_text(
            dump_config(_run_config(encoder_cfg, objective_cfg, train_cfg)), encoding="utf-8"
        )
    return objective, record


def _run_config(encoder_cfg, objective_cfg, train_cfg):
    from .config import RunConfig

    return RunConfig(encoder=encoder_cfg, objective=objective_cfg, train=train_cfg)


def continual_pretrain(
    checkpoint: str | Path,
    target_values,
    train_cfg: TrainConfig,
    out_dir: Optional[str | Path] = None,
    val_values=None,
    objective_kind: Optional[str] = None,
):
    """Resume SSL on target-domain windows with a fresh optimizer.

    The output checkpoint's provenance lists every earlier stage plus this one.
    """
    loaded = load_objective(checkpoint)
    objective = loaded["objective"]
    if objective_kind is not None and objective_kind != objective.kind:
        raise ConfigError(f"checkpoint objective {objective.kind!r} does not match requested {objective_kind!r}")
    provenance = list(loaded["extra"].get("provenance", []))
    provenance.append(
        {"stage": "continual", "objective": objective.kind, "windows": len(target_values), "epochs": train_cfg.epochs, "source": str(checkpoint)}
    )
    start = int(loaded["extra"].get("step", 0))
    _, record = train_objective(
        objective, target_values, train_cfg, val_values, out_dir, extra={"provenance": provenance}, start_step=start
    )
    return objective, record


def overfit_losses(objective: Objective, batch, train_cfg: TrainConfig, steps: int = 200, stop_ratio: Optional[float] = None) -> list:
    """Repeatedly step on one fixed batch; optionally stop once loss <= stop_ratio * initial."""
    optimizer = make_optimizer(objective.parameter_groups(), train_cfg.learning_rate, train_cfg.weight_decay)
    x = _as_tensor(batch)
    losses = []
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(train_cfg.seed)
        objective.train()
        for step in range(steps):
            loss, _ = objective(x, np.random.default_rng((train_cfg.seed, 1, step)))
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            objective.update_teacher(step)
            losses.append(float(loss.detach()))
            if stop_ratio is not None and losses[-1] <= stop_ratio * losses[0]:
                break
    return losses


def replace_epochs(cfg: TrainConfig, epochs: int) -> TrainConfig:
    return dataclasses.replace(cfg, epochs=epochs)
