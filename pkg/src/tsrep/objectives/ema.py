"""Exponential-moving-average teachers."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn


@dataclass
class EMATeacherState:
    """Teacher parameters plus the momentum schedule that drives them."""

    parameters: dict  # name -> tensor
    momentum: float = 0.999
    schedule: Optional[tuple] = None  # (start, end, steps), linear

    def momentum_at(self, step: int) -> float:
        if self.schedule is None:
            return self.momentum
        start, end, steps = self.schedule
        if steps <= 0:
            return end
        frac = min(max(step, 0) / steps, 1.0)
        return start + (end - start) * frac


def ema_update(teacher: EMATeacherState, student_params: dict, step: int = 0) -> EMATeacherState:
    """Return a new state with ``m * teacher + (1 - m) * student`` per tensor."""
    m = teacher.momentum_at(step)
    new = {}
    for name, t in teacher.parameters.items():
        s = torch.as_tensor(student_params[name])
        t = torch.as_tensor(t)
        if s.shape != t.shape:
            raise ValueError(f"shape mismatch for {name}: teacher {tuple(t.shape)} vs student {tuple(s.shape)}")
        new[name] = m * t + (1.0 - m) * s
    return EMATeacherState(new, teacher.momentum, teacher.schedule)


@torch.no_grad()
def ema_update_module(teacher: nn.Module, student: nn.Module, momentum: float) -> None:
    """In-place EMA of parameters and floating-point buffers.

    Batch-norm running statistics are averaged like weights rather than
    copied, so the teacher's statistics stay consistent with its own slowly
    moving weights. Integer buffers (batch counters) are copied.
    """
    t_params = dict(teacher.named_parameters())
    for name, p in student.named_parameters():
        t = t_params[name]
        if t.shape != p.shape:
            raise ValueError(f"shape mismatch for {name}")
        t.mul_(momentum).add_(p.detach(), alpha=1.0 - momentum)
    t_bufs = dict(teacher.named_buffers())
    for name, b in student.named_buffers():
        if b.is_floating_point():
            t_bufs[name].mul_(momentum).add_(b, alpha=1.0 - momentum)
        else:
            t_bufs[name].copy_(b)


def make_teacher(student: nn.Module) -> nn.Module:
    teacher = copy.deepcopy(student)
    for p in teacher.parameters():
        p.requires_grad_(False)
    teacher.eval()
    return teacher
