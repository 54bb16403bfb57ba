"""Downstream evaluation: heads, adaptation modes and metrics."""

from .adapt import MODES, TaskSpec, adapt, label_efficiency, resolve_encoder, task_from_manifest
from .heads import DownstreamModel, LinearMeanPool, QueryAttentionHead, build_head
from .metrics import MetricReport, MetricResult, auroc_single, macro_auroc, read_predictions, standardized_mae

__all__ = [
    "MODES",
    "TaskSpec",
    "adapt",
    "label_efficiency",
    "resolve_encoder",
    "task_from_manifest",
    "DownstreamModel",
    "LinearMeanPool",
    "QueryAttentionHead",
    "build_head",
    "MetricReport",
    "MetricResult",
    "auroc_single",
    "macro_auroc",
    "read_predictions",
    "standardized_mae",
]
