"""Post-hoc analysis: CKA, scaling fits, rank statistics and report emission."""

from .cka import (
    STAGES,
    CKAMatrix,
    dump_activations,
    gram,
    inter_model_cka,
    layer_activations,
    layer_cka_matrix,
    layer_labels,
    linear_gram,
    load_activations,
    rbf_cka,
    rbf_gram,
    stage_index,
    standardize,
)
from .report import emit_report
from .scaling import FitResult, fit_power_law, weighted_alpha
from .stats import RankTable, bootstrap_rank, spearman

__all__ = [
    "STAGES",
    "CKAMatrix",
    "dump_activations",
    "gram",
    "inter_model_cka",
    "layer_activations",
    "layer_cka_matrix",
    "layer_labels",
    "linear_gram",
    "load_activations",
    "rbf_cka",
    "rbf_gram",
    "stage_index",
    "standardize",
    "emit_report",
    "FitResult",
    "fit_power_law",
    "weighted_alpha",
    "RankTable",
    "bootstrap_rank",
    "spearman",
]
