"""Downstream metrics: macro AUROC, standardized MAE and the report container."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata


@dataclass
class MetricResult:
    per_target: np.ndarray  # NaN where excluded
    macro: float
    excluded: list  # (target index, reason)


def auroc_single(scores, labels) -> float:
    """Rank-statistic AUROC with tied scores counted 0.5.

    Equals (#{pos > neg} + 0.5 * #{pos == neg}) / (n_pos * n_neg).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs at least one positive and one negative")
    ranks = rankdata(scores, method="average")
    # twice the Mann-Whitney U is an integer, so the division below is the only rounding step
    u2 = 2.0 * ranks[pos].sum() - n_pos * (n_pos + 1)
    return float(u2 / (2.0 * n_pos * n_neg))


def _as_2d(a) -> np.ndarray:
    a = np.asarray(a)
    return a[:, None] if a.ndim == 1 else a


def macro_auroc(scores, labels) -> MetricResult:
    """Per-target AUROC and their unweighted mean.

    Targets whose labels hold a single class are excluded and listed.
    """
    scores, labels = _as_2d(scores), _as_2d(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ in shape")
    per = np.full(scores.shape[1], np.nan)
    excluded = []
    for j in range(scores.shape[1]):
        col = labels[:, j]
        if not np.isin(col, (0, 1)).all():
            raise ValueError(f"target {j} has labels outside {{0, 1}}")
        n_pos = int((col == 1).sum())
        if n_pos == 0 or n_pos == len(col):
            excluded.append((j, "single class"))
            continue
        per[j] = auroc_single(scores[:, j], col)
    valid = per[~np.isnan(per)]
    macro = float(valid.mean()) if len(valid) else float("nan")
    return MetricResult(per, macro, excluded)


def standardized_mae(preds, targets, train_mean, train_std) -> MetricResult:
    """MAE in z-units of the training split. Zero-variance targets are excluded."""
    preds, targets = _as_2d(preds).astype(np.float64), _as_2d(targets).astype(np.float64)
    if preds.shape != targets.shape:
        raise ValueError(f"predictions {preds.shape} and targets {targets.shape} differ in shape")
    mean = np.broadcast_to(np.asarray(train_mean, dtype=np.float64), (preds.shape[1],))
    std = np.broadcast_to(np.asarray(train_std, dtype=np.float64), (preds.shape[1],))
    per = np.full(preds.shape[1], np.nan)
    excluded = []
    for j in range(preds.shape[1]):
        if not std[j] > 0:
            excluded.append((j, "zero training std"))
            continue
        per[j] = np.mean(np.abs((preds[:, j] - mean[j]) / std[j] - (targets[:, j] - mean[j]) / std[j]))
    if len(excluded) == preds.shape[1]:
        raise ValueError("every regression target has zero training std")
    valid = per[~np.isnan(per)]
    return MetricResult(per, float(valid.mean()), excluded)


@dataclass
class MetricReport:
    mode: str
    metric: str  # "auroc" | "mae"
    per_target: np.ndarray
    macro: float
    excluded: list
    predictions: np.ndarray  # [N, T] scores or predictions in target units
    labels: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def error(self) -> float:
        """Residual error: 1 - AUROC for classification, MAE for regression."""
        return 1.0 - self.macro if self.metric == "auroc" else self.macro

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "metric": self.metric,
            "macro": self.macro,
            "per_target": [None if np.isnan(v) else float(v) for v in self.per_target],
            "excluded": [{"target": int(j), "reason": r} for j, r in self.excluded],
            "num_samples": int(len(self.labels)),
            **self.extra,
        }

    def write(self, out_dir: str | Path) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["target", self.metric, "included"])
            for j, v in enumerate(self.per_target):
                w.writerow([j, "" if np.isnan(v) else repr(float(v)), int(not np.isnan(v))])
            w.writerow(["macro", repr(float(self.macro)), ""])
        summary = self.summary()
        summary["predictions_shape"] = list(self.predictions.shape)
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        np.ascontiguousarray(self.predictions, dtype="<f4").tofile(out_dir / "predictions.f32")
        np.ascontiguousarray(self.labels, dtype="<f4").tofile(out_dir / "labels.f32")
        return out_dir


def read_predictions(report_dir: str | Path) -> tuple:
    """Load ``(predictions, labels, summary)`` written by :meth:`MetricReport.write`."""
    report_dir = Path(report_dir)
    summary = json.loads((report_dir / "summary.json").read_text())
    shape = summary["predictions_shape"]
    preds = np.fromfile(report_dir / "predictions.f32", dtype="<f4").reshape(shape)
    labels = np.fromfile(report_dir / "labels.f32", dtype="<f4").reshape(shape)
    return preds, labels, summary

