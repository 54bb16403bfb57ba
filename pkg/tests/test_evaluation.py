import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_encoder_cfg
from tsrep.config import EvalConfig
from tsrep.data import WindowSet
from tsrep.encoder import build_encoder
from tsrep.evaluation import (
    MetricReport,
    TaskSpec,
    adapt,
    auroc_single,
    label_efficiency,
    macro_auroc,
    read_predictions,
    standardized_mae,
)
from tsrep.evaluation.heads import LinearMeanPool, QueryAttentionHead, build_head

CFG = EvalConfig(epochs=3, batch_size=16, num_heads=2)


def _pair_auroc(scores, labels):
    # direct count over every positive/negative pair
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(-5, 5), st.booleans()), min_size=2, max_size=40))
def test_auroc_matches_pair_count(pairs):
    scores = [float(s) for s, _ in pairs]  # small integer range forces ties
    labels = [int(y) for _, y in pairs]
    if len(set(labels)) < 2:
        with pytest.raises(ValueError):
            auroc_single(scores, labels)
        return
    assert auroc_single(scores, labels) == pytest.approx(_pair_auroc(scores, labels), abs=1e-12)


def test_auroc_known_values():
    assert auroc_single([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc_single([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0
    assert auroc_single([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5
    # 3 of 4 pairs ordered correctly
    assert auroc_single([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_macro_auroc_excludes_single_class_targets():
    scores = np.array([[0.1, 0.3, 0.2], [0.9, 0.1, 0.4], [0.2, 0.5, 0.9], [0.8, 0.7, 0.6]])
    labels = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 1], [1, 1, 0]])
    res = macro_auroc(scores, labels)
    assert res.excluded == [(1, "single class")]
    assert np.isnan(res.per_target[1])
    assert res.per_target[0] == 1.0
    assert res.per_target[2] == pytest.approx(_pair_auroc(scores[:, 2], labels[:, 2]))
    assert res.macro == pytest.approx((1.0 + res.per_target[2]) / 2)
    with pytest.raises(ValueError, match="labels outside"):
        macro_auroc(scores, labels * 2)


def test_standardized_mae_oracle():
    preds = np.array([[1.0, 10.0, 3.0], [2.0, 14.0, 3.0]])
    targets = np.array([[0.0, 12.0, 1.0], [2.0, 12.0, 5.0]])
    res = standardized_mae(preds, targets, train_mean=[0.0, 5.0, 3.0], train_std=[2.0, 4.0, 0.0])
    # column 0: |1-0|/2, |2-2|/2 -> 0.25; column 1: 2/4, 2/4 -> 0.5
    assert res.per_target[:2].tolist() == [0.25, 0.5]
    assert res.excluded == [(2, "zero training std")]
    assert res.macro == 0.375
    with pytest.raises(ValueError):
        standardized_mae(preds, targets, 0.0, 0.0)


def test_head_shapes_and_bias():
    tokens = torch.randn(5, 30, 16)
    assert LinearMeanPool(16, 3)(tokens).shape == (5, 3)
    assert LinearMeanPool(16, 3)(tokens.mean(1)).shape == (5, 3)
    head = QueryAttentionHead(16, 3, num_heads=4)
    assert head(tokens).shape == (5, 3)
    assert all(m.bias is None for m in head.modules() if isinstance(m, torch.nn.Linear))
    with pytest.raises(ValueError):
        QueryAttentionHead(16, 3, num_heads=5)
    with pytest.raises(ValueError):
        build_head("mlp", 16, 3)


def _toy_task(kind="multilabel_classification", n=96, seed=0):
    # target 0 follows channel-0 amplitude, target 1 follows channel-1 amplitude
    rng = np.random.default_rng(seed)
    amp = rng.uniform(0.2, 2.0, size=(n, 2))
    x = rng.standard_normal((n, 12, 120)).astype(np.float32)
    x[:, :2] *= amp[:, :, None].astype(np.float32)
    y = (amp > 1.1).astype(np.float32) if kind != "regression" else np.log(amp).astype(np.float32)

    def ws(sl):
        idx = np.arange(n)[sl]
        return WindowSet(x[idx], idx, np.zeros(len(idx), np.int64), y[idx])

    return TaskSpec(kind, 2, ws(slice(0, 64)), ws(slice(64, 80)), ws(slice(80, n)), window_len=120)


@pytest.mark.parametrize("mode", ["linear", "frozen"])
def test_frozen_modes_leave_encoder_untouched(mode):
    enc = build_encoder(tiny_encoder_cfg())
    before = {k: v.clone() for k, v in enc.state_dict().items()}
    model, report = adapt(enc, _toy_task(), mode, CFG)
    for k, v in model.encoder.state_dict().items():
        assert torch.equal(v, before[k]), k
    assert all(not p.requires_grad for p in model.encoder.parameters())
    assert report.predictions.shape == (16, 2) and report.metric == "auroc"
    assert 0.0 <= report.macro <= 1.0


def test_finetune_updates_encoder_and_keeps_input_intact():
    enc = build_encoder(tiny_encoder_cfg())
    before = {k: v.clone() for k, v in enc.state_dict().items()}
    model, report = adapt(enc, _toy_task(), "finetune", CFG)
    for k, v in enc.state_dict().items():
        assert torch.equal(v, before[k]), k  # caller's copy is not mutated
    changed = [k for k, v in model.encoder.state_dict().items() if not torch.equal(v, before[k])]
    assert changed
    assert "val_macro" in report.extra


def test_adapt_is_deterministic():
    enc = build_encoder(tiny_encoder_cfg())
    a = adapt(enc, _toy_task(), "frozen", CFG)[1]
    b = adapt(enc, _toy_task(), "frozen", CFG)[1]
    assert np.array_equal(a.predictions, b.predictions)


def test_regression_mode_reports_mae_in_target_units():
    enc = build_encoder(tiny_encoder_cfg())
    task = _toy_task("regression")
    _, report = adapt(enc, task, "linear", EvalConfig(epochs=20, batch_size=16, num_heads=2))
    assert report.metric == "mae" and report.error == report.macro
    y_train = task.split("train").labels
    y_test = task.split("test").labels
    expected = np.mean(np.abs(report.predictions - y_test) / y_train.std(0), axis=0)
    assert np.allclose(report.per_target, expected, atol=1e-5)


def test_unknown_mode_and_label_checks():
    enc = build_encoder(tiny_encoder_cfg())
    with pytest.raises(ValueError, match="mode"):
        adapt(enc, _toy_task(), "zero_shot", CFG)
    task = _toy_task()
    task.num_targets = 3
    with pytest.raises(ValueError, match="labels have shape"):
        adapt(enc, task, "linear", CFG)


def test_label_efficiency_rows():
    enc = build_encoder(tiny_encoder_cfg())
    rows = label_efficiency(enc, _toy_task(), fractions=(1.0, 0.5, 0.25), mode="linear", eval_cfg=CFG)
    assert [r["fraction"] for r in rows] == [1.0, 0.5, 0.25]
    assert [r["train_size"] for r in rows] == [64, 32, 16]
    for r in rows:
        assert r["error"] == pytest.approx(1.0 - r["macro"])


def test_report_round_trip(tmp_path):
    preds = np.random.default_rng(0).random((10, 2)).astype(np.float32)
    labels = (preds > 0.5).astype(np.float32)
    res = macro_auroc(preds, labels)
    report = MetricReport("frozen", "auroc", res.per_target, res.macro, res.excluded, preds, labels, {"train_size": 5})
    report.write(tmp_path)
    p, y, summary = read_predictions(tmp_path)
    assert np.array_equal(p, preds) and np.array_equal(y, labels)
    assert summary["macro"] == 1.0 and summary["train_size"] == 5
    assert (tmp_path / "metrics.csv").read_text().splitlines()[0] == "target,auroc,included"
