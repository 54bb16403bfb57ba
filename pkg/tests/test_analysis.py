import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group, spearmanr

from conftest import tiny_encoder_cfg
from tsrep.analysis import (
    CKAMatrix,
    FitResult,
    bootstrap_rank,
    dump_activations,
    emit_report,
    fit_power_law,
    inter_model_cka,
    layer_activations,
    layer_cka_matrix,
    layer_labels,
    load_activations,
    rbf_cka,
    rbf_gram,
    spearman,
    stage_index,
    weighted_alpha,
)
from tsrep.analysis.cka import cka_from_grams
from tsrep.encoder import build_encoder
from tsrep.evaluation import MetricReport

shapes = st.tuples(st.integers(5, 40), st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31))


def _pair(n, d1, d2, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d1))
    y = np.tanh(x @ rng.standard_normal((d1, d2))) + 0.5 * rng.standard_normal((n, d2))
    return x, y


@settings(max_examples=60, deadline=None)
@given(shapes)
def test_cka_basic_properties(args):
    x, y = _pair(*args)
    v = rbf_cka(x, y)
    assert 0.0 <= v <= 1.0
    assert rbf_cka(x, x) == 1.0
    assert v == pytest.approx(rbf_cka(y, x), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(shapes)
def test_cka_feature_permutation_is_exact(args):
    x, y = _pair(*args)
    rng = np.random.default_rng(args[3] + 1)
    assert rbf_cka(x[:, rng.permutation(x.shape[1])], y) == rbf_cka(x, y)


@settings(max_examples=40, deadline=None)
@given(shapes, st.floats(0.1, 10.0), st.floats(-5.0, 5.0))
def test_cka_geometric_invariances(args, scale, shift):
    x, y = _pair(*args)
    base = rbf_cka(x, y)
    n, d1 = x.shape
    rot = ortho_group.rvs(d1, random_state=args[3] % 2**32) if d1 > 1 else np.array([[-1.0]])
    perm = np.random.default_rng(args[3]).permutation(n)
    assert rbf_cka(x @ rot, y) == pytest.approx(base, abs=1e-8)
    assert rbf_cka(x + shift, y) == pytest.approx(base, abs=1e-8)
    assert rbf_cka(scale * x, y) == pytest.approx(base, abs=1e-8)  # median bandwidth follows the scale
    assert rbf_cka(x[perm], y[perm]) == pytest.approx(base, abs=1e-8)


@pytest.mark.parametrize("seed", range(3))
def test_cka_independent_data_near_zero(seed):
    rng = np.random.default_rng(seed)
    assert rbf_cka(rng.standard_normal((500, 32)), rng.standard_normal((500, 32))) < 0.1


def test_cka_biased_estimator_oracle():
    # biased CKA written out with explicit centering matrices
    x, y = _pair(30, 4, 3, 5)
    k, l = rbf_gram(x), rbf_gram(y)
    h = np.eye(30) - 1.0 / 30
    hk, hl = h @ k @ h, h @ l @ h
    expected = np.trace(hk @ hl) / np.sqrt(np.trace(hk @ hk) * np.trace(hl @ hl))
    assert cka_from_grams(k, l, "biased") == pytest.approx(expected, rel=1e-10)
    assert rbf_cka(x, y, estimator="biased") == pytest.approx(expected, rel=1e-10)


def test_cka_unbiased_estimator_oracle():
    # unbiased HSIC by brute force over the defining sums
    x, y = _pair(12, 3, 2, 6)
    k, l = rbf_gram(x), rbf_gram(y)

    def hsic(a, b):
        n = len(a)
        a, b = a.copy(), b.copy()
        np.fill_diagonal(a, 0)
        np.fill_diagonal(b, 0)
        ones = np.ones(n)
        t = np.trace(a @ b) + (ones @ a @ ones) * (ones @ b @ ones) / ((n - 1) * (n - 2)) - 2 / (n - 2) * ones @ a @ b @ ones
        return t / (n * (n - 3))

    expected = hsic(k, l) / np.sqrt(hsic(k, k) * hsic(l, l))
    assert cka_from_grams(k, l) == pytest.approx(max(expected, 0.0), rel=1e-10)


def test_rbf_gram_bandwidth_modes():
    x = np.array([[0.0], [1.0], [3.0]])
    d2 = np.array([[0, 1, 9], [1, 0, 4], [9, 4, 0]], float)
    assert np.allclose(rbf_gram(x, sigma=2.0, sigma_mode="absolute"), np.exp(-d2 / 8.0))
    assert np.allclose(rbf_gram(x), np.exp(-d2 / (2 * 4.0)))  # median off-diagonal d^2 is 4
    with pytest.raises(ValueError):
        rbf_gram(x, sigma_mode="silverman")


def test_cka_degenerate_and_shape_errors():
    const = np.ones((10, 3))
    assert rbf_cka(const, const) == 1.0
    with pytest.raises(ValueError, match="degenerate"):
        rbf_cka(const, np.random.default_rng(0).standard_normal((10, 3)))
    with pytest.raises(ValueError):
        rbf_cka(np.zeros((10, 3)), np.zeros((9, 3)))
    with pytest.raises(ValueError):
        rbf_cka(np.eye(3), np.eye(3), sigma=0.0)


def test_layer_matrix_duplicated_layer():
    a = np.random.default_rng(0).standard_normal((40, 6))
    m = layer_cka_matrix([a, a])
    assert np.array_equal(m.values, np.ones((2, 2)))
    b = np.random.default_rng(1).standard_normal((40, 6))
    m = layer_cka_matrix([a, b, a], labels=["x", "y", "z"], kernel="linear")
    assert m.values[0, 2] == 1.0 and np.allclose(m.values, m.values.T)
    with pytest.raises(ValueError):
        CKAMatrix(["x"], np.eye(2))


def test_encoder_layer_activations_and_stages(short_windows):
    enc = build_encoder(tiny_encoder_cfg(depth=3))
    acts = layer_activations(enc, short_windows[:20])
    assert len(acts) == len(layer_labels(enc)) == 7
    assert all(a.shape == (20, 16) for a in acts)
    assert [stage_index(enc, s) for s in ("early", "mid", "late")] == [0, 5, 6]
    tok = layer_activations(enc, short_windows[:4], pooling="tokens", num_samples=50)
    assert tok[0].shape == (50, 16)
    m = inter_model_cka([enc, enc], "late", short_windows[:20])
    assert np.array_equal(m.values, np.ones((2, 2)))


def test_activation_dump_round_trip(tmp_path):
    acts = [np.arange(12.0).reshape(4, 3), np.ones((4, 5))]
    dump_activations(acts, ["a", "b"], tmp_path)
    back, labels = load_activations(tmp_path)
    assert labels == ["a", "b"] and all(np.array_equal(u, v) for u, v in zip(acts, back))


# ---------------------------------------------------------------------------
# power laws


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 50.0), st.floats(0.02, 0.8), st.floats(0.0, 2.0))
def test_power_law_noiseless_recovery(c, alpha, floor):
    n = np.geomspace(1e3, 1e6, 6)
    fit = fit_power_law(n, c * n**-alpha + floor)
    assert fit.alpha == pytest.approx(alpha, rel=1e-3, abs=1e-4)
    assert fit.r_squared > 0.999999
    pure = fit_power_law(n, c * n**-alpha, with_floor=False)
    assert pure.alpha == pytest.approx(alpha, rel=1e-6)
    assert pure.C == pytest.approx(c, rel=1e-5)


def test_power_law_fixed_example():
    n = np.array([1e4, 1e5, 1e6, 1e7, 1e8])
    fit = fit_power_law(n, 12.0 * n**-0.2 + 0.5)
    assert (fit.C, fit.alpha, fit.L0) == pytest.approx((12.0, 0.2, 0.5), rel=1e-6)
    assert fit.predict(1e9) == pytest.approx(12.0 * 1e9**-0.2 + 0.5, rel=1e-6)


def test_power_law_degenerate_and_errors():
    fit = fit_power_law([1, 2, 3, 4], [2.0] * 4)
    assert fit.degenerate and fit.alpha == 0.0
    with pytest.raises(ValueError, match="at least 4"):
        fit_power_law([1, 2, 3], [3.0, 2.0, 1.0])
    with pytest.raises(ValueError, match="increasing"):
        fit_power_law([1, 3, 2, 4], [4.0, 3, 2, 1])
    with pytest.raises(ValueError, match="positive"):
        fit_power_law([1, 2, 3, 4], [1.0, 0.0, 1, 1])


def test_weighted_alpha():
    fits = [FitResult(1, 0.1, 0, 1.0, "pure_power"), FitResult(1, 0.4, 0, 0.5, "pure_power")]
    assert weighted_alpha(fits) == pytest.approx((0.1 + 0.2) / 1.5)
    assert weighted_alpha(fits, "r2_squared") == pytest.approx((0.1 + 0.1) / 1.25)
    with pytest.raises(ValueError):
        weighted_alpha([])
    with pytest.raises(ValueError):
        weighted_alpha(fits, "aic")


# ---------------------------------------------------------------------------
# rank statistics


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.floats(-10, 10)), min_size=3, max_size=30))
def test_spearman_matches_scipy(pairs):
    x = np.array([a for a, _ in pairs], float)
    y = np.array([b for _, b in pairs], float)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        with pytest.raises(ValueError):
            spearman(x, y)
        return
    r, p = spearman(x, y)
    ref = spearmanr(x, y)
    assert r == pytest.approx(ref.statistic, abs=1e-12)
    if abs(r) < 1:
        assert p == pytest.approx(ref.pvalue, rel=1e-8, abs=1e-14)
    # ranks only: any strictly monotone transform leaves r unchanged
    assert spearman(np.exp(x / 3), y)[0] == pytest.approx(r, abs=1e-12)


def test_spearman_exact_permutation():
    x = [1, 2, 3, 4, 5]
    assert spearman(x, [2, 4, 6, 8, 10], method="exact", alternative="greater") == (1.0, 1 / 120)
    assert spearman(x, [2, 4, 6, 8, 10], method="exact")[1] == 2 / 120
    assert spearman(x, [10, 8, 6, 4, 2], method="exact", alternative="less")[1] == 1 / 120
    assert spearman(x, [2, 4, 6, 8, 10], method="t")[1] == 0.0
    with pytest.raises(ValueError):
        spearman(range(9), range(9), method="exact")
    assert spearman(range(9), range(9), method="auto")[1] == 0.0


def _report(preds, labels, metric="auroc"):
    return MetricReport("frozen", metric, np.zeros(1), 0.0, [], np.asarray(preds, float)[:, None], np.asarray(labels, float)[:, None])


def test_bootstrap_rank_groups():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 300).astype(float)
    good = y + 0.3 * rng.standard_normal(300)
    good_copy = good.copy()
    noise = rng.standard_normal(300)
    table = bootstrap_rank([_report(noise, y), _report(good, y), _report(good_copy, y)], ["noise", "good", "copy"], resamples=200)
    assert table.ranks == [3, 1, 1]
    assert table.groups == [["good", "copy"], ["noise"]]
    again = bootstrap_rank([_report(noise, y), _report(good, y), _report(good_copy, y)], ["noise", "good", "copy"], resamples=200)
    assert again == table


def test_bootstrap_rank_mae_sign_and_alignment():
    y = np.linspace(0, 1, 50)
    table = bootstrap_rank([_report(y + 1.0, y, "mae"), _report(y + 0.01, y, "mae")], resamples=100)
    assert table.ranks == [2, 1]
    assert table.estimates == pytest.approx([1.0, 0.01])
    with pytest.raises(ValueError, match="aligned"):
        bootstrap_rank([_report(y, y, "mae"), _report(y, y[::-1], "mae")])


def test_emit_report_is_deterministic(tmp_path):
    n = np.geomspace(1e3, 1e5, 5)
    products = {
        "fits": [{"name": "a", "N": n, "y": 3 * n**-0.1, "fit": fit_power_law(n, 3 * n**-0.1)}],
        "cka": {"m": CKAMatrix(["x", "y"], np.array([[1.0, 0.3], [0.3, 1.0]]))},
        "label_efficiency": {"a": [{"fraction": 1.0, "train_size": 10, "error": 0.2}, {"fraction": 0.5, "train_size": 5, "error": 0.3}]},
        "correlations": [{"name": "c", "x": [1, 2, 3], "y": [1, 3, 2], "r": 0.5, "p": 0.6}],
    }
    first = [p.name for p in emit_report(products, tmp_path / "a")]
    emit_report(products, tmp_path / "b")
    assert sorted(first) == sorted(
        ["fits.csv", "fit_a.png", "cka_m.csv", "cka_m.png", "label_efficiency.csv", "label_efficiency.png", "spearman.csv", "spearman_c.png"]
    )
    for name in first:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    with pytest.raises(ValueError):
        emit_report({"heatmap": 1}, tmp_path)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 0.9))
def test_bootstrap_rank_monotone_in_improvement(seed, step):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, 80).astype(float)
    preds = [y + s * rng.standard_normal(80) for s in (0.6, 1.0, 1.4)]
    before = bootstrap_rank([_report(p, y) for p in preds], resamples=100, seed=seed).ranks
    # move every score of model 1 toward its label
    preds[1] = preds[1] + step * (y - preds[1])
    after = bootstrap_rank([_report(p, y) for p in preds], resamples=100, seed=seed).ranks
    assert after[1] <= before[1]
