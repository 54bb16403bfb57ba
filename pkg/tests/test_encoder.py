import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_encoder_cfg
from tsrep.config import ConfigError, EncoderConfig
from tsrep.encoder import build_encoder, count_parameters, encode
from tsrep.encoder.ssm import S4DKernel, S4DLayer, fft_conv
from tsrep.encoder.transformer import apply_rotary, rotary_tables

FAMILIES = ["ssm", "transformer", "net1d"]


def _recurrence(kernel: S4DKernel, u: np.ndarray) -> np.ndarray:
    """Run the discretized diagonal SSM step by step (complex128)."""
    dt = np.exp(kernel.log_dt.detach().double().numpy())
    a = -np.exp(kernel.log_A_real.detach().double().numpy()) + 1j * kernel.A_imag.detach().double().numpy()
    c = torch.view_as_complex(kernel.C.detach().double()).numpy()[0]
    da = np.exp(a * dt[:, None])
    b_bar = (da - 1.0) / a
    state = np.zeros_like(a)
    out = np.zeros_like(u)
    for t in range(u.shape[1]):
        state = da * state + b_bar * u[:, t : t + 1]
        out[:, t] = 2.0 * np.real((c * state).sum(-1))
    return out


def test_s4d_kernel_matches_recurrence():
    torch.manual_seed(0)
    kern = S4DKernel(3, state_dim=6, channels=1)
    u = np.random.default_rng(0).standard_normal((3, 50))
    k = kern(50)[0].detach().double()
    conv = fft_conv(torch.from_numpy(u)[None], torch.cat([k, torch.zeros_like(k)], -1))[0].numpy()
    assert np.allclose(conv, _recurrence(kern, u), atol=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(0, 1000))
def test_fft_conv_matches_direct_convolution(length, seed):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((2, length))
    past = rng.standard_normal((2, length))
    future = rng.standard_normal((2, length))
    k = np.concatenate([past, future], -1)
    got = fft_conv(torch.from_numpy(u)[None], torch.from_numpy(k))[0].numpy()
    # circular layout: k[L + m] weights u[t + (L - m)]
    want = np.zeros_like(u)
    for t in range(length):
        for j in range(length):
            if j <= t:
                want[:, t] += past[:, t - j] * u[:, j]
            else:
                want[:, t] += k[:, 2 * length - (j - t)] * u[:, j]
    assert np.allclose(got, want, atol=1e-9)


def test_bidirectional_layer_sees_future_and_causal_does_not():
    torch.manual_seed(1)
    x = torch.randn(1, 30, 4)
    y = x.clone()
    y[:, 20] += 1.0
    causal, bidir = S4DLayer(4, bidirectional=False), S4DLayer(4, bidirectional=True)
    assert torch.allclose(causal(x)[:, :20], causal(y)[:, :20], atol=1e-6)
    assert not torch.allclose(bidir(x)[:, :20], bidir(y)[:, :20])


@pytest.mark.parametrize("family", FAMILIES)
def test_token_shape_and_layer_capture(family):
    enc = build_encoder(tiny_encoder_cfg(family, dim=16, depth=3))
    out = encode(enc, torch.randn(2, 12, 600), capture_layers=True)
    assert out.tokens.shape == (2, 300, 16)
    assert len(out.per_layer) == 4 + 3
    assert all(t.shape[:2] == (2, 300) for t in out.per_layer)
    assert enc.num_tokens(600) == 300


@pytest.mark.parametrize("family", FAMILIES)
def test_causal_encoder_ignores_the_future(family):
    enc = build_encoder(tiny_encoder_cfg(family, causal=True, dim=16, depth=2))
    x = torch.randn(2, 12, 200)
    y = x.clone()
    y[..., 120:] += torch.randn_like(y[..., 120:])
    a, b = encode(enc, x).tokens, encode(enc, y).tokens
    assert torch.allclose(a[:, :60], b[:, :60], atol=1e-5)
    assert not torch.allclose(a[:, 60:], b[:, 60:], atol=1e-3)


@pytest.mark.parametrize("family", FAMILIES)
def test_noncausal_encoder_sees_the_future(family):
    enc = build_encoder(tiny_encoder_cfg(family, causal=False, dim=16, depth=2))
    x = torch.randn(2, 12, 200)
    y = x.clone()
    y[..., 150:] += 1.0
    # tokens just before the change (token 75) lie inside every family's receptive field
    assert not torch.allclose(encode(enc, x).tokens[:, 66:75], encode(enc, y).tokens[:, 66:75], atol=1e-4)


def test_seeded_construction_and_groups():
    a = build_encoder(tiny_encoder_cfg(seed=3))
    b = build_encoder(tiny_encoder_cfg(seed=3))
    c = build_encoder(tiny_encoder_cfg(seed=4))
    for (ka, va), (_, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert torch.equal(va, vb), ka
    assert any(not torch.equal(va, vc) for va, vc in zip(a.state_dict().values(), c.state_dict().values()))
    groups = a.parameter_groups()
    ids = [id(p) for ps in groups.values() for p in ps]
    assert len(ids) == len(set(ids)) == len(list(a.parameters()))
    counts = count_parameters(a)
    assert counts["total"] == counts["stem"] + counts["backbone"]


def test_encode_restores_training_flag():
    enc = build_encoder(tiny_encoder_cfg())
    enc.train()
    encode(enc, torch.randn(1, 12, 40))
    assert enc.training


def test_bad_input_shape():
    enc = build_encoder(tiny_encoder_cfg())
    with pytest.raises(ValueError, match="expected input"):
        enc(torch.randn(1, 3, 40))


def test_rotary_scores_depend_on_offset_only():
    cos, sin = rotary_tables(32, 8, dtype=torch.float64)
    q = torch.randn(8, dtype=torch.float64).expand(1, 1, 32, 8)
    k = torch.randn(8, dtype=torch.float64).expand(1, 1, 32, 8)
    rq, rk = apply_rotary(q, cos, sin)[0, 0], apply_rotary(k, cos, sin)[0, 0]
    scores = rq @ rk.T
    for off in (0, 3, 11):
        diag = torch.diagonal(scores, offset=off)
        assert torch.allclose(diag, diag[0].expand_as(diag), atol=1e-10)
    # rotation preserves norms
    assert torch.allclose(rq.norm(dim=-1), q[0, 0].norm(dim=-1))


def test_net1d_width_validation():
    cfg = tiny_encoder_cfg("net1d", dim=16, depth=2)
    cfg.backbone.net1d_widths = (8, 12)
    with pytest.raises(ValueError, match="end at model_dim"):
        build_encoder(cfg)


def test_odd_state_dim_rejected():
    with pytest.raises(ConfigError):
        from tsrep.config import BackboneConfig

        BackboneConfig(state_dim=5)


def test_default_encoder_shapes():
    enc = build_encoder(EncoderConfig())
    assert enc.model_dim == 512 and len(enc.backbone.layers) == 4
