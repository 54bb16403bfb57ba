import numpy as np
import pytest
import torch

from tsrep.config import BackboneConfig, EncoderConfig, ObjectiveConfig, StemConfig, SyntheticSpec
from tsrep.data import synthetic_windows

torch.set_num_threads(1)


def tiny_encoder_cfg(family="ssm", causal=False, dim=16, depth=2, dropout=0.0, channels=12, seed=0):
    return EncoderConfig(
        stem=StemConfig(in_channels=channels, out_dims=(dim,) * 4),
        backbone=BackboneConfig(family=family, depth=depth, model_dim=dim, dropout=dropout, causal=causal, num_heads=2),
        seed=seed,
    )


def tiny_objective_cfg(kind, **kw):
    small = {
        "dinosr": {"codebook_sizes": (8, 8)},
        "hubertpp": {"prototype_sizes": (8, 16), "freeze_prototypes_steps": 2},
        "jepa": {"min_context_tokens": 4},
        "cpc": {"cpc_steps": 4},
    }.get(kind, {})
    small.update(kw)
    return ObjectiveConfig(kind=kind, **small)


@pytest.fixture(scope="session")
def windows():
    """48 unlabeled synthetic windows of 600 samples."""
    return synthetic_windows(SyntheticSpec(num_records=16, seed=3)).values


@pytest.fixture(scope="session")
def short_windows(windows):
    """Same windows cut to 120 samples (60 tokens) for fast objective tests."""
    return np.ascontiguousarray(windows[:, :, :120])


ACCEPTANCE = []  # (number, passed, detail) filled by test_acceptance


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
