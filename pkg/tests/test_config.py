import pytest

from tsrep.config import (
    ConfigError,
    ObjectiveConfig,
    RunConfig,
    TrainConfig,
    config_from_dict,
    config_to_dict,
    dump_config,
    load_config,
    parse_config,
)


def test_defaults():
    cfg = RunConfig()
    assert cfg.encoder.backbone.depth == 4
    assert cfg.encoder.stem.strides == (2, 1, 1, 1)
    assert cfg.train.learning_rate == 3e-3 and cfg.train.weight_decay == 1e-3
    assert cfg.objective.freeze_prototypes_steps == 300


def test_nested_sections_and_types():
    cfg = parse_config(
        """
[encoder.backbone]
family = transformer
model_dim = 64
causal = yes
[objective]
kind = hubertpp
prototype_sizes = [32, 64]
[train]
learning_rate = 1e-4
grad_clip = none
"""
    )
    assert cfg.encoder.backbone.family == "transformer"
    assert cfg.encoder.backbone.depth == 6  # family default
    assert cfg.encoder.backbone.causal is True
    assert cfg.objective.prototype_sizes == (32, 64)
    assert cfg.train.learning_rate == 1e-4
    assert cfg.train.grad_clip is None


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="leraning_rate"):
        parse_config("[train]\nleraning_rate = 0.1\n")


def test_unknown_section():
    with pytest.raises(ConfigError, match="optimizer"):
        parse_config("[optimizer]\nlr = 1\n")


@pytest.mark.parametrize(
    "text",
    [
        "[train]\nbatch_size = 2.5\n",
        "[train]\nlearning_rate = fast\n",
        "[train]\nlearning_rate = -1\n",
        "[encoder.backbone]\nfamily = rnn\n",
        "[objective]\nkind = simclr\n",
        "[encoder.stem]\nstrides = [2, 1]\n",
        "[encoder.backbone]\ncausal = 3\n",
    ],
)
def test_invalid_values(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_dump_round_trip():
    cfg = parse_config("[objective]\nkind = dinosr\ncodebook_sizes = [4, 8]\n[encoder.backbone]\nmodel_dim = 24\n")
    again = parse_config(dump_config(cfg))
    assert again == cfg
    assert dump_config(again) == dump_config(cfg)


def test_dict_round_trip():
    cfg = ObjectiveConfig(kind="jepa", num_pred_blocks=3)
    assert config_from_dict(ObjectiveConfig, config_to_dict(cfg)) == cfg
    assert config_from_dict(TrainConfig, {}) == TrainConfig()


def test_include_and_override(tmp_path):
    (tmp_path / "base.cfg").write_text("[train]\nepochs = 3\nbatch_size = 8\n")
    (tmp_path / "run.cfg").write_text("@include base.cfg\n[train]\nepochs = 5\n")
    cfg = load_config(tmp_path / "run.cfg")
    assert cfg.train.epochs == 5 and cfg.train.batch_size == 8


def test_include_cycle(tmp_path):
    (tmp_path / "a.cfg").write_text("@include b.cfg\n")
    (tmp_path / "b.cfg").write_text("@include a.cfg\n")
    with pytest.raises(ConfigError, match="cycle"):
        load_config(tmp_path / "a.cfg")
