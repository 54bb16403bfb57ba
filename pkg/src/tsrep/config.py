"""Run configuration: dataclasses plus a sectioned key-value text format.

Config files are INI-style. Dotted section names express nesting
(``[encoder.stem]``), values are Python literals where they parse as such,
and ``@include other.cfg`` pulls in another file before the remaining lines
so that later keys override included ones. Unknown sections or keys are
rejected.
"""

from __future__ import annotations

import ast
import configparser
import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass
class SyntheticSpec:
    num_records: int = 64
    channels: int = 12
    length_samples: int = 1800
    seed: int = 0
    task: str = "none"  # band_power | rate_class | none
    sampling_rate_hz: float = 240.0
    records_per_subject: int = 1
    noise_std: float = 0.3

    def __post_init__(self):
        if self.task not in ("band_power", "rate_class", "none"):
            raise ConfigError(f"unknown synthetic task {self.task!r}")


@dataclass
class DataConfig:
    window_len: int = 600
    stride: Optional[int] = None  # defaults to window_len
    num_folds: int = 10
    val_fold: int = 0
    seed: int = 0
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)


@dataclass
class StemConfig:
    in_channels: int = 12
    out_dims: tuple = (512, 512, 512, 512)
    kernel_sizes: tuple = (3, 1, 1, 1)
    strides: tuple = (2, 1, 1, 1)
    dilations: tuple = (1, 1, 1, 1)
    use_batch_norm: bool = True

    def __post_init__(self):
        self.out_dims = tuple(self.out_dims)
        self.kernel_sizes = tuple(self.kernel_sizes)
        self.strides = tuple(self.strides)
        self.dilations = tuple(self.dilations)
        lengths = {len(self.out_dims), len(self.kernel_sizes), len(self.strides), len(self.dilations)}
        if lengths != {4}:
            raise ConfigError("stem out_dims, kernel_sizes, strides and dilations must all have length 4")
        if self.in_channels < 1:
            raise ConfigError("stem in_channels must be positive")

    @property
    def stride_product(self) -> int:
        prod = 1
        for s in self.strides:
            prod *= s
        return prod


_DEFAULT_DEPTH = {"ssm": 4, "transformer": 6, "net1d": 7}


@dataclass
class BackboneConfig:
    family: str = "ssm"  # ssm | transformer | net1d
    depth: Optional[int] = None  # family default when unset
    model_dim: int = 512
    state_dim: int = 8
    dropout: float = 0.2
    causal: bool = False
    num_heads: int = 8
    ff_mult: int = 4
    net1d_widths: Optional[tuple] = None
    net1d_kernel: int = 7

    def __post_init__(self):
        if self.family not in _DEFAULT_DEPTH:
            raise ConfigError(f"unknown backbone family {self.family!r}")
        if self.depth is None:
            self.depth = _DEFAULT_DEPTH[self.family]
        if self.model_dim <= 0:
            raise ConfigError("model_dim must be positive")
        if self.family == "ssm" and self.state_dim <= 0:
            raise ConfigError("state_dim must be positive")
        if self.state_dim % 2:
            raise ConfigError("state_dim must be even (complex-conjugate pairs)")
        if self.net1d_widths is not None:
            self.net1d_widths = tuple(self.net1d_widths)


@dataclass
class EncoderConfig:
    stem: StemConfig = field(default_factory=StemConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    seed: int = 0


OBJECTIVE_KINDS = ("data2vec", "dinosr", "jepa", "cpc", "hubertpp")


@dataclass
class ObjectiveConfig:
    kind: str = "cpc"
    # EMA teacher
    ema_momentum: float = 0.999
    ema_momentum_end: Optional[float] = None
    ema_schedule_steps: int = 0
    # span masking (data2vec, dinosr, hubertpp)
    mask_prob: float = 0.065
    mask_span: int = 10
    # data2vec / jepa
    top_k_layers: int = 2
    smooth_l1_beta: float = 1.0
    # dinosr
    codebook_sizes: tuple = (256, 256)
    codebook_momentum: float = 0.9
    dinosr_temperature: float = 1.0
    # jepa
    context_frac_min: float = 0.85
    context_frac_max: float = 1.0
    num_pred_blocks: int = 4
    pred_frac_min: float = 0.15
    pred_frac_max: float = 0.20
    min_context_tokens: int = 64
    # cpc
    cpc_steps: int = 14
    # hubert++
    prototype_sizes: tuple = (128, 256)
    hubert_temperature: float = 0.1
    sinkhorn_iters: int = 3
    sinkhorn_epsilon: float = 0.05
    prototype_momentum: float = 0.99
    freeze_prototypes_steps: int = 300
    alpha: float = 0.75
    projector_dim: Optional[int] = None  # model_dim when unset

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ConfigError(f"unknown objective kind {self.kind!r}")
        self.codebook_sizes = tuple(self.codebook_sizes)
        self.prototype_sizes = tuple(self.prototype_sizes)
        if not 0.0 <= self.ema_momentum <= 1.0:
            raise ConfigError("ema_momentum must lie in [0, 1]")


@dataclass
class TrainConfig:
    learning_rate: float = 3e-3
    weight_decay: float = 1e-3
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    grad_clip: Optional[float] = None
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")


@dataclass
class EvalConfig:
    learning_rate: float = 1e-3
    lr_factor: float = 0.1
    weight_decay: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    num_heads: int = 16
    fractions: tuple = (1.0, 0.5, 0.25, 0.125)

    def __post_init__(self):
        self.fractions = tuple(self.fractions)


@dataclass
class AnalysisConfig:
    cka_sigma: float = 1.0
    cka_sigma_mode: str = "median"  # median | absolute
    cka_num_samples: int = 2500
    cka_pooling: str = "mean"  # mean | tokens
    cka_standardize: bool = True
    cka_estimator: str = "unbiased"  # unbiased | biased
    cka_kernel: str = "rbf"  # rbf | linear
    bootstrap_resamples: int = 1000
    confidence: float = 0.95
    spearman_method: str = "t"  # t | exact | auto
    seed: int = 0


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)


# ---------------------------------------------------------------------------
# text format


def _read_with_includes(path: Path, seen: tuple = ()) -> str:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    if path.resolve() in seen:
        raise ConfigError(f"include cycle through {path}")
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        stripped = line.strip()
        if stripped.startswith("@include"):
            target = stripped[len("@include"):].strip()
            if not target:
                raise ConfigError(f"{path}: empty @include")
            out.append(_read_with_includes(path.parent / target, seen + (path.resolve(),)))
        else:
            out.append(line)
    return "\n".join(out)


def _parse_value(raw: str) -> Any:
    raw = raw.strip()
    lowered = raw.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    if lowered in ("none", "null", ""):
        return None
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def _coerce(value: Any, tp: Any, where: str) -> Any:
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], where)
    if value is None:
        raise ConfigError(f"{where}: value required")
    if tp is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{where}: expected a boolean, got {value!r}")
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is tuple or origin is tuple:
        if isinstance(value, (int, float)):
            value = (value,)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(value)
    if tp is str:
        return str(value)
    return value


def _section_map(cfg: RunConfig) -> dict[str, Any]:
    """Map of dotted section name to the dataclass instance holding its keys."""
    out: dict[str, Any] = {}

    def walk(prefix: str, obj: Any) -> None:
        out[prefix] = obj
        for f in dataclasses.fields(obj):
            val = getattr(obj, f.name)
            if dataclasses.is_dataclass(val):
                walk(f"{prefix}.{f.name}", val)

    for f in dataclasses.fields(cfg):
        walk(f.name, getattr(cfg, f.name))
    return out


def _rebuild(obj: Any) -> Any:
    """Re-run __post_init__ validation on a nested dataclass tree."""
    kwargs = {}
    for f in dataclasses.fields(obj):
        val = getattr(obj, f.name)
        kwargs[f.name] = _rebuild(val) if dataclasses.is_dataclass(val) else val
    try:
        return type(obj)(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    """Parse config text (includes already expanded) over ``base`` defaults."""
    parser = configparser.ConfigParser(strict=False, interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case so typos are reported verbatim
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = base if base is not None else RunConfig()
    sections = _section_map(cfg)
    for name in parser.sections():
        if name not in sections:
            raise ConfigError(f"unknown config section [{name}]")
        target = sections[name]
        hints = typing.get_type_hints(type(target))
        names = {f.name for f in dataclasses.fields(target) if not dataclasses.is_dataclass(getattr(target, f.name))}
        keys = dict(parser.items(name))
        if isinstance(target, BackboneConfig) and "family" in keys and "depth" not in keys:
            # a family switch re-derives a depth that was only ever the old family's default
            if target.depth == _DEFAULT_DEPTH.get(target.family):
                target.depth = None
        for key, raw in keys.items():
            if key not in names:
                raise ConfigError(f"unknown config key {key!r} in section [{name}]")
            if hints[key] is str:
                value = raw.strip().strip("\"'")
            else:
                value = _coerce(_parse_value(raw), hints[key], f"[{name}] {key}")
            setattr(target, key, value)
    return _rebuild(cfg)


def load_config(path: str | Path) -> RunConfig:
    return parse_config(_read_with_includes(Path(path)))


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return "[" + ", ".join(repr(v) for v in value) + "]"
    return repr(value) if isinstance(value, (int, float)) else str(value)


def dump_config(cfg: Any) -> str:
    """Canonical text rendering of a fully resolved config.

    Accepts a RunConfig or any nested config dataclass (rendered under its
    own sections only).
    """
    if isinstance(cfg, RunConfig):
        sections = _section_map(cfg)
    else:
        sections = {}

        def walk(prefix, obj):
            sections[prefix] = obj
            for f in dataclasses.fields(obj):
                val = getattr(obj, f.name)
                if dataclasses.is_dataclass(val):
                    walk(f"{prefix}.{f.name}", val)

        walk(type(cfg).__name__.lower(), cfg)
    lines = []
    for name, obj in sections.items():
        lines.append(f"[{name}]")
        for f in dataclasses.fields(obj):
            val = getattr(obj, f.name)
            if dataclasses.is_dataclass(val):
                continue
            lines.append(f"{f.name} = {_format_value(val)}")
        lines.append("")
    return "\n".join(lines)


def config_to_dict(cfg: Any) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(cls: type, data: dict) -> Any:
    """Inverse of config_to_dict for nested config dataclasses."""
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        val = data[f.name]
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            val = config_from_dict(tp, val)
        elif isinstance(val, list):
            val = tuple(val)
        kwargs[f.name] = val
    return cls(**kwargs)
