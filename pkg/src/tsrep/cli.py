"""Command-line entry point.

Usage::

    tsrep synth-data --out DIR [--config C] [--set section.key=value ...]
    tsrep pretrain --data M.tsv [--val M.tsv] --out DIR
    tsrep continual --checkpoint DIR --data M.tsv --out DIR
    tsrep evaluate --checkpoint DIR --task M.tsv --mode finetune|frozen|linear --out DIR
    tsrep label-eff --checkpoint DIR --task M.tsv --mode MODE --out DIR
    tsrep analyze cka|scaling|rank|spearman|label-efficiency --in ... --out DIR

Every output directory receives ``config.cfg`` holding the fully resolved
configuration. When ``--out`` is omitted the directory defaults to
``$TSREP_OUT_ROOT/<subcommand>``. Failures print one line
``tsrep: error: <category>: <message>`` to stderr and exit with 2 (config),
3 (data), 4 (numerical) or 5 (I/O).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from collections import OrderedDict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, dump_config, load_config, parse_config
from .data import DataError, collect_windows, generate_synthetic, load_manifest, make_folds

log = logging.getLogger("tsrep")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
EXIT_IO = 5
OUT_ROOT_ENV = "TSREP_OUT_ROOT"
KIND_ALIASES = {"classification": "multilabel_classification", "regression": "regression"}


class UsageError(ConfigError):
    """Bad command line (unknown flag, missing argument)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# shared helpers


def _load_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        cfg = load_config(path)
    overrides = []
    for item in getattr(args, "set", None) or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        dotted, value = item.split("=", 1)
        section, key = dotted.strip().rsplit(".", 1)
        overrides.append(f"[{section}]\n{key} = {value}\n")
    if overrides:
        cfg = parse_config("".join(overrides), base=cfg)
    return cfg


def _out_dir(args, default_name: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        root = os.environ.get(OUT_ROOT_ENV)
        if not root:
            raise ConfigError(f"--out is required when {OUT_ROOT_ENV} is unset")
        out = Path(root) / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: RunConfig, out: Path) -> None:
    (out / "config.cfg").write_text(dump_config(cfg), encoding="utf-8")


def _windows(path, cfg: RunConfig):
    return collect_windows(load_manifest(path), cfg.data.window_len, cfg.data.stride)


def _train_val(args, cfg: RunConfig):
    """Training and validation windows: explicit --val, else the configured subject fold."""
    manifest = load_manifest(args.data)
    if args.val:
        return collect_windows(manifest, cfg.data.window_len, cfg.data.stride).values, _windows(args.val, cfg).values
    try:
        folds = make_folds(manifest, cfg.data.num_folds, cfg.data.seed, cfg.data.val_fold)
    except DataError as exc:
        log.warning("no validation split (%s); training on every record", exc)
        return collect_windows(manifest, cfg.data.window_len, cfg.data.stride).values, None
    train = collect_windows(manifest.subset(folds.train_indices()), cfg.data.window_len, cfg.data.stride)
    val = collect_windows(manifest.subset(folds.val_indices()), cfg.data.window_len, cfg.data.stride)
    return train.values, val.values


def _task(args, cfg: RunConfig):
    from .evaluation import TaskSpec, task_from_manifest

    kind = KIND_ALIASES[args.kind]
    if args.task:
        return task_from_manifest(args.task, kind, cfg.data.window_len, cfg.data.num_folds, cfg.data.seed)
    if not (args.train and args.test):
        raise UsageError("either --task or both --train and --test are required")
    train = load_manifest(args.train)
    return TaskSpec(kind, train.num_targets, train, load_manifest(args.val) if args.val else None, load_manifest(args.test), cfg.data.window_len)


def _display_name(path: Path) -> str:
    # run_dir/checkpoint reads better as run_dir
    return path.parent.name if path.name == "checkpoint" and path.parent.name else path.name


def _read_csv(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path}: no data rows")
    return rows


def _column(rows: list, names: Sequence[str], path) -> str:
    for n in names:
        if n in rows[0]:
            return n
    raise DataError(f"{path}: expected one of the columns {list(names)}, found {list(rows[0])}")


def _float(v, path) -> float:
    try:
        return float(v)
    except (TypeError, ValueError):
        raise DataError(f"{path}: non-numeric value {v!r}") from None


def _grouped(rows: list, path, key_col: Optional[str], default: str) -> "OrderedDict[str, list]":
    groups: OrderedDict = OrderedDict()
    for row in rows:
        groups.setdefault(row[key_col] if key_col else default, []).append(row)
    return groups


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth_data(args, cfg: RunConfig) -> Path:
    out = _out_dir(args, "synthetic")
    manifest = generate_synthetic(cfg.data.synthetic, out)
    _echo_config(cfg, out)
    log.info("%d records -> %s", len(manifest), out)
    return out


def cmd_pretrain(args, cfg: RunConfig) -> Path:
    from .trainer import pretrain

    out = _out_dir(args, "pretrain")
    train, val = _train_val(args, cfg)
    if len(train) == 0:
        raise DataError("no training windows (records shorter than data.window_len?)")
    pretrain(train, cfg.objective, cfg.encoder, cfg.train, val, out)
    _echo_config(cfg, out)
    return out


def cmd_continual(args, cfg: RunConfig) -> Path:
    from .trainer import continual_pretrain

    out = _out_dir(args, "continual")
    train, val = _train_val(args, cfg)
    if len(train) == 0:
        raise DataError("no training windows")
    continual_pretrain(args.checkpoint, train, cfg.train, out, val, args.objective)
    _echo_config(cfg, out)
    return out


def cmd_evaluate(args, cfg: RunConfig) -> Path:
    from .evaluation import adapt

    out = _out_dir(args, "evaluate")
    _, report = adapt(args.checkpoint, _task(args, cfg), args.mode, cfg.eval)
    report.write(out)
    _echo_config(cfg, out)
    log.info("%s macro %s = %.4f", args.mode, report.metric, report.macro)
    return out


def cmd_label_eff(args, cfg: RunConfig) -> Path:
    from .analysis.report import write_label_efficiency
    from .evaluation import label_efficiency

    out = _out_dir(args, "label-eff")
    rows = label_efficiency(args.checkpoint, _task(args, cfg), None, args.mode, cfg.eval, cfg.data.seed)
    for r in rows:
        r["report"].write(out / f"fraction_{r['fraction']:g}")
    write_label_efficiency({args.name: rows}, out)
    _echo_config(cfg, out)
    return out


def cmd_analyze(args, cfg: RunConfig) -> Path:
    from .analysis import emit_report

    out = _out_dir(args, f"analyze-{args.what}")
    products = ANALYSES[args.what](args, cfg)
    emit_report(products, out)
    _echo_config(cfg, out)
    return out


def _analyze_cka(args, cfg: RunConfig) -> dict:
    from .analysis import STAGES, inter_model_cka, layer_activations, layer_cka_matrix, layer_labels, load_activations
    from .evaluation import resolve_encoder

    a = cfg.analysis
    kw = dict(sigma=a.cka_sigma, sigma_mode=a.cka_sigma_mode, estimator=a.cka_estimator)
    probe = None
    matrices = OrderedDict()
    encoders, names = [], []
    for i, src in enumerate(args.inputs):
        src = Path(src)
        name = args.names[i] if args.names else _display_name(src)
        if (src / "activations.json").is_file():
            acts, labels = load_activations(src)
            matrices[f"layers_{name}"] = layer_cka_matrix(acts, labels, standardize_features=a.cka_standardize, kernel=a.cka_kernel, **kw)
            continue
        if probe is None:
            if not args.probe:
                raise UsageError("--probe manifest is required for checkpoint inputs")
            probe = _windows(args.probe, cfg).values
        enc = resolve_encoder(src)
        acts = layer_activations(enc, probe, a.cka_pooling, a.cka_num_samples, a.seed)
        matrices[f"layers_{name}"] = layer_cka_matrix(
            acts, layer_labels(enc), standardize_features=a.cka_standardize, kernel=a.cka_kernel, **kw
        )
        encoders.append(enc)
        names.append(name)
    if len(encoders) > 1:
        for stage in [args.stage] if args.stage else STAGES:
            matrices[f"stage_{stage}"] = inter_model_cka(
                encoders, stage, probe, names, pooling=a.cka_pooling, num_samples=a.cka_num_samples, seed=a.seed, **kw
            )
    return {"cka": matrices}


def _analyze_scaling(args, cfg: RunConfig) -> dict:
    from .analysis import fit_power_law

    fits = []
    for path in args.inputs:
        rows = _read_csv(path)
        n_col = _column(rows, ("N", "n", "size", "dataset_size"), path)
        y_col = _column(rows, ("y", "loss", "val_loss", "error", "value"), path)
        name_col = "name" if "name" in rows[0] else None
        for name, grp in _grouped(rows, path, name_col, Path(path).stem).items():
            pts = sorted((_float(r[n_col], path), _float(r[y_col], path)) for r in grp)
            n, y = [p[0] for p in pts], [p[1] for p in pts]
            floor = {"floor": True, "pure": False, "auto": len(n) >= 4}[args.model]
            fits.append({"name": name, "N": n, "y": y, "fit": fit_power_law(n, y, with_floor=floor), "ylabel": y_col})
    return {"fits": fits}


def _analyze_rank(args, cfg: RunConfig) -> dict:
    from .analysis import bootstrap_rank
    from .evaluation import MetricReport, read_predictions

    reports = []
    for src in args.inputs:
        try:
            preds, labels, summary = read_predictions(src)
        except FileNotFoundError as exc:
            raise DataError(f"not a report directory: {src} ({exc.filename} missing)") from None
        reports.append(MetricReport(summary["mode"], summary["metric"], np.array([]), summary["macro"], [], preds, labels))
    names = list(args.names) if args.names else [_display_name(Path(s)) for s in args.inputs]
    a = cfg.analysis
    table = bootstrap_rank(reports, names, a.bootstrap_resamples, a.confidence, a.seed)
    return {"ranks": {args.task_name: table}}


def _analyze_spearman(args, cfg: RunConfig) -> dict:
    from .analysis import spearman

    method = args.method or cfg.analysis.spearman_method
    items = []
    for path in args.inputs:
        rows = _read_csv(path)
        x_col = _column(rows, ("x",), path)
        y_col = _column(rows, ("y",), path)
        name_col = "name" if "name" in rows[0] else None
        for name, grp in _grouped(rows, path, name_col, Path(path).stem).items():
            x = [_float(r[x_col], path) for r in grp]
            y = [_float(r[y_col], path) for r in grp]
            r, p = spearman(x, y, method, args.alternative)
            items.append({"name": name, "x": x, "y": y, "r": r, "p": p})
    return {"correlations": items}


def _analyze_label_efficiency(args, cfg: RunConfig) -> dict:
    curves: OrderedDict = OrderedDict()
    for i, path in enumerate(args.inputs):
        rows = _read_csv(path)
        model_col = "model" if "model" in rows[0] and not args.names else None
        default = args.names[i] if args.names else Path(path).parent.name
        for name, grp in _grouped(rows, path, model_col, default).items():
            curves.setdefault(name, []).extend(
                {
                    "fraction": _float(r.get("fraction", "nan"), path),
                    "train_size": int(_float(r["train_size"], path)),
                    "error": _float(r["error"], path),
                }
                for r in grp
            )
    return {"label_efficiency": curves}


ANALYSES = {
    "cka": _analyze_cka,
    "scaling": _analyze_scaling,
    "rank": _analyze_rank,
    "spearman": _analyze_spearman,
    "label-efficiency": _analyze_label_efficiency,
}


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tsrep", description="Self-supervised pretraining, probing and analysis for multichannel time series.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    sub.required = True

    def common(p):
        p.add_argument("--config", help="run config file (sections data, encoder, objective, train, eval, analysis)")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value; repeatable")
        p.add_argument("--out", help=f"output directory (default: ${OUT_ROOT_ENV}/<subcommand>)")

    p = sub.add_parser("synth-data", help="write a synthetic corpus and manifest")
    common(p)
    p.set_defaults(func=cmd_synth_data)

    for name, func, help_ in (("pretrain", cmd_pretrain, "self-supervised pretraining"), ("continual", cmd_continual, "continue pretraining a checkpoint")):
        p = sub.add_parser(name, help=help_)
        common(p)
        p.add_argument("--data", required=True, help="training manifest")
        p.add_argument("--val", help="validation manifest (default: the configured subject fold of --data)")
        if name == "continual":
            p.add_argument("--checkpoint", required=True, help="checkpoint directory to resume from")
            p.add_argument("--objective", help="expected objective kind of the checkpoint")
        p.set_defaults(func=func)

    for name, func, help_ in (("evaluate", cmd_evaluate, "adapt a checkpoint to a labeled task"), ("label-eff", cmd_label_eff, "label-efficiency sweep")):
        p = sub.add_parser(name, help=help_)
        common(p)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--task", help="labeled manifest split by subject into train/val/test")
        p.add_argument("--train", help="explicit training manifest (instead of --task)")
        p.add_argument("--val", help="explicit validation manifest")
        p.add_argument("--test", help="explicit test manifest")
        p.add_argument("--mode", choices=("finetune", "frozen", "linear"), default="finetune")
        p.add_argument("--kind", choices=tuple(KIND_ALIASES), default="classification")
        if name == "label-eff":
            p.add_argument("--name", default="model", help="model name in the output table")
        p.set_defaults(func=func)

    p = sub.add_parser("analyze", help="post-hoc analyses producing CSV tables and figures")
    common(p)
    p.add_argument("what", choices=tuple(ANALYSES))
    p.add_argument("--in", dest="inputs", nargs="+", required=True, help="input files or directories")
    p.add_argument("--names", nargs="+", help="display names, one per input")
    p.add_argument("--probe", help="probe manifest (cka on checkpoints)")
    p.add_argument("--stage", choices=("early", "mid", "late"), help="inter-model stage (cka; default all)")
    p.add_argument("--model", choices=("auto", "floor", "pure"), default="auto", help="power-law form (scaling)")
    p.add_argument("--method", choices=("t", "exact", "auto"), help="p-value method (spearman)")
    p.add_argument("--alternative", choices=("two-sided", "greater", "less"), default="two-sided")
    p.add_argument("--task-name", default="task", help="task label in ranks.csv (rank)")
    p.set_defaults(func=cmd_analyze)
    return parser


def _category(exc: BaseException) -> tuple:
    from .trainer import NumericalError

    if isinstance(exc, ConfigError):
        return "config", EXIT_CONFIG
    if isinstance(exc, NumericalError):
        return "numerical", EXIT_NUMERICAL
    if isinstance(exc, (DataError, CheckpointError, ValueError)):
        return "data", EXIT_DATA
    if isinstance(exc, OSError):
        return "io", EXIT_IO
    return None, 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        cfg = _load_config(args)
        out = args.func(args, cfg)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:
        category, code = _category(exc)
        if category is None:
            raise
        msg = " ".join(str(exc).split())
        print(f"tsrep: error: {category}: {msg}", file=sys.stderr)
        return code
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
