"""CSV tables and static figures for analysis products."""

from __future__ import annotations

import csv
import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIT_COLUMNS = ["name", "C", "alpha", "L0", "r_squared", "model", "converged", "degenerate"]


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", str(name)).strip("_") or "item"


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: list, rows: list) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def write_fits(fits: list, out_dir: Path) -> list:
    """fits: dicts with keys name, N, y, fit (FitResult)."""
    rows = [[f["name"]] + [f["fit"].row()[c] for c in FIT_COLUMNS[1:]] for f in fits]
    files = [_write_csv(out_dir / "fits.csv", FIT_COLUMNS, rows)]
    for f in fits:
        n, y, fit = np.asarray(f["N"], float), np.asarray(f["y"], float), f["fit"]
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        ax.loglog(n, y, "o", label="observed")
        grid = np.geomspace(n.min(), n.max(), 200)
        ax.loglog(grid, fit.predict(grid), "-", label=f"fit, alpha={fit.alpha:.3f}")
        ax.set_xlabel("N")
        ax.set_ylabel(f.get("ylabel", "loss"))
        ax.set_title(str(f["name"]))
        ax.legend(fontsize=8)
        fig.tight_layout()
        files.append(_save(fig, out_dir / f"fit_{_slug(f['name'])}.png"))
    return files


def write_cka(matrices: dict, out_dir: Path) -> list:
    files = []
    for name, m in matrices.items():
        slug = _slug(name)
        rows = [[lab] + list(m.values[i]) for i, lab in enumerate(m.labels)]
        files.append(_write_csv(out_dir / f"cka_{slug}.csv", ["layer"] + list(m.labels), rows))
        k = len(m.labels)
        fig, ax = plt.subplots(figsize=(1.0 + 0.5 * k, 0.8 + 0.5 * k))
        im = ax.imshow(m.values, vmin=0.0, vmax=1.0, cmap="viridis")
        ax.set_xticks(range(k), m.labels, rotation=90, fontsize=7)
        ax.set_yticks(range(k), m.labels, fontsize=7)
        ax.set_title(str(name), fontsize=9)
        fig.colorbar(im, ax=ax, fraction=0.046)
        fig.tight_layout()
        files.append(_save(fig, out_dir / f"cka_{slug}.png"))
    return files


def write_label_efficiency(curves: dict, out_dir: Path) -> list:
    """curves: model -> list of rows with fraction, train_size, error."""
    rows = [[model, r["fraction"], r["train_size"], r["error"]] for model, rs in curves.items() for r in rs]
    files = [_write_csv(out_dir / "label_efficiency.csv", ["model", "fraction", "train_size", "error"], rows)]
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    for model, rs in curves.items():
        rs = sorted(rs, key=lambda r: r["train_size"])
        ax.plot([r["train_size"] for r in rs], [r["error"] for r in rs], "o-", label=str(model))
    ax.set_xscale("log")
    ax.set_xlabel("training samples")
    ax.set_ylabel("error")
    ax.legend(fontsize=8)
    fig.tight_layout()
    files.append(_save(fig, out_dir / "label_efficiency.png"))
    return files


def write_correlations(items: list, out_dir: Path) -> list:
    """items: dicts with name, x, y, r, p."""
    rows = [[it["name"], it["r"], it["p"], len(it["x"])] for it in items]
    files = [_write_csv(out_dir / "spearman.csv", ["name", "r", "p", "n"], rows)]
    for it in items:
        fig, ax = plt.subplots(figsize=(4, 3.2))
        ax.plot(it["x"], it["y"], "o")
        ax.set_xlabel(it.get("xlabel", "x"))
        ax.set_ylabel(it.get("ylabel", "y"))
        ax.set_title(f"{it['name']}: r={it['r']:.3f}, p={it['p']:.3f}", fontsize=9)
        fig.tight_layout()
        files.append(_save(fig, out_dir / f"spearman_{_slug(it['name'])}.png"))
    return files


def write_ranks(tables: dict, out_dir: Path) -> list:
    rows = []
    for task, t in tables.items():
        for name, est, rank in zip(t.names, t.estimates, t.ranks):
            rows.append([task, name, est, rank, t.metric, t.resamples, t.confidence])
    return [_write_csv(out_dir / "ranks.csv", ["task", "model", "estimate", "rank", "metric", "resamples", "confidence"], rows)]


def emit_report(products: dict, out_dir) -> list:
    """Write every product present in ``products``; returns the written paths.

    Recognized keys: ``fits``, ``cka``, ``label_efficiency``,
    ``correlations``, ``ranks``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    writers = {
        "fits": write_fits,
        "cka": write_cka,
        "label_efficiency": write_label_efficiency,
        "correlations": write_correlations,
        "ranks": write_ranks,
    }
    unknown = set(products) - set(writers)
    if unknown:
        raise ValueError(f"unknown report products: {sorted(unknown)}")
    files = []
    for key, fn in writers.items():
        if products.get(key):
            files.extend(fn(products[key], out_dir))
    return files
