"""Checkpoint directories: a JSON manifest plus one raw float32 blob per tensor.

Layout::

    <dir>/manifest.json      format version, config echo, provenance, tensor index
    <dir>/blobs/<name>.f32   little-endian float32, C order, shape in manifest

Tensors cover the objective module (student encoder, heads, teacher,
codebooks, prototypes, step counters) and, when present, the optimizer
state. Integer tensors are stored as float32 and cast back on load.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Optional

import numpy as np
import torch

FORMAT_VERSION = 1
MANIFEST = "manifest.json"


class CheckpointError(ValueError):
    pass


def _blob_name(key: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", key) + ".f32"


def _dtype_name(t: torch.Tensor) -> str:
    return str(t.dtype).replace("torch.", "")


def _write_tensor(t: torch.Tensor, path: Path) -> None:
    arr = t.detach().cpu().to(torch.float32).contiguous().numpy()
    arr.astype("<f4", copy=False).tofile(str(path))


def _read_tensor(path: Path, shape: list, dtype: str, key: str) -> torch.Tensor:
    expected = int(np.prod(shape)) * 4 if shape else 4
    if not path.is_file():
        raise CheckpointError(f"missing blob for parameter group {key!r}")
    size = path.stat().st_size
    if size != expected:
        raise CheckpointError(f"blob for parameter group {key!r} has {size} bytes, expected {expected}")
    arr = np.fromfile(str(path), dtype="<f4").reshape(shape)
    return torch.from_numpy(arr.copy()).to(getattr(torch, dtype))


def _flatten_optimizer(opt_state: dict) -> tuple:
    tensors, meta = {}, {"param_groups": opt_state["param_groups"], "state": {}}
    for idx, st in sorted(opt_state["state"].items(), key=lambda kv: int(kv[0])):
        entry = {}
        for name, val in sorted(st.items()):  # load_state_dict reorders keys
            if torch.is_tensor(val):
                tensors[f"optimizer.{idx}.{name}"] = val
                entry[name] = "tensor"
            else:
                entry[name] = val
        meta["state"][str(idx)] = entry
    return tensors, meta


def save_checkpoint(
    path: str | Path,
    model_state: dict,
    config: dict,
    optimizer_state: Optional[dict] = None,
    extra: Optional[dict] = None,
) -> Path:
    """Write a checkpoint directory; existing blobs of the same names are overwritten."""
    path = Path(path)
    blob_dir = path / "blobs"
    blob_dir.mkdir(parents=True, exist_ok=True)
    tensors = {f"model.{k}": v for k, v in model_state.items()}
    opt_meta = None
    if optimizer_state is not None:
        opt_tensors, opt_meta = _flatten_optimizer(optimizer_state)
        tensors.update(opt_tensors)
    index = []
    for key, t in tensors.items():
        fname = _blob_name(key)
        _write_tensor(t, blob_dir / fname)
        index.append({"name": key, "shape": list(t.shape), "dtype": _dtype_name(t), "file": fname})
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "extra": extra or {},
        "optimizer": opt_meta,
        "tensors": index,
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    mpath = path / MANIFEST
    if not mpath.is_file():
        raise CheckpointError(f"no checkpoint manifest in {path}")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} unsupported (expected {FORMAT_VERSION})")
    return manifest


def load_checkpoint(path: str | Path) -> dict:
    """Return ``{"config", "extra", "model_state", "optimizer_state"}``."""
    path = Path(path)
    manifest = read_manifest(path)
    model_state, opt_tensors = {}, {}
    for entry in manifest["tensors"]:
        t = _read_tensor(path / "blobs" / entry["file"], entry["shape"], entry["dtype"], entry["name"])
        name = entry["name"]
        if name.startswith("model."):
            model_state[name[len("model."):]] = t
        else:
            opt_tensors[name] = t
    opt_state = None
    meta = manifest.get("optimizer")
    if meta is not None:
        state = {}
        for idx, entry in meta["state"].items():
            state[int(idx)] = {
                k: (opt_tensors[f"optimizer.{idx}.{k}"] if v == "tensor" else v) for k, v in entry.items()
            }
        opt_state = {"state": state, "param_groups": meta["param_groups"]}
    return {
        "config": manifest["config"],
        "extra": manifest.get("extra", {}),
        "model_state": model_state,
        "optimizer_state": opt_state,
    }


def check_compatible(module: torch.nn.Module, state: dict) -> None:
    """Raise naming the first tensor whose name or shape does not match."""
    own = module.state_dict()
    for key, t in own.items():
        if key not in state:
            raise CheckpointError(f"checkpoint lacks tensor {key!r}")
        if tuple(state[key].shape) != tuple(t.shape):
            raise CheckpointError(
                f"shape mismatch for {key!r}: checkpoint {tuple(state[key].shape)} vs model {tuple(t.shape)}"
            )
    extra = sorted(set(state) - set(own))
    if extra:
        raise CheckpointError(f"checkpoint has unexpected tensor {extra[0]!r}")
