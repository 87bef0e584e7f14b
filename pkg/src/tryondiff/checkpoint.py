"""Named-tensor archives and stage checkpoints.

An archive is a directory holding one raw little-endian binary file per
tensor plus ``manifest.json`` recording names, shapes, dtypes and
arbitrary metadata. Writing is fully deterministic, so save -> load ->
save round-trips byte-identically.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch


class CheckpointError(RuntimeError):
    pass


_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "int32": "<i4"}


def save_tensor_archive(path: str | Path, tensors: dict, meta: dict | None = None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = {}
    for idx, name in enumerate(sorted(tensors)):
        arr = np.asarray(tensors[name])
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported tensor dtype {dtype} for {name!r}")
        fname = f"t{idx:05d}.bin"
        arr.astype(_DTYPES[dtype]).tofile(path / fname)
        entries[name] = {"shape": list(arr.shape), "dtype": dtype, "file": fname}
    manifest = {"format": "tensor-archive-v1", "meta": meta or {}, "tensors": entries}
    with open(path / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)


def load_tensor_archive(path: str | Path) -> tuple[dict, dict]:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise CheckpointError(f"missing manifest {mpath}")
    with open(mpath) as f:
        manifest = json.load(f)
    tensors = {}
    for name, entry in manifest["tensors"].items():
        arr = np.fromfile(path / entry["file"], dtype=_DTYPES[entry["dtype"]])
        tensors[name] = arr.astype(entry["dtype"]).reshape(entry["shape"])
    return tensors, manifest.get("meta", {})


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(
    path: str | Path,
    stage: str,
    state_dict: dict,
    config: dict,
    resolution: int,
    step: int,
    extra: dict | None = None,
):
    if stage not in ("scm", "codec", "tgm"):
        raise CheckpointError(f"unknown stage {stage!r}")
    tensors = {k: v.detach().cpu().numpy() for k, v in state_dict.items()}
    meta = {
        "stage": stage,
        "config_hash": config_hash(config),
        "resolution": resolution,
        "step": step,
    }
    meta.update(extra or {})
    save_tensor_archive(path, tensors, meta)


def load_checkpoint(path: str | Path, model: torch.nn.Module | None = None) -> dict:
    """Load a checkpoint; when ``model`` is given, its architecture must
    match the stored tensor shapes exactly."""
    tensors, meta = load_tensor_archive(path)
    state = {k: torch.from_numpy(v.copy()) for k, v in tensors.items()}
    if model is not None:
        own = model.state_dict()
        if set(own) != set(state):
            raise CheckpointError(
                f"architecture mismatch: checkpoint keys differ from model keys at {path}"
            )
        for k in own:
            if tuple(own[k].shape) != tuple(state[k].shape):
                raise CheckpointError(
                    f"architecture mismatch for {k!r}: "
                    f"{tuple(state[k].shape)} vs {tuple(own[k].shape)}"
                )
        model.load_state_dict(state)
    return {"state_dict": state, "meta": meta}
