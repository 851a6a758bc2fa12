"""Checkpoint files: human-readable JSON header + raw little-endian FP32 blob.

Layout:
    line 1:  "nsexit-checkpoint v1 <header-bytes>\\n"
    header:  JSON (variant, dims, seed, training summary, tensor manifest)
    blob:    concatenated '<f4' tensor data at the manifest's byte offsets

Save -> load round trips are bit-exact regardless of host endianness.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from nsexit.arch import ModelGraph, build_model_from_meta

MAGIC = "nsexit-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: ModelGraph, training: dict | None = None,
                    params: dict | None = None):
    """Write the model (or an explicit name->array snapshot) to `path`."""
    values = params or {t.name: t.value for t in model.params()}
    manifest = []
    blobs = []
    offset = 0
    for t in model.params():
        arr = np.ascontiguousarray(values[t.name], dtype="<f4")
        if arr.shape != t.value.shape:
            raise CheckpointError(f"snapshot shape mismatch for {t.name}")
        manifest.append({"name": t.name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format": MAGIC,
        "version": VERSION,
        "variant": model.meta["variant"],
        "stage_dims": model.meta["stage_dims"],
        "aux_dim": model.meta["aux_dim"],
        "exit_activation": model.meta["exit_activation"],
        "seed": model.meta["seed"],
        "profile": model.meta.get("profile", "full"),
        "training": training or {},
        "tensors": manifest,
    }
    head_bytes = json.dumps(header, indent=1).encode()
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC} v{VERSION} {len(head_bytes)}\n".encode())
        fh.write(head_bytes)
        fh.write(b"\n")
        fh.write(b"".join(blobs))


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        first = fh.readline().decode(errors="replace").split()
        if len(first) != 3 or first[0] != MAGIC:
            raise CheckpointError(f"{path}: not a {MAGIC} file")
        if first[1] != f"v{VERSION}":
            raise CheckpointError(f"{path}: unsupported version {first[1]}")
        header = json.loads(fh.read(int(first[2])).decode())
    return header


def _blob_start(path) -> int:
    with open(path, "rb") as fh:
        first = fh.readline()
        n = int(first.decode().split()[2])
    return len(first) + n + 1  # header + trailing newline


def load_values(model: ModelGraph, path):
    """Fill an existing model's tensors from a checkpoint with matching shapes."""
    header = read_header(path)
    entries = {e["name"]: e for e in header["tensors"]}
    start = _blob_start(path)
    raw = Path(path).read_bytes()[start:]
    for t in model.params():
        e = entries.get(t.name)
        if e is None:
            raise CheckpointError(f"{path}: missing tensor {t.name}")
        if tuple(e["shape"]) != t.value.shape:
            raise CheckpointError(f"{path}: shape {e['shape']} for {t.name}, "
                                  f"model expects {t.value.shape}")
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=e["offset"])
        t.value[...] = arr.reshape(t.value.shape)
    model.meta["initialized_from"] = str(path)
    return header


def load_checkpoint(path, dtype=np.float32) -> tuple[ModelGraph, dict]:
    """Rebuild the full model recorded in a checkpoint."""
    header = read_header(path)
    meta = {k: header[k] for k in
            ("variant", "stage_dims", "aux_dim", "exit_activation", "seed")}
    meta["profile"] = header.get("profile", "full")
    model = build_model_from_meta(meta, dtype=dtype)
    load_values(model, path)
    return model, header
