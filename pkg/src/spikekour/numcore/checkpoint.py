"""Checkpoint format: JSON manifest + flat little-endian float32 blob.

The manifest lists every parameter with its shape and byte offset into the
blob; ``meta`` carries whatever the caller wants to reproduce the network
(e.g. its layer spec).
"""

from __future__ import annotations

import json
import os
from collections import OrderedDict
from pathlib import Path

import numpy as np

FORMAT = "numcore-ckpt/1"


class CheckpointError(Exception):
    pass


class CheckpointMismatch(CheckpointError):
    def __init__(self, expected: dict, found: dict):
        self.expected = expected
        self.found = found
        super().__init__("checkpoint does not match network:\n" + manifest_diff(expected, found))


def manifest_diff(expected: dict, found: dict):
    lines = []
    for k in sorted(set(expected) | set(found)):
        a, b = expected.get(k), found.get(k)
        if a is None:
            lines.append(f"+ {k} {list(b)} (unexpected)")
        elif b is None:
            lines.append(f"- {k} {list(a)} (missing)")
        elif tuple(a) != tuple(b):
            lines.append(f"~ {k} expected {list(a)} found {list(b)}")
    return "\n".join(lines)


def blob_path(manifest_path):
    p = Path(manifest_path)
    return p.with_name(p.name + ".bin") if p.suffix != ".json" else p.with_suffix(".bin")


def save(path, state: "OrderedDict[str, np.ndarray]", meta=None):
    path = Path(path)
    blob = blob_path(path)
    entries, chunks, offset = [], [], 0
    for name, arr in state.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": a.nbytes})
        chunks.append(a.tobytes())
        offset += a.nbytes
    manifest = {"format": FORMAT, "blob": blob.name, "total_bytes": offset, "params": entries, "meta": meta or {}}
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write(blob, b"".join(chunks))
    _atomic_write(path, (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode())
    return path


def load(path):
    """Returns (state, meta). Raises CheckpointError on any structural problem."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read manifest {path}: {e}") from e
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path}: format {manifest.get('format')!r}, expected {FORMAT!r}")
    blob = path.parent / manifest["blob"]
    try:
        raw = blob.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read blob {blob}: {e}") from e
    if len(raw) != manifest["total_bytes"]:
        raise CheckpointError(f"{blob}: {len(raw)} bytes, manifest says {manifest['total_bytes']}")
    state = OrderedDict()
    for e in manifest["params"]:
        n = int(np.prod(e["shape"], dtype=np.int64)) * 4
        if n != e["nbytes"] or e["offset"] + n > len(raw):
            raise CheckpointError(f"{path}: entry {e['name']!r} inconsistent with its shape")
        arr = np.frombuffer(raw, dtype="<f4", count=n // 4, offset=e["offset"])
        state[e["name"]] = arr.reshape(e["shape"]).astype(np.float32)
    return state, manifest.get("meta", {})


def _atomic_write(path, data: bytes):
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
