"""Writer for the feature-bundle container format.

A bundle is a directory with a ``manifest.json`` (format version 1) plus one
headerless row-major float32 little-endian ``.bin`` file per tensor. This is
the only interface shared with the downstream retrieval engine.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
DTYPE = np.dtype("<f4")


def write_container(
    path: str | Path, kind: str, bundle_id: str, tensors: dict, extra: dict | None = None
) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=DTYPE)
        fname = f"{name}.bin"
        arr.tofile(path / fname)
        entries[name] = {
            "file": fname,
            "shape": [int(s) for s in arr.shape],
            "dtype": "f32le",
        }
    manifest = {
        "version": FORMAT_VERSION,
        "kind": kind,
        "id": bundle_id,
        "tensors": entries,
    }
    if extra:
        manifest.update(extra)
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
