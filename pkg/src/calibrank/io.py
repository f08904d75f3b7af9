"""Feature-bundle container I/O.

A bundle is a directory holding ``manifest.json`` plus headerless row-major
float32 little-endian tensor files. The same container layout is reused for
persisted gallery indexes (kind ``gallery``).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .bundles import (
    AuditTensors,
    GalleryIndex,
    TextBundle,
    VisualBundle,
    validate_text,
    validate_visual,
)
from .errors import ManifestVersionUnsupported, MissingTensor, ShapeMismatch

MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1
DTYPE = np.dtype("<f4")

_VISUAL_REQUIRED = ("patch_tokens", "cls_attention", "cls_joint", "visual_projection")
_VISUAL_AUDIT = ("q_cls", "keys", "values", "cls_out")
_TEXT_REQUIRED = (
    "token_embeddings",
    "eot_attention",
    "eot_norms",
    "eot_joint",
    "text_projection",
)


def _read_manifest(path: Path) -> dict:
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise MissingTensor(f"no {MANIFEST_NAME} in {path}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("version") != FORMAT_VERSION:
        raise ManifestVersionUnsupported(
            f"manifest version {manifest.get('version')!r} unsupported "
            f"(expected {FORMAT_VERSION})"
        )
    return manifest


def _read_tensor(path: Path, name: str, entry: dict) -> np.ndarray:
    if entry.get("dtype") != "f32le":
        raise ManifestVersionUnsupported(
            f"tensor '{name}' has dtype {entry.get('dtype')!r}, only 'f32le' accepted"
        )
    tensor_path = path / entry["file"]
    if not tensor_path.is_file():
        raise MissingTensor(f"tensor '{name}' file {entry['file']} missing in {path}")
    data = np.fromfile(tensor_path, dtype=DTYPE)
    shape = tuple(int(s) for s in entry["shape"])
    expected = int(np.prod(shape)) if shape else 1
    if data.size != expected:
        raise ShapeMismatch(
            f"tensor '{name}' holds {data.size} values, manifest declares shape {list(shape)}"
        )
    return data.reshape(shape)


def _load_tensors(path: Path, manifest: dict, names: tuple[str, ...]) -> dict:
    tensors = manifest.get("tensors", {})
    out = {}
    for name in names:
        if name not in tensors:
            raise MissingTensor(f"tensor '{name}' not declared in manifest at {path}")
        out[name] = _read_tensor(path, name, tensors[name])
    return out


def load_bundle(path: str | Path) -> VisualBundle | TextBundle:
    """Load and fully validate a feature bundle from a container directory."""
    path = Path(path)
    manifest = _read_manifest(path)
    kind = manifest.get("kind")
    if kind == "visual":
        t = _load_tensors(path, manifest, _VISUAL_REQUIRED)
        audit = None
        declared = manifest.get("tensors", {})
        if any(name in declared for name in _VISUAL_AUDIT):
            audit_tensors = _load_tensors(path, manifest, _VISUAL_AUDIT)
            audit = AuditTensors(**audit_tensors)
        grid = manifest.get("grid")
        if not grid or len(grid) != 2:
            raise ShapeMismatch(f"visual manifest at {path} lacks a [h, w] grid")
        bundle = VisualBundle(
            image_id=str(manifest.get("id", path.name)),
            patch_tokens=t["patch_tokens"],
            cls_attention=t["cls_attention"],
            cls_joint=t["cls_joint"],
            grid=(int(grid[0]), int(grid[1])),
            visual_projection=t["visual_projection"],
            provenance=str(manifest.get("provenance", "")),
            audit=audit,
        )
        validate_visual(bundle)
        return bundle
    if kind == "text":
        t = _load_tensors(path, manifest, _TEXT_REQUIRED)
        bundle = TextBundle(
            query_id=str(manifest.get("id", path.name)),
            token_embeddings=t["token_embeddings"],
            token_strings=tuple(manifest.get("token_strings", [])),
            eot_attention=t["eot_attention"],
            eot_norms=t["eot_norms"],
            eot_joint=t["eot_joint"],
            text_projection=t["text_projection"],
            provenance=str(manifest.get("provenance", "")),
        )
        validate_text(bundle)
        return bundle
    raise ManifestVersionUnsupported(f"unknown bundle kind {kind!r} at {path}")


def _write_tensors(path: Path, arrays: dict[str, np.ndarray]) -> dict:
    entries = {}
    for name, arr in arrays.items():
        fname = f"{name}.bin"
        np.ascontiguousarray(arr, dtype=DTYPE).tofile(path / fname)
        entries[name] = {
            "file": fname,
            "shape": [int(s) for s in np.asarray(arr).shape],
            "dtype": "f32le",
        }
    return entries


def _write_manifest(path: Path, manifest: dict) -> None:
    with open(path / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_bundle(bundle: VisualBundle | TextBundle, path: str | Path) -> None:
    """Serialize a bundle to a container directory (created if absent)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if isinstance(bundle, VisualBundle):
        arrays = {name: getattr(bundle, name) for name in _VISUAL_REQUIRED}
        if bundle.audit is not None:
            arrays.update(
                {name: getattr(bundle.audit, name) for name in _VISUAL_AUDIT}
            )
        manifest = {
            "version": FORMAT_VERSION,
            "kind": "visual",
            "id": bundle.image_id,
            "grid": [int(bundle.grid[0]), int(bundle.grid[1])],
            "dims": {"token": bundle.token_dim, "joint": bundle.joint_dim},
            "provenance": bundle.provenance,
            "tensors": _write_tensors(path, arrays),
        }
    else:
        arrays = {name: getattr(bundle, name) for name in _TEXT_REQUIRED}
        manifest = {
            "version": FORMAT_VERSION,
            "kind": "text",
            "id": bundle.query_id,
            "layers": bundle.n_layers,
            "dims": {"token": bundle.token_dim, "joint": bundle.joint_dim},
            "token_strings": list(bundle.token_strings),
            "provenance": bundle.provenance,
            "tensors": _write_tensors(path, arrays),
        }
    _write_manifest(path, manifest)


def save_gallery_index(index: GalleryIndex, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = {"calibrated": index.calibrated, "raw": index.raw}
    manifest = {
        "version": FORMAT_VERSION,
        "kind": "gallery",
        "ids": list(index.ids),
        "dims": {"joint": index.joint_dim},
        "meta": index.meta,
        "tensors": _write_tensors(path, arrays),
    }
    _write_manifest(path, manifest)


def load_gallery_index(path: str | Path) -> GalleryIndex:
    path = Path(path)
    manifest = _read_manifest(path)
    if manifest.get("kind") != "gallery":
        raise ManifestVersionUnsupported(
            f"expected a gallery index at {path}, found kind {manifest.get('kind')!r}"
        )
    t = _load_tensors(path, manifest, ("calibrated", "raw"))
    return GalleryIndex(
        ids=[str(i) for i in manifest.get("ids", [])],
        calibrated=t["calibrated"],
        raw=t["raw"],
        meta=dict(manifest.get("meta", {})),
    )


def iter_bundle_dirs(root: str | Path) -> list[Path]:
    """Deterministically ordered bundle directories directly under ``root``."""
    root = Path(root)
    return sorted(
        (p for p in root.iterdir() if p.is_dir() and (p / MANIFEST_NAME).is_file()),
        key=lambda p: p.name,
    )
