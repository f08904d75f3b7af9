"""Canonical data model for exported vision-language features.

A bundle is an immutable snapshot of one image's (or one query's) final-layer
features: token embeddings, the global token's attention row(s), and the
projection into the joint embedding space. Bundles are validated once at load
and shared freely afterwards.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AuditTensorsAbsent,
    NonFiniteValue,
    NonPositiveNorm,
    ShapeMismatch,
)

ATTENTION_SUM_TOL = 1e-5
UNIT_NORM_TOL = 1e-6


def _require_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"tensor '{name}' contains NaN or Inf")


def _require_shape(name: str, arr: np.ndarray, shape: tuple[int, ...]) -> None:
    if arr.shape != shape:
        raise ShapeMismatch(f"tensor '{name}' has shape {arr.shape}, expected {shape}")


@dataclass(frozen=True)
class AuditTensors:
    """Optional raw last-layer attention inputs for the ingestion audit."""

    q_cls: np.ndarray  # [d]
    keys: np.ndarray  # [N, d]
    values: np.ndarray  # [N, d]
    cls_out: np.ndarray  # [d], the exporter's own attention-output dump


@dataclass(frozen=True)
class VisualBundle:
    image_id: str
    patch_tokens: np.ndarray  # [N, d]
    cls_attention: np.ndarray  # [N], head-averaged global-token row
    cls_joint: np.ndarray  # [d_j]
    grid: tuple[int, int]  # (rows, cols), rows * cols == N
    visual_projection: np.ndarray  # [d, d_j]
    provenance: str = ""
    audit: AuditTensors | None = None

    @property
    def n_patches(self) -> int:
        return self.patch_tokens.shape[0]

    @property
    def token_dim(self) -> int:
        return self.patch_tokens.shape[1]

    @property
    def joint_dim(self) -> int:
        return self.cls_joint.shape[0]


@dataclass(frozen=True)
class TextBundle:
    query_id: str
    token_embeddings: np.ndarray  # [n, d_t], subword states, global token excluded
    token_strings: tuple[str, ...]  # diagnostic only
    eot_attention: np.ndarray  # [L, n], per-layer global-token row over subwords
    eot_norms: np.ndarray  # [L], per-layer global-token hidden-state 2-norms
    eot_joint: np.ndarray  # [d_j]
    text_projection: np.ndarray  # [d_t, d_j]
    provenance: str = ""

    @property
    def n_tokens(self) -> int:
        return self.token_embeddings.shape[0]

    @property
    def n_layers(self) -> int:
        return self.eot_attention.shape[0]

    @property
    def token_dim(self) -> int:
        return self.token_embeddings.shape[1]

    @property
    def joint_dim(self) -> int:
        return self.eot_joint.shape[0]


def validate_visual(bundle: VisualBundle) -> None:
    """Check every VisualBundle invariant, raising on the first violation."""
    h, w = bundle.grid
    n = bundle.n_patches
    if h < 1 or w < 1 or h * w != n:
        raise ShapeMismatch(
            f"tensor 'patch_tokens' has {n} rows but grid is {h}x{w}"
        )
    d = bundle.token_dim
    d_j = bundle.joint_dim
    _require_shape("cls_attention", bundle.cls_attention, (n,))
    _require_shape("cls_joint", bundle.cls_joint, (d_j,))
    _require_shape("visual_projection", bundle.visual_projection, (d, d_j))
    for name in ("patch_tokens", "cls_attention", "cls_joint", "visual_projection"):
        _require_finite(name, getattr(bundle, name))
    att = bundle.cls_attention
    if np.any(att < 0):
        raise NonPositiveNorm("tensor 'cls_attention' has negative entries")
    total = float(att.sum())
    if abs(total - 1.0) > ATTENTION_SUM_TOL:
        raise ShapeMismatch(
            f"tensor 'cls_attention' sums to {total:.8f}, expected 1 +/- {ATTENTION_SUM_TOL}"
        )
    if bundle.audit is not None:
        a = bundle.audit
        d_a = a.q_cls.shape[0]
        _require_shape("q_cls", a.q_cls, (d_a,))
        _require_shape("keys", a.keys, (n, d_a))
        _require_shape("values", a.values, (n, d_a))
        _require_shape("cls_out", a.cls_out, (d_a,))
        for name in ("q_cls", "keys", "values", "cls_out"):
            _require_finite(name, getattr(a, name))


def validate_text(bundle: TextBundle) -> None:
    """Check every TextBundle invariant, raising on the first violation."""
    n = bundle.n_tokens
    L = bundle.n_layers
    if n < 1:
        raise ShapeMismatch("tensor 'token_embeddings' must have at least one row")
    if L < 1:
        raise ShapeMismatch("tensor 'eot_attention' must have at least one layer")
    d_t = bundle.token_dim
    d_j = bundle.joint_dim
    _require_shape("eot_attention", bundle.eot_attention, (L, n))
    _require_shape("eot_norms", bundle.eot_norms, (L,))
    _require_shape("eot_joint", bundle.eot_joint, (d_j,))
    _require_shape("text_projection", bundle.text_projection, (d_t, d_j))
    if len(bundle.token_strings) not in (0, n):
        raise ShapeMismatch(
            f"'token_strings' has {len(bundle.token_strings)} entries, expected {n}"
        )
    for name in (
        "token_embeddings",
        "eot_attention",
        "eot_norms",
        "eot_joint",
        "text_projection",
    ):
        _require_finite(name, getattr(bundle, name))
    att = bundle.eot_attention
    if np.any(att < 0) or np.any(att > 1):
        raise ShapeMismatch("tensor 'eot_attention' has entries outside [0, 1]")
    if np.any(bundle.eot_norms <= 0):
        raise NonPositiveNorm("tensor 'eot_norms' has non-positive entries")


def validate_bundle(bundle: VisualBundle | TextBundle) -> None:
    if isinstance(bundle, VisualBundle):
        validate_visual(bundle)
    else:
        validate_text(bundle)


def validate_cls_aggregation(bundle: VisualBundle) -> float:
    """Ingestion audit of the exporter's attention aggregation.

    Recomputes softmax(q_cls . keys^T / sqrt(d)) . values from the raw audit
    tensors and returns the 2-norm of its difference from the exporter's own
    attention-output dump. Used only at ingestion, never in the pipeline.
    """
    if bundle.audit is None:
        raise AuditTensorsAbsent(
            f"bundle '{bundle.image_id}' carries no audit tensors"
        )
    a = bundle.audit
    d = a.keys.shape[1]
    logits = a.keys.astype(np.float64) @ a.q_cls.astype(np.float64) / math.sqrt(d)
    logits -= logits.max()
    weights = np.exp(logits)
    weights /= weights.sum()
    recomputed = weights @ a.values.astype(np.float64)
    return float(np.linalg.norm(recomputed - a.cls_out.astype(np.float64)))


@dataclass
class GalleryIndex:
    """Ordered gallery of joint-space global vectors, calibrated and raw."""

    ids: list[str]
    calibrated: np.ndarray  # [M, d_j]
    raw: np.ndarray  # [M, d_j]
    meta: dict = field(default_factory=dict)
    calibrated_unit: np.ndarray = field(init=False)
    raw_unit: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if len(self.ids) != len(set(self.ids)):
            raise ShapeMismatch("gallery ids are not unique")
        if self.calibrated.shape != self.raw.shape or self.calibrated.shape[0] != len(
            self.ids
        ):
            raise ShapeMismatch(
                f"gallery tensors {self.calibrated.shape} / {self.raw.shape} do not "
                f"match {len(self.ids)} ids"
            )
        _require_finite("calibrated", self.calibrated)
        _require_finite("raw", self.raw)
        self.calibrated_unit = _unit_rows("calibrated", self.calibrated)
        self.raw_unit = _unit_rows("raw", self.raw)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def joint_dim(self) -> int:
        return self.calibrated.shape[1]


def _unit_rows(name: str, vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise NonPositiveNorm(f"tensor '{name}' contains a zero row")
    return vectors / norms
