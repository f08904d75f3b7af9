"""Visual-side calibration.

Splits the patch grid into target and background regions by similarity to a
reference joint-space vector, localizes dominant tokens as background patches
whose attention z-score against their 8-connected neighborhood strictly
exceeds every neighbor's, and rectifies features by gating dominant tokens to
a residual level before re-aggregating the global embedding.

All operations are pure functions of immutable inputs and are safe to run
data-parallel across images.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundles import VisualBundle
from .errors import DegenerateAttention, GridMismatch, ZeroVector

VIS_THRESHOLD_STRATEGIES = ("mean", "mean_plus_std", "median")


@dataclass(frozen=True)
class RectifierConfig:
    eta: float = 0.1  # residual gate for dominant tokens
    threshold_strategy: str = "mean"
    epsilon: float = 1e-6  # z-score denominator stabilizer

    def __post_init__(self) -> None:
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.threshold_strategy not in VIS_THRESHOLD_STRATEGIES:
            raise ValueError(
                f"threshold_strategy must be one of {VIS_THRESHOLD_STRATEGIES}, "
                f"got {self.threshold_strategy!r}"
            )


@dataclass(frozen=True)
class RegionMask:
    mask: np.ndarray  # [N] bool, True = target region
    tau_sim: float  # adaptive similarity threshold
    similarities: np.ndarray  # [N] patch-reference cosine similarities

    @property
    def target_indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def background_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.mask)


@dataclass(frozen=True)
class DominantReport:
    lc: np.ndarray  # [N] local attention deviations
    combined: np.ndarray  # [N] lc * attention
    dominant: frozenset[int]
    neighbor_degree: np.ndarray  # [N] of 3, 5 or 8


def grid_neighbors(h: int, w: int) -> list[np.ndarray]:
    """In-bounds 8-connected neighbor indices for each cell of an h x w grid."""
    neighbors = []
    for r in range(h):
        for c in range(w):
            idx = []
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    if dr == 0 and dc == 0:
                        continue
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < h and 0 <= cc < w:
                        idx.append(rr * w + cc)
            neighbors.append(np.asarray(idx, dtype=np.intp))
    return neighbors


def similarity_threshold(values: np.ndarray, strategy: str) -> float:
    if strategy == "mean":
        return float(np.mean(values))
    if strategy == "mean_plus_std":
        return float(np.mean(values) + np.std(values))
    if strategy == "median":
        return float(np.median(values))
    raise ValueError(f"unknown threshold strategy {strategy!r}")


def mask_from_similarity(similarities: np.ndarray, strategy: str) -> RegionMask:
    """Target/background partition of a similarity vector; ties go to target.

    Values within 1e-12 (relative) of the threshold count as ties so that
    exact-equality cases survive floating-point summation noise.
    """
    similarities = np.asarray(similarities, dtype=np.float64)
    tau = similarity_threshold(similarities, strategy)
    cutoff = tau - 1e-12 * max(1.0, abs(tau))
    return RegionMask(mask=similarities >= cutoff, tau_sim=tau, similarities=similarities)


def decouple_regions(
    visual: VisualBundle, text_global: np.ndarray, cfg: RectifierConfig
) -> RegionMask:
    """Partition patches into target and background regions.

    Each patch token is projected into the joint space and compared to
    ``text_global`` by cosine similarity; patches at or above the adaptive
    threshold form the target region.
    """
    projected = visual.patch_tokens.astype(np.float64) @ visual.visual_projection.astype(
        np.float64
    )
    patch_norms = np.linalg.norm(projected, axis=1)
    ref = np.asarray(text_global, dtype=np.float64)
    ref_norm = np.linalg.norm(ref)
    if ref_norm < 1e-12:
        raise ZeroVector("reference vector has near-zero norm")
    if np.any(patch_norms < 1e-12):
        bad = int(np.argmin(patch_norms))
        raise ZeroVector(f"projected patch {bad} has near-zero norm")
    sims = projected @ ref / (patch_norms * ref_norm)
    return mask_from_similarity(sims, cfg.threshold_strategy)


def local_contrast(
    attention: np.ndarray, grid: tuple[int, int], epsilon: float
) -> np.ndarray:
    """Attention z-score of every cell against its 8-connected neighborhood.

    Uses the population standard deviation of the neighborhood; corner cells
    have 3 neighbors, edge cells 5, interior cells 8.
    """
    attention = np.asarray(attention, dtype=np.float64)
    h, w = grid
    if attention.shape != (h * w,):
        raise GridMismatch(
            f"attention has {attention.shape[0]} entries, grid is {h}x{w}"
        )
    out = np.empty(h * w, dtype=np.float64)
    for i, nbrs in enumerate(grid_neighbors(h, w)):
        neigh = attention[nbrs]
        mu = neigh.mean()
        sigma = np.sqrt(np.mean((neigh - mu) ** 2))
        out[i] = (attention[i] - mu) / (sigma + epsilon)
    return out


def detect_dominant(
    visual: VisualBundle, mask: RegionMask, cfg: RectifierConfig
) -> DominantReport:
    """Locate dominant tokens: background patches whose local attention
    deviation strictly exceeds that of every grid neighbor."""
    h, w = visual.grid
    attention = visual.cls_attention.astype(np.float64)
    lc = local_contrast(attention, (h, w), cfg.epsilon)
    neighbors = grid_neighbors(h, w)
    background = set(mask.background_indices.tolist())
    dominant = frozenset(
        i for i in background if np.all(lc[i] > lc[neighbors[i]])
    )
    degree = np.asarray([len(n) for n in neighbors], dtype=np.intp)
    return DominantReport(
        lc=lc, combined=lc * attention, dominant=dominant, neighbor_degree=degree
    )


def rectifier_gates(report: DominantReport, cfg: RectifierConfig, n: int) -> np.ndarray:
    """Per-token multiplicative gates: eta on dominant tokens, 1 elsewhere."""
    g = np.ones(n, dtype=np.float64)
    if report.dominant:
        g[sorted(report.dominant)] = cfg.eta
    return g


def rectify(
    visual: VisualBundle, report: DominantReport, cfg: RectifierConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Gate dominant tokens and re-aggregate the global joint embedding.

    Returns the rectified patch tokens and the unit-normalized calibrated
    global embedding, obtained by reweighting the exported attention row with
    the gates, renormalizing it to sum 1, aggregating the gated tokens and
    projecting into the joint space.
    """
    n = visual.n_patches
    g = rectifier_gates(report, cfg, n)
    tokens = visual.patch_tokens.astype(np.float64, copy=False)
    rectified = g[:, None] * tokens
    reweighted = g * visual.cls_attention.astype(np.float64, copy=False)
    total = reweighted.sum()
    if total < 1e-12:
        raise DegenerateAttention(
            "all attention mass sits on dominant tokens with eta ~ 0"
        )
    weights = reweighted / total
    aggregated = weights @ rectified
    joint = aggregated @ visual.visual_projection.astype(np.float64, copy=False)
    norm = np.linalg.norm(joint)
    if norm < 1e-12:
        raise ZeroVector("calibrated global embedding collapsed to zero")
    return rectified, joint / norm


def recompute_global(visual: VisualBundle) -> np.ndarray:
    """Raw global embedding: attention-weighted patch aggregate, projected and
    unit-normalized. Uses the same sum-renormalized weighting as rectify so
    the eta=1 path reproduces it bit for bit."""
    tokens = visual.patch_tokens.astype(np.float64, copy=False)
    attention = visual.cls_attention.astype(np.float64, copy=False)
    aggregated = (attention / attention.sum()) @ tokens
    joint = aggregated @ visual.visual_projection.astype(np.float64, copy=False)
    norm = np.linalg.norm(joint)
    if norm < 1e-12:
        raise ZeroVector("raw global embedding has near-zero norm")
    return joint / norm


@dataclass(frozen=True)
class ImageCalibration:
    image_id: str
    mask: RegionMask
    report: DominantReport
    gates: np.ndarray
    cls_joint_raw: np.ndarray
    cls_joint_calibrated: np.ndarray


def calibrate_image(
    visual: VisualBundle,
    cfg: RectifierConfig,
    reference: np.ndarray | None = None,
    enabled: bool = True,
) -> ImageCalibration:
    """Full visual calibration of one bundle.

    When no reference vector is supplied the image's own raw global embedding
    anchors the region decoupling, which keeps indexing query-independent.
    With ``enabled=False`` the calibrated embedding is the raw recomputed
    global (ablation identity).
    """
    raw = recompute_global(visual)
    if not enabled:
        n = visual.n_patches
        empty = DominantReport(
            lc=np.zeros(n),
            combined=np.zeros(n),
            dominant=frozenset(),
            neighbor_degree=np.asarray(
                [len(nb) for nb in grid_neighbors(*visual.grid)], dtype=np.intp
            ),
        )
        mask = RegionMask(
            mask=np.ones(n, dtype=bool), tau_sim=0.0, similarities=np.zeros(n)
        )
        return ImageCalibration(
            image_id=visual.image_id,
            mask=mask,
            report=empty,
            gates=np.ones(n),
            cls_joint_raw=raw,
            cls_joint_calibrated=raw,
        )
    ref = raw if reference is None else np.asarray(reference, dtype=np.float64)
    mask = decouple_regions(visual, ref, cfg)
    report = detect_dominant(visual, mask, cfg)
    _, calibrated = rectify(visual, report, cfg)
    return ImageCalibration(
        image_id=visual.image_id,
        mask=mask,
        report=report,
        gates=rectifier_gates(report, cfg, visual.n_patches),
        cls_joint_raw=raw,
        cls_joint_calibrated=calibrated,
    )
