"""Two-stage retrieval: global candidate selection, discriminative similarity,
fused re-ranking, and Recall@K / mAP evaluation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .bundles import GalleryIndex
from .errors import EmptyGallery, MissingRelevance
from .textual import CalibratedQuery

RECALL_KS = (1, 5, 10, 50)


@dataclass(frozen=True)
class FusionConfig:
    lam: float = 0.5  # weight of the global similarity in the fused score
    k: int = 100  # candidate-pool size

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class RankEntry:
    image_id: str
    base_sim: float
    disc_sim: float | None
    fused_score: float


@dataclass(frozen=True)
class RankingResult:
    query_id: str
    entries: tuple[RankEntry, ...]

    def ranked_ids(self) -> list[str]:
        return [e.image_id for e in self.entries]

    def to_json(self) -> str:
        payload = {
            "query_id": self.query_id,
            "ranking": [
                {
                    "image_id": e.image_id,
                    "base_sim": e.base_sim,
                    "disc_sim": e.disc_sim,
                    "fused_score": e.fused_score,
                }
                for e in self.entries
            ],
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "RankingResult":
        payload = json.loads(line)
        return cls(
            query_id=payload["query_id"],
            entries=tuple(
                RankEntry(
                    image_id=e["image_id"],
                    base_sim=e["base_sim"],
                    disc_sim=e["disc_sim"],
                    fused_score=e["fused_score"],
                )
                for e in payload["ranking"]
            ),
        )


def base_similarity(
    text_global: np.ndarray, gallery: GalleryIndex, use_raw: bool = False
) -> np.ndarray:
    """Cosine similarity of the query's global embedding against every gallery
    item's (calibrated by default) global vector."""
    if len(gallery) == 0:
        raise EmptyGallery("gallery index is empty")
    q = np.asarray(text_global, dtype=np.float64)
    qn = np.linalg.norm(q)
    if qn < 1e-12:
        raise EmptyGallery("query global embedding has zero norm")
    vectors = gallery.raw_unit if use_raw else gallery.calibrated_unit
    return vectors.astype(np.float64) @ (q / qn)


def _ordered_indices(sims: np.ndarray, ids: list[str]) -> list[int]:
    # Descending similarity, ties broken by ascending image id.
    return sorted(range(len(ids)), key=lambda i: (-sims[i], ids[i]))


def topk_candidates(sims: np.ndarray, ids: list[str], k: int) -> list[int]:
    """Indices of the k best-scoring items (all if the gallery is smaller)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return _ordered_indices(sims, ids)[:k]


def fuse_and_rank(
    query: CalibratedQuery,
    text_global: np.ndarray,
    gallery: GalleryIndex,
    cfg: FusionConfig,
    use_disc: bool = True,
    use_raw: bool = False,
) -> RankingResult:
    """Re-rank the top-k candidate pool with the fused score.

    Within the pool the score is lam * base + (1 - lam) * disc; items outside
    the pool are appended in base order with their base similarity, so the
    result is always a total order over the gallery.
    """
    sims = base_similarity(text_global, gallery, use_raw=use_raw)
    order = _ordered_indices(sims, gallery.ids)
    pool, tail = order[: cfg.k], order[cfg.k :]

    entries: list[RankEntry] = []
    if use_disc:
        vectors = gallery.raw_unit if use_raw else gallery.calibrated_unit
        disc = vectors[pool].astype(np.float64) @ query.t_r_joint
        fused = cfg.lam * sims[pool] + (1.0 - cfg.lam) * disc
        reranked = sorted(
            range(len(pool)), key=lambda j: (-fused[j], gallery.ids[pool[j]])
        )
        for j in reranked:
            i = pool[j]
            entries.append(
                RankEntry(
                    image_id=gallery.ids[i],
                    base_sim=float(sims[i]),
                    disc_sim=float(disc[j]),
                    fused_score=float(fused[j]),
                )
            )
    else:
        for i in pool:
            entries.append(
                RankEntry(
                    image_id=gallery.ids[i],
                    base_sim=float(sims[i]),
                    disc_sim=None,
                    fused_score=float(sims[i]),
                )
            )
    for i in tail:
        entries.append(
            RankEntry(
                image_id=gallery.ids[i],
                base_sim=float(sims[i]),
                disc_sim=None,
                fused_score=float(sims[i]),
            )
        )
    return RankingResult(query_id=query.query_id, entries=tuple(entries))


def average_precision(ranked_ids: list[str], relevant: set[str]) -> float:
    hits = 0
    precision_sum = 0.0
    for rank, image_id in enumerate(ranked_ids, start=1):
        if image_id in relevant:
            hits += 1
            precision_sum += hits / rank
    return precision_sum / len(relevant)


def evaluate(
    results: list[RankingResult],
    relevance: dict[str, set[str]],
    ks: tuple[int, ...] = RECALL_KS,
) -> dict[str, float]:
    """Recall@K (fraction of queries with a hit in the top K) and mAP over the
    full rankings."""
    if not results:
        raise MissingRelevance("no ranking results to evaluate")
    recall_hits = {k: 0 for k in ks}
    ap_sum = 0.0
    for result in results:
        relevant = relevance.get(result.query_id)
        if not relevant:
            raise MissingRelevance(
                f"query '{result.query_id}' has no relevant items"
            )
        ranked = result.ranked_ids()
        for k in ks:
            if any(i in relevant for i in ranked[:k]):
                recall_hits[k] += 1
        ap_sum += average_precision(ranked, set(relevant))
    n = len(results)
    metrics = {f"recall@{k}": recall_hits[k] / n for k in ks}
    metrics["mAP"] = ap_sum / n
    return metrics
