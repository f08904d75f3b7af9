"""Seeded synthetic fixture generator.

Builds a self-contained retrieval scenario with no model export required:
orthogonal query directions in the joint space, one matching gallery image
per query, and a configurable number of corrupted images. A corrupted image
carries a single high-attention background patch whose embedding points at a
wrong query, plus a clean hard-negative image blended toward the corrupted
image's query, so baseline cosine retrieval demotes the true match while the
calibrated pipeline recovers it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bundles import TextBundle, VisualBundle
from .io import write_bundle


@dataclass(frozen=True)
class ScenarioSpec:
    n_items: int = 50
    n_spiked: int = 10
    grid: tuple[int, int] = (7, 7)
    joint_dim: int = 64
    n_tokens: int = 6
    n_layers: int = 4
    spike_attention: float = 0.45
    hard_negative_cos: float = 0.85
    noise: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_items < 3 * self.n_spiked:
            raise ValueError(
                "need n_items >= 3 * n_spiked to place hard negatives and "
                "spike targets on distinct clean images"
            )
        if self.n_items > self.joint_dim:
            raise ValueError("n_items must not exceed joint_dim for orthogonality")


@dataclass
class Scenario:
    spec: ScenarioSpec
    visuals: list[VisualBundle]
    texts: list[TextBundle]
    relevance: dict[str, list[str]]
    meta: dict = field(default_factory=dict)


def _orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((rows, rows)))
    return q[:, :cols]


def _image_id(i: int) -> str:
    return f"img_{i:03d}"


def _query_id(i: int) -> str:
    return f"qry_{i:03d}"


def _visual_bundle(
    spec: ScenarioSpec,
    rng: np.random.Generator,
    image_id: str,
    lift: np.ndarray,
    direction: np.ndarray,
    spike_direction: np.ndarray | None,
) -> VisualBundle:
    h, w = spec.grid
    n = h * w
    d_j = spec.joint_dim
    joint_rows = direction[None, :] + spec.noise * rng.standard_normal((n, d_j))
    attention = np.full(n, 1.0 / n)
    if spike_direction is not None:
        # Interior cell so the spike has a full 8-neighborhood.
        r = 1 + rng.integers(0, h - 2)
        c = 1 + rng.integers(0, w - 2)
        spike = r * w + c
        joint_rows[spike] = spike_direction + spec.noise * rng.standard_normal(d_j)
        attention = np.full(n, (1.0 - spec.spike_attention) / (n - 1))
        attention[spike] = spec.spike_attention
    tokens = joint_rows @ lift.T  # lift joint-space rows into token space
    aggregated = (attention @ tokens) @ lift
    cls_joint = aggregated / np.linalg.norm(aggregated)
    return VisualBundle(
        image_id=image_id,
        patch_tokens=tokens.astype(np.float32),
        cls_attention=attention.astype(np.float32),
        cls_joint=cls_joint.astype(np.float32),
        grid=spec.grid,
        visual_projection=lift.astype(np.float32),
        provenance="synthetic fixture",
    )


def _text_bundle(
    spec: ScenarioSpec,
    rng: np.random.Generator,
    query_id: str,
    lift: np.ndarray,
    direction: np.ndarray,
) -> TextBundle:
    n, L, d_j = spec.n_tokens, spec.n_layers, spec.joint_dim
    joint_rows = direction[None, :] + spec.noise * rng.standard_normal((n, d_j))
    embeddings = joint_rows @ lift.T
    attention = rng.uniform(0.05, 1.0, size=(L, n))
    attention *= 0.8 / attention.sum(axis=1, keepdims=True)
    norms = rng.uniform(1.0, 5.0, size=L)
    eot_joint = direction + spec.noise * rng.standard_normal(d_j)
    return TextBundle(
        query_id=query_id,
        token_embeddings=embeddings.astype(np.float32),
        token_strings=tuple(f"tok_{i}" for i in range(n)),
        eot_attention=attention.astype(np.float32),
        eot_norms=norms.astype(np.float32),
        eot_joint=eot_joint.astype(np.float32),
        text_projection=lift.astype(np.float32),
        provenance="synthetic fixture",
    )


def generate_scenario(spec: ScenarioSpec | None = None) -> Scenario:
    spec = spec or ScenarioSpec()
    rng = np.random.default_rng(spec.seed)
    d_j = spec.joint_dim
    directions = _orthonormal(rng, d_j, spec.n_items).T  # [n_items, d_j]
    visual_lift = _orthonormal(rng, d_j, d_j)  # token space == lifted joint space
    text_lift = _orthonormal(rng, d_j, d_j)

    spiked = list(range(spec.n_spiked))
    hard_negative_of = {j: spec.n_spiked + j for j in spiked}
    spike_target_of = {j: 2 * spec.n_spiked + j for j in spiked}

    visuals = []
    for i in range(spec.n_items):
        direction = directions[i]
        spike_dir = None
        if i in hard_negative_of.values():
            j = i - spec.n_spiked
            c = spec.hard_negative_cos
            direction = c * directions[j] + np.sqrt(1.0 - c * c) * directions[i]
        if i in spiked:
            spike_dir = directions[spike_target_of[i]]
        visuals.append(
            _visual_bundle(spec, rng, _image_id(i), visual_lift, direction, spike_dir)
        )

    texts = [
        _text_bundle(spec, rng, _query_id(i), text_lift, directions[i])
        for i in range(spec.n_items)
    ]
    relevance = {_query_id(i): [_image_id(i)] for i in range(spec.n_items)}
    meta = {
        "spiked_images": [_image_id(j) for j in spiked],
        "hard_negatives": {
            _image_id(j): _image_id(h) for j, h in hard_negative_of.items()
        },
        "seed": spec.seed,
    }
    return Scenario(spec=spec, visuals=visuals, texts=texts, relevance=relevance, meta=meta)


def write_scenario(scenario: Scenario, out_dir: str | Path) -> None:
    """Persist a scenario as gallery/ and queries/ bundle dirs plus
    relevance.json."""
    import json

    out = Path(out_dir)
    for bundle in scenario.visuals:
        write_bundle(bundle, out / "gallery" / bundle.image_id)
    for bundle in scenario.texts:
        write_bundle(bundle, out / "queries" / bundle.query_id)
    with open(out / "relevance.json", "w", encoding="utf-8") as fh:
        json.dump(scenario.relevance, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "scenario.json", "w", encoding="utf-8") as fh:
        json.dump(scenario.meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
