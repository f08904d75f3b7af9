"""Textual-side calibration.

Aggregates per-layer attention into one importance score per subword, splits
the query into general (high-attention) and discriminative (low-attention)
subspaces, attenuates general tokens, and fuses everything into a single
discriminative token via parameter-free self- and cross-attention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bundles import TextBundle
from .errors import EmptyQuery, ZeroVector

TEXT_THRESHOLD_STRATEGIES = ("mean", "median")


@dataclass(frozen=True)
class SubspaceSplit:
    alpha: np.ndarray  # [n] aggregated attention
    tau_t: float
    general_idx: np.ndarray  # indices with alpha >= tau_t (ties -> general)
    disc_idx: np.ndarray


@dataclass(frozen=True)
class CalibratedQuery:
    query_id: str
    split: SubspaceSplit
    t_a: np.ndarray  # [|G|, d_t] attenuated general tokens
    t_d: np.ndarray  # [|D|, d_t] discriminative tokens, unscaled
    m: float  # modulation coefficient |D| / (|G| + |D|)
    t_r_hat: np.ndarray  # [d_t] fused discriminative token
    t_r_joint: np.ndarray  # [d_j], unit norm
    text_global: np.ndarray  # [d_j] unit-normalized global query embedding


def aggregate_attention(text: TextBundle) -> np.ndarray:
    """Layer-norm-weighted mean of the per-layer global-token attention rows.

    Weighting each layer by the global token's hidden-state magnitude makes
    the aggregate invariant to rescaling all layer weights by a constant.
    """
    gamma = text.eot_norms.astype(np.float64)
    rows = text.eot_attention.astype(np.float64)
    return (gamma @ rows) / gamma.sum()


def split_subspaces(alpha: np.ndarray, strategy: str = "mean") -> SubspaceSplit:
    """Partition token indices into general and discriminative subspaces.

    Ties go to the general side; values within 1e-12 (relative) of the
    threshold count as ties to keep exact-equality cases stable under
    floating-point summation noise.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.size < 1:
        raise EmptyQuery("cannot split an empty attention vector")
    if strategy == "mean":
        tau = float(np.mean(alpha))
    elif strategy == "median":
        tau = float(np.median(alpha))
    else:
        raise ValueError(
            f"strategy must be one of {TEXT_THRESHOLD_STRATEGIES}, got {strategy!r}"
        )
    general = alpha >= tau - 1e-12 * max(1.0, abs(tau))
    return SubspaceSplit(
        alpha=alpha,
        tau_t=tau,
        general_idx=np.flatnonzero(general),
        disc_idx=np.flatnonzero(~general),
    )


def modulate(
    text: TextBundle, split: SubspaceSplit
) -> tuple[np.ndarray, np.ndarray, float]:
    """Attenuate general tokens by (1 - m), m = |D| / (|G| + |D|).

    Detail-rich queries (|D| large) suppress general tokens toward zero;
    sparse queries keep them intact for stability.
    """
    n = text.n_tokens
    if n == 0:
        raise EmptyQuery(f"query '{text.query_id}' has no tokens")
    n_general = split.general_idx.size
    n_disc = split.disc_idx.size
    if n_general + n_disc != n:
        raise EmptyQuery(
            f"split covers {n_general + n_disc} tokens, bundle has {n}"
        )
    m = n_disc / (n_general + n_disc)
    embeddings = text.token_embeddings.astype(np.float64)
    t_a = (1.0 - m) * embeddings[split.general_idx]
    t_d = embeddings[split.disc_idx]
    return t_a, t_d, m


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def build_discriminative_token(
    t_a: np.ndarray, t_d: np.ndarray, text: TextBundle
) -> tuple[np.ndarray, np.ndarray]:
    """Fuse attenuated and discriminative tokens into one vector.

    A data-initialized anchor (mean of all rows) runs through one
    parameter-free scaled dot-product self-attention pass over the full
    sequence; its output then cross-attends back over the token rows, so the
    result is a convex combination of the input rows. The fused token is
    finally projected into the joint space and unit-normalized.
    """
    rows = [r for r in (t_a, t_d) if r.size]
    if not rows:
        raise EmptyQuery("both token sets are empty")
    seq = np.vstack(rows).astype(np.float64)
    d_t = seq.shape[1]
    scale = 1.0 / math.sqrt(d_t)
    anchor = seq.mean(axis=0)

    stacked = np.vstack([anchor[None, :], seq])
    self_weights = _softmax(stacked @ stacked.T * scale, axis=-1)
    t_r = (self_weights @ stacked)[0]

    cross_weights = _softmax(t_r @ seq.T * scale, axis=-1)
    t_r_hat = cross_weights @ seq

    joint = t_r_hat @ text.text_projection.astype(np.float64)
    norm = np.linalg.norm(joint)
    if norm < 1e-12:
        raise ZeroVector("fused discriminative token projects to zero")
    return t_r_hat, joint / norm


def calibrate_query(
    text: TextBundle, strategy: str = "mean"
) -> CalibratedQuery:
    """Full textual calibration of one query bundle."""
    alpha = aggregate_attention(text)
    split = split_subspaces(alpha, strategy)
    t_a, t_d, m = modulate(text, split)
    t_r_hat, t_r_joint = build_discriminative_token(t_a, t_d, text)
    global_norm = np.linalg.norm(text.eot_joint)
    if global_norm < 1e-12:
        raise ZeroVector(f"query '{text.query_id}' global embedding is zero")
    return CalibratedQuery(
        query_id=text.query_id,
        split=split,
        t_a=t_a,
        t_d=t_d,
        m=m,
        t_r_hat=t_r_hat,
        t_r_joint=t_r_joint,
        text_global=text.eot_joint.astype(np.float64) / global_norm,
    )


def subspace_debug_dump(text: TextBundle, strategy: str = "mean") -> dict:
    """Per-query JSON-serializable view of the subspace decomposition."""
    alpha = aggregate_attention(text)
    split = split_subspaces(alpha, strategy)
    _, _, m = modulate(text, split)
    general = set(split.general_idx.tolist())
    strings = list(text.token_strings) or [f"tok_{i}" for i in range(text.n_tokens)]
    return {
        "query_id": text.query_id,
        "alpha": [float(a) for a in alpha],
        "tau_t": split.tau_t,
        "m": m,
        "tokens": [
            {
                "index": i,
                "string": strings[i],
                "alpha": float(alpha[i]),
                "subspace": "general" if i in general else "discriminative",
            }
            for i in range(text.n_tokens)
        ],
    }
