import numpy as np
import pytest

from calibrank.bundles import TextBundle, VisualBundle


def make_visual(
    attention,
    grid,
    image_id="img",
    tokens=None,
    joint_dim=4,
    rng=None,
):
    """Small hand-rolled visual bundle; attention is renormalized to sum 1."""
    attention = np.asarray(attention, dtype=np.float64)
    attention = attention / attention.sum()
    n = attention.size
    rng = rng or np.random.default_rng(0)
    if tokens is None:
        tokens = rng.standard_normal((n, joint_dim))
    tokens = np.asarray(tokens, dtype=np.float64)
    d = tokens.shape[1]
    projection = np.eye(d, joint_dim) if d >= joint_dim else rng.standard_normal((d, joint_dim))
    joint = attention @ tokens @ projection
    norm = np.linalg.norm(joint)
    if norm > 1e-12:
        joint = joint / norm
    else:
        joint = np.zeros(joint_dim)
        joint[0] = 1.0
    return VisualBundle(
        image_id=image_id,
        patch_tokens=tokens,
        cls_attention=attention,
        cls_joint=joint,
        grid=grid,
        visual_projection=projection,
    )


def make_text(
    eot_attention,
    eot_norms,
    embeddings=None,
    query_id="qry",
    joint_dim=4,
    rng=None,
):
    eot_attention = np.atleast_2d(np.asarray(eot_attention, dtype=np.float64))
    eot_norms = np.asarray(eot_norms, dtype=np.float64)
    L, n = eot_attention.shape
    rng = rng or np.random.default_rng(1)
    if embeddings is None:
        embeddings = rng.standard_normal((n, joint_dim))
    embeddings = np.asarray(embeddings, dtype=np.float64)
    d_t = embeddings.shape[1]
    projection = np.eye(d_t, joint_dim)
    joint = rng.standard_normal(joint_dim)
    return TextBundle(
        query_id=query_id,
        token_embeddings=embeddings,
        token_strings=tuple(f"tok_{i}" for i in range(n)),
        eot_attention=eot_attention,
        eot_norms=eot_norms,
        eot_joint=joint,
        text_projection=projection,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
