import numpy as np
import pytest

from calibrank.bundles import (
    AuditTensors,
    TextBundle,
    VisualBundle,
    validate_cls_aggregation,
    validate_text,
    validate_visual,
)
from calibrank.errors import (
    AuditTensorsAbsent,
    ManifestVersionUnsupported,
    MissingTensor,
    NonFiniteValue,
    NonPositiveNorm,
    ShapeMismatch,
)
from calibrank.io import load_bundle, write_bundle

from conftest import make_text, make_visual


def test_visual_round_trip_bit_identical(tmp_path, rng):
    bundle = make_visual(rng.uniform(0.1, 1.0, 4), (2, 2), rng=rng)
    write_bundle(bundle, tmp_path / "b")
    loaded = load_bundle(tmp_path / "b")
    assert isinstance(loaded, VisualBundle)
    assert loaded.n_patches == 4
    write_bundle(loaded, tmp_path / "b2")
    for name in ("patch_tokens", "cls_attention", "cls_joint", "visual_projection"):
        first = (tmp_path / "b" / f"{name}.bin").read_bytes()
        second = (tmp_path / "b2" / f"{name}.bin").read_bytes()
        assert first == second


def test_text_round_trip(tmp_path, rng):
    att = rng.uniform(0.0, 0.2, (3, 5))
    bundle = make_text(att, [1.0, 2.0, 3.0], rng=rng)
    write_bundle(bundle, tmp_path / "t")
    loaded = load_bundle(tmp_path / "t")
    assert isinstance(loaded, TextBundle)
    assert loaded.n_tokens == 5
    assert loaded.token_strings == bundle.token_strings
    np.testing.assert_array_equal(
        loaded.eot_attention, bundle.eot_attention.astype(np.float32)
    )


def test_shape_mismatch_on_corrupt_payload(tmp_path, rng):
    bundle = make_visual(np.full(4, 0.25), (2, 2), joint_dim=8, rng=rng)
    write_bundle(bundle, tmp_path / "b")
    # Manifest declares [4, d] for patch_tokens; shrink the payload.
    data = np.fromfile(tmp_path / "b" / "patch_tokens.bin", dtype="<f4")
    data[: 24].tofile(tmp_path / "b" / "patch_tokens.bin")
    with pytest.raises(ShapeMismatch, match="patch_tokens"):
        load_bundle(tmp_path / "b")


def test_missing_tensor(tmp_path, rng):
    bundle = make_visual(np.full(4, 0.25), (2, 2), rng=rng)
    write_bundle(bundle, tmp_path / "b")
    (tmp_path / "b" / "cls_joint.bin").unlink()
    with pytest.raises(MissingTensor, match="cls_joint"):
        load_bundle(tmp_path / "b")


def test_manifest_version_unsupported(tmp_path, rng):
    bundle = make_visual(np.full(4, 0.25), (2, 2), rng=rng)
    write_bundle(bundle, tmp_path / "b")
    manifest = (tmp_path / "b" / "manifest.json").read_text()
    (tmp_path / "b" / "manifest.json").write_text(manifest.replace('"version": 1', '"version": 99'))
    with pytest.raises(ManifestVersionUnsupported):
        load_bundle(tmp_path / "b")


def test_zero_eot_norm_rejected(rng):
    bundle = make_text(np.full((2, 3), 0.1), [1.0, 0.0], rng=rng)
    with pytest.raises(NonPositiveNorm, match="eot_norms"):
        validate_text(bundle)


def test_nonfinite_rejected(rng):
    tokens = rng.standard_normal((4, 4))
    tokens[1, 2] = np.nan
    bundle = make_visual(np.full(4, 0.25), (2, 2), tokens=tokens, rng=rng)
    with pytest.raises(NonFiniteValue, match="patch_tokens"):
        validate_visual(bundle)


def test_attention_sum_invariant(rng):
    bundle = make_visual(np.full(4, 0.25), (2, 2), rng=rng)
    bad = VisualBundle(
        image_id="x",
        patch_tokens=bundle.patch_tokens,
        cls_attention=bundle.cls_attention * 2.0,
        cls_joint=bundle.cls_joint,
        grid=bundle.grid,
        visual_projection=bundle.visual_projection,
    )
    with pytest.raises(ShapeMismatch, match="cls_attention"):
        validate_visual(bad)


def test_eot_attention_range(rng):
    bundle = make_text(np.full((1, 3), 1.5), [1.0], rng=rng)
    with pytest.raises(ShapeMismatch, match="eot_attention"):
        validate_text(bundle)


def test_randomized_valid_bundles_accepted(rng):
    for _ in range(25):
        n_side = int(rng.integers(1, 5))
        att = rng.uniform(0.01, 1.0, n_side * n_side)
        visual = make_visual(att, (n_side, n_side), joint_dim=int(rng.integers(2, 6)), rng=rng)
        validate_visual(visual)
        n = int(rng.integers(1, 7))
        L = int(rng.integers(1, 5))
        text = make_text(
            rng.uniform(0.0, 1.0, (L, n)), rng.uniform(0.1, 9.0, L), rng=rng
        )
        validate_text(text)


def _with_audit(bundle, q_cls, keys, values, cls_out):
    return VisualBundle(
        image_id=bundle.image_id,
        patch_tokens=bundle.patch_tokens,
        cls_attention=bundle.cls_attention,
        cls_joint=bundle.cls_joint,
        grid=bundle.grid,
        visual_projection=bundle.visual_projection,
        audit=AuditTensors(
            q_cls=np.asarray(q_cls, dtype=np.float64),
            keys=np.asarray(keys, dtype=np.float64),
            values=np.asarray(values, dtype=np.float64),
            cls_out=np.asarray(cls_out, dtype=np.float64),
        ),
    )


def test_audit_single_token_zero_residual(rng):
    bundle = make_visual([1.0], (1, 1), rng=rng)
    value = rng.standard_normal(4)
    audited = _with_audit(bundle, rng.standard_normal(4), rng.standard_normal((1, 4)), value[None, :], value)
    assert validate_cls_aggregation(audited) == pytest.approx(0.0, abs=1e-12)


def test_audit_consistent_multi_token(rng):
    bundle = make_visual(np.full(4, 0.25), (2, 2), rng=rng)
    q = rng.standard_normal(4)
    keys = rng.standard_normal((4, 4))
    values = rng.standard_normal((4, 4))
    logits = keys @ q / 2.0
    weights = np.exp(logits - logits.max())
    weights /= weights.sum()
    audited = _with_audit(bundle, q, keys, values, weights @ values)
    assert validate_cls_aggregation(audited) < 1e-12


def test_audit_perturbed_values_nonzero(rng):
    bundle = make_visual(np.full(4, 0.25), (2, 2), rng=rng)
    q = rng.standard_normal(4)
    keys = rng.standard_normal((4, 4))
    values = rng.standard_normal((4, 4))
    logits = keys @ q / 2.0
    weights = np.exp(logits - logits.max())
    weights /= weights.sum()
    cls_out = weights @ values
    values = values.copy()
    values[2, 1] += 1.0
    audited = _with_audit(bundle, q, keys, values, cls_out)
    assert validate_cls_aggregation(audited) > 0.0


def test_audit_absent(rng):
    bundle = make_visual(np.full(4, 0.25), (2, 2), rng=rng)
    with pytest.raises(AuditTensorsAbsent):
        validate_cls_aggregation(bundle)
