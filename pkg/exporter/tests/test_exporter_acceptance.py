"""Exporter acceptance gate: one printed pass/fail line per criterion."""
import functools

import numpy as np
import pytest

from calibrank.bundles import validate_cls_aggregation
from calibrank.estimators import CalibratedRetriever
from calibrank.io import load_bundle
from calibrank.rerank import base_similarity, evaluate

from vlm_exporter import export_text, export_visual, load_model, make_demo_images, make_demo_model


def _report(label):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"[FAIL] {label}")
                raise
            print(f"[PASS] {label}")

        return run

    return wrap


@pytest.fixture(scope="module")
def model(tmp_path_factory):
    checkpoint = make_demo_model(tmp_path_factory.mktemp("model"), seed=3)
    return load_model(str(checkpoint))


@_report("export round-trip: validated bundles, unit attention, audit residual < 1e-3")
def test_criterion_round_trip(model, tmp_path):
    clip, processor = model
    images = make_demo_images(tmp_path / "img", 12, seed=7)
    paths = export_visual(images, clip, processor, tmp_path / "b", audit=True)
    assert len(paths) >= 10
    for path in paths:
        bundle = load_bundle(path)  # loading runs full validation
        assert abs(bundle.cls_attention.sum() - 1.0) < 1e-5
        assert validate_cls_aggregation(bundle) < 1e-3


@_report("cross-component smoke: calibrated recall@1 >= raw-cosine baseline")
def test_criterion_cross_component_smoke(model, tmp_path):
    clip, processor = model
    words = [
        "red", "blue", "green", "old", "new", "small", "big", "soft", "dark",
        "light", "round", "flat", "wild", "calm", "fast", "slow", "warm",
        "cold", "tall", "short",
    ]
    images = make_demo_images(tmp_path / "img", 20, seed=103)
    visual_dirs = export_visual(images, clip, processor, tmp_path / "b")
    text_dirs = export_text(
        [f"a {w} teddy bear" for w in words], clip, processor, tmp_path / "b"
    )
    visuals = [load_bundle(p) for p in visual_dirs]
    texts = [load_bundle(p) for p in text_dirs]
    relevance = {t.query_id: {v.image_id} for t, v in zip(texts, visuals)}

    retriever = CalibratedRetriever(top_k=20).fit(visuals)
    calibrated_r1 = evaluate(retriever.rank(texts), relevance)["recall@1"]

    ids = retriever.gallery_.ids
    hits = 0
    for t in texts:
        sims = base_similarity(
            t.eot_joint.astype(np.float64), retriever.gallery_, use_raw=True
        )
        top = min(range(len(ids)), key=lambda i: (-sims[i], ids[i]))
        hits += ids[top] in relevance[t.query_id]
    assert calibrated_r1 >= hits / len(texts)
