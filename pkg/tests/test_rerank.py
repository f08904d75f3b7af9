import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calibrank.bundles import GalleryIndex
from calibrank.errors import EmptyGallery, MissingRelevance
from calibrank.rerank import (
    FusionConfig,
    RankEntry,
    RankingResult,
    average_precision,
    base_similarity,
    evaluate,
    fuse_and_rank,
    topk_candidates,
)
from calibrank.textual import CalibratedQuery, SubspaceSplit


def make_gallery(vectors, ids=None):
    vectors = np.asarray(vectors, dtype=np.float64)
    ids = ids or [f"img_{i:03d}" for i in range(len(vectors))]
    return GalleryIndex(ids=list(ids), calibrated=vectors, raw=vectors.copy())


def make_query(t_r_joint, query_id="q0"):
    t_r_joint = np.asarray(t_r_joint, dtype=np.float64)
    t_r_joint = t_r_joint / np.linalg.norm(t_r_joint)
    d = t_r_joint.size
    return CalibratedQuery(
        query_id=query_id,
        split=SubspaceSplit(
            alpha=np.array([1.0]),
            tau_t=1.0,
            general_idx=np.array([0]),
            disc_idx=np.array([], dtype=int),
        ),
        t_a=np.zeros((1, d)),
        t_d=np.zeros((0, d)),
        m=0.0,
        t_r_hat=t_r_joint,
        t_r_joint=t_r_joint,
        text_global=t_r_joint,
    )


def ranking_from_ids(query_id, ids):
    return RankingResult(
        query_id=query_id,
        entries=tuple(
            RankEntry(image_id=i, base_sim=0.0, disc_sim=None, fused_score=0.0)
            for i in ids
        ),
    )


class TestBaseSimilarity:
    def test_self_similarity(self):
        gallery = make_gallery(np.eye(3))
        sims = base_similarity(np.array([0.0, 1.0, 0.0]), gallery)
        assert sims[1] == pytest.approx(1.0)

    def test_orthogonal(self):
        gallery = make_gallery([[1.0, 0.0]])
        sims = base_similarity(np.array([0.0, 2.0]), gallery)
        assert sims[0] == pytest.approx(0.0, abs=1e-12)

    def test_matches_cosine_oracle(self, rng):
        vectors = rng.standard_normal((5, 6))
        gallery = make_gallery(vectors)
        q = rng.standard_normal(6)
        sims = base_similarity(q, gallery)
        for i in range(5):
            want = vectors[i] @ q / (np.linalg.norm(vectors[i]) * np.linalg.norm(q))
            assert sims[i] == pytest.approx(want, abs=1e-9)

    def test_empty_gallery(self):
        with pytest.raises(EmptyGallery):
            base_similarity(
                np.ones(2),
                GalleryIndex(ids=[], calibrated=np.zeros((0, 2)), raw=np.zeros((0, 2))),
            )


class TestTopK:
    def test_saturation(self):
        ids = ["b", "a", "c"]
        order = topk_candidates(np.array([0.1, 0.5, 0.3]), ids, 10)
        assert [ids[i] for i in order] == ["a", "c", "b"]

    def test_tie_break_by_id(self):
        ids = ["img_b", "img_a", "img_c"]
        order = topk_candidates(np.array([0.9, 0.9, 0.1]), ids, 1)
        assert ids[order[0]] == "img_a"

    def test_matches_full_sort_prefix(self, rng):
        for _ in range(20):
            sims = rng.standard_normal(10)
            ids = [f"img_{i:03d}" for i in range(10)]
            full = sorted(range(10), key=lambda i: (-sims[i], ids[i]))
            assert topk_candidates(sims, ids, 3) == full[:3]


class TestFuseAndRank:
    def test_lambda_one_keeps_base_order(self, rng):
        vectors = rng.standard_normal((8, 4))
        gallery = make_gallery(vectors)
        query = make_query(rng.standard_normal(4))
        base = fuse_and_rank(query, query.text_global, gallery, FusionConfig(lam=1.0, k=5))
        plain = topk_candidates(
            base_similarity(query.text_global, gallery), gallery.ids, 5
        )
        assert base.ranked_ids()[:5] == [gallery.ids[i] for i in plain]

    def test_fused_score_arithmetic(self):
        gallery = make_gallery([[1.0, 0.0]])
        query = make_query([1.0, 0.0])
        result = fuse_and_rank(query, np.array([1.0, 0.0]), gallery, FusionConfig(lam=0.5, k=1))
        e = result.entries[0]
        assert e.fused_score == pytest.approx(0.5 * e.base_sim + 0.5 * e.disc_sim)

    def test_hand_fusion_value(self):
        # base 0.8, disc 0.4, lambda 0.5 -> 0.6
        assert 0.5 * 0.8 + 0.5 * 0.4 == pytest.approx(0.6)
        vec = np.array([0.8, 0.6])  # cos vs [1,0] = 0.8
        disc_dir = np.array([0.4, np.sqrt(1 - 0.16)])  # cos vs vec-unit = ?
        gallery = make_gallery([vec])
        query = make_query(disc_dir)
        result = fuse_and_rank(
            query, np.array([1.0, 0.0]), gallery, FusionConfig(lam=0.5, k=1)
        )
        e = result.entries[0]
        assert e.base_sim == pytest.approx(0.8)
        want_disc = disc_dir @ vec / np.linalg.norm(vec)
        assert e.disc_sim == pytest.approx(want_disc)
        assert e.fused_score == pytest.approx(0.5 * 0.8 + 0.5 * want_disc)

    def test_lambda_zero_ranks_by_disc(self, rng):
        vectors = rng.standard_normal((6, 4))
        gallery = make_gallery(vectors)
        query = make_query(rng.standard_normal(4))
        result = fuse_and_rank(query, rng.standard_normal(4), gallery, FusionConfig(lam=0.0, k=6))
        disc = gallery.calibrated_unit @ query.t_r_joint
        want = sorted(range(6), key=lambda i: (-disc[i], gallery.ids[i]))
        assert result.ranked_ids() == [gallery.ids[i] for i in want]

    def test_candidate_set_is_permutation(self, rng):
        vectors = rng.standard_normal((10, 4))
        gallery = make_gallery(vectors)
        query = make_query(rng.standard_normal(4))
        result = fuse_and_rank(query, query.text_global, gallery, FusionConfig(lam=0.3, k=4))
        base_order = topk_candidates(
            base_similarity(query.text_global, gallery), gallery.ids, 4
        )
        assert set(result.ranked_ids()[:4]) == {gallery.ids[i] for i in base_order}
        assert sorted(result.ranked_ids()) == sorted(gallery.ids)

    def test_tail_keeps_base_order(self, rng):
        vectors = rng.standard_normal((10, 4))
        gallery = make_gallery(vectors)
        query = make_query(rng.standard_normal(4))
        result = fuse_and_rank(query, query.text_global, gallery, FusionConfig(lam=0.2, k=3))
        sims = base_similarity(query.text_global, gallery)
        full = [gallery.ids[i] for i in topk_candidates(sims, gallery.ids, 10)]
        assert result.ranked_ids()[3:] == full[3:]
        for e in result.entries[3:]:
            assert e.disc_sim is None
            assert e.fused_score == e.base_sim

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_monotone_in_disc(self, seed):
        rng = np.random.default_rng(seed)
        vectors = rng.standard_normal((8, 4))
        gallery = make_gallery(vectors)
        g = rng.standard_normal(4)
        lam = 0.4
        result = fuse_and_rank(make_query(rng.standard_normal(4)), g, gallery, FusionConfig(lam=lam, k=8))
        # Boosting one candidate's disc_sim never lowers its rank: verify via
        # direct score recomputation with a raised disc value.
        target = result.entries[3]
        old_rank = result.ranked_ids().index(target.image_id)
        boosted = [
            (e.image_id, e.fused_score + (0.5 * (1 - lam) if e.image_id == target.image_id else 0.0))
            for e in result.entries
        ]
        new_order = sorted(boosted, key=lambda t: (-t[1], t[0]))
        new_rank = [t[0] for t in new_order].index(target.image_id)
        assert new_rank <= old_rank

    def test_round_trip_json(self, rng):
        vectors = rng.standard_normal((4, 3))
        gallery = make_gallery(vectors)
        query = make_query(rng.standard_normal(3))
        result = fuse_and_rank(query, rng.standard_normal(3), gallery, FusionConfig(lam=0.5, k=2))
        assert RankingResult.from_json(result.to_json()) == result


class TestEvaluate:
    def test_perfect_single_query(self):
        results = [ranking_from_ids("q0", ["a", "b", "c"])]
        metrics = evaluate(results, {"q0": {"a"}}, ks=(1, 5))
        assert metrics["recall@1"] == 1.0
        assert metrics["mAP"] == 1.0

    def test_rank_two_of_ten(self):
        ids = [f"i{k}" for k in range(10)]
        results = [ranking_from_ids("q0", ids)]
        metrics = evaluate(results, {"q0": {"i1"}}, ks=(1, 5))
        assert metrics["recall@1"] == 0.0
        assert metrics["recall@5"] == 1.0
        assert metrics["mAP"] == pytest.approx(0.5)

    def test_mean_of_aps(self):
        results = [
            ranking_from_ids("q0", ["a", "b"]),
            ranking_from_ids("q1", ["a", "b"]),
        ]
        metrics = evaluate(results, {"q0": {"a"}, "q1": {"b"}}, ks=(1,))
        assert metrics["mAP"] == pytest.approx(0.75)

    def test_missing_relevance(self):
        results = [ranking_from_ids("q0", ["a"])]
        with pytest.raises(MissingRelevance):
            evaluate(results, {})
        with pytest.raises(MissingRelevance):
            evaluate(results, {"q0": set()})

    def test_average_precision_multi_relevant(self):
        # relevant at ranks 1 and 3: AP = (1/1 + 2/3) / 2
        ap = average_precision(["a", "b", "c"], {"a", "c"})
        assert ap == pytest.approx((1.0 + 2.0 / 3.0) / 2.0)


def test_fusion_config_validation():
    with pytest.raises(ValueError):
        FusionConfig(lam=1.5)
    with pytest.raises(ValueError):
        FusionConfig(k=0)
