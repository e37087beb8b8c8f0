import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paracosm import AblationConfig, cosine_similarity, fuse_gallery, fuse_query, l2_normalize, rank_subset, rank_topk
from paracosm.errors import (
    DegenerateVectorWarning,
    DimensionMismatch,
    EmptyGallery,
    EmptyTermSet,
    NonFiniteInput,
    UnknownImageId,
    ZeroVector,
)
from paracosm.fusion import GalleryFeature, QueryFeature, rank_rows

from conftest import make_vec, random_gallery

E1 = [1.0, 0.0, 0.0]
E2 = [0.0, 1.0, 0.0]
E3 = [0.0, 0.0, 1.0]

FULL = AblationConfig()
TEXT_ONLY = AblationConfig(query_terms={"modification_text"})
NO_MOD = AblationConfig(query_terms={"mental_image", "query_description"})
REAL_ONLY = AblationConfig(gallery_terms={"real_image"})


class TestL2Normalize:
    def test_three_four_five(self):
        out = l2_normalize(make_vec([3.0, 4.0]))
        np.testing.assert_array_equal(out.values, [0.6, 0.8])

    def test_zero_vector_passes_with_warning(self):
        with pytest.warns(DegenerateVectorWarning):
            out = l2_normalize(make_vec([0.0, 0.0]))
        np.testing.assert_array_equal(out.values, [0.0, 0.0])

    def test_unit_vector_is_identity(self):
        out = l2_normalize(make_vec(E1))
        np.testing.assert_array_equal(out.values, E1)

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteInput):
            make_vec([1.0, float("nan")])
        with pytest.raises(NonFiniteInput):
            make_vec([float("inf"), 0.0])


class TestFuseQuery:
    def test_orthonormal_golden_lambda_03(self):
        q = fuse_query(make_vec(E1), make_vec(E2), make_vec(E3), lam=0.3, config=FULL)
        np.testing.assert_allclose(q.q.values, [0.3, 0.3, 0.7], rtol=0, atol=0)
        assert q.terms_used == {"mental_image", "query_description", "modification_text"}

    def test_lambda_zero_equals_mod_text_exactly(self):
        mod = make_vec(E3)
        q = fuse_query(make_vec(E1), make_vec(E2), mod, lam=0.0, config=FULL)
        np.testing.assert_array_equal(q.q.values, mod.values)

    def test_lambda_one_drops_mod_text_exactly(self):
        with_mod = fuse_query(make_vec(E1), make_vec(E2), make_vec(E3), lam=1.0, config=FULL)
        without = fuse_query(make_vec(E1), make_vec(E2), None, config=NO_MOD)
        np.testing.assert_array_equal(with_mod.q.values, without.q.values)

    def test_sum_of_enabled_terms_without_mod(self):
        q = fuse_query(make_vec(E1), make_vec(E1), None, config=NO_MOD)
        np.testing.assert_array_equal(q.q.values, [2.0, 0.0, 0.0])

    def test_mod_only_passes_through(self):
        q = fuse_query(None, None, make_vec(E3), lam=0.3, config=TEXT_ONLY)
        np.testing.assert_array_equal(q.q.values, E3)

    def test_empty_term_set(self):
        with pytest.raises(EmptyTermSet):
            fuse_query(None, None, None, config=FULL)
        # provided but not enabled is still empty
        with pytest.raises(EmptyTermSet):
            fuse_query(make_vec(E1), None, None, config=TEXT_ONLY)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            fuse_query(make_vec(E1), make_vec([1.0, 0.0]), None, config=FULL)

    def test_zero_fusion_rejected(self):
        with pytest.raises(ZeroVector):
            fuse_query(make_vec(E1), make_vec([-1.0, 0.0, 0.0]), None, config=NO_MOD)

    def test_lambda_range_validated(self):
        with pytest.raises(ValueError):
            fuse_query(make_vec(E1), None, None, lam=1.5, config=FULL)


class TestFuseGallery:
    def test_identical_components_recover_input(self):
        v = make_vec([0.6, 0.8])
        g = fuse_gallery(v, v, beta=0.5, config=FULL, image_id="a")
        np.testing.assert_array_equal(g.phi.values, v.values)

    def test_single_term_reduction(self):
        real = make_vec(E1)
        g = fuse_gallery(real, None, config=REAL_ONLY, image_id="a")
        np.testing.assert_array_equal(g.phi.values, real.values)

    def test_orthonormal_golden_beta_05(self):
        g = fuse_gallery(make_vec(E1), make_vec(E2), beta=0.5, config=FULL, image_id="a")
        np.testing.assert_array_equal(g.phi.values, [0.5, 0.5, 0.0])

    def test_text_terms_added_with_unit_weight(self):
        cfg = AblationConfig(
            gallery_terms={"real_image", "synthetic_counterpart", "detailed_text", "brief_text"}
        )
        g = fuse_gallery(
            make_vec(E1), make_vec(E2), make_vec(E3), make_vec(E3), beta=0.5,
            config=cfg, image_id="a",
        )
        np.testing.assert_array_equal(g.phi.values, [0.5, 0.5, 2.0])

    def test_beta_05_is_half_the_plain_sum(self):
        rng = np.random.default_rng(5)
        r, s = rng.standard_normal(6), rng.standard_normal(6)
        g = fuse_gallery(make_vec(r), make_vec(s), beta=0.5, config=FULL, image_id="a")
        np.testing.assert_array_equal(g.phi.values, 0.5 * (r + s))

    def test_empty_term_set(self):
        with pytest.raises(EmptyTermSet):
            fuse_gallery(None, None, config=FULL, image_id="a")


class TestCosine:
    def test_identical(self):
        v = make_vec([1.0, 2.0, 3.0])
        assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine_similarity(make_vec(E1), make_vec(E2)) == 0.0

    def test_antipodal(self):
        v = make_vec([1.0, 2.0, 3.0])
        w = make_vec([-1.0, -2.0, -3.0])
        assert cosine_similarity(v, w) == pytest.approx(-1.0, abs=1e-12)

    def test_zero_vector(self):
        with pytest.raises(ZeroVector):
            cosine_similarity(make_vec([0.0, 0.0]), make_vec([1.0, 0.0]))

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatch):
            cosine_similarity(make_vec(E1), make_vec([1.0, 0.0]))


def _query(values):
    return QueryFeature(q=make_vec(values), lam=0.3)


class TestRankTopK:
    def test_highest_similarity_first(self):
        gallery = [
            GalleryFeature(phi=make_vec([0.9, 0.1]), image_id="a", beta=0.5),
            GalleryFeature(phi=make_vec([0.1, 0.9]), image_id="b", beta=0.5),
        ]
        out = rank_topk(_query([1.0, 0.0]), gallery, k=1)
        assert [r.image_id for r in out] == ["a"]
        assert out[0].rank == 1

    def test_tie_break_ascending_id(self):
        v = [1.0, 0.0]
        gallery = [
            GalleryFeature(phi=make_vec(v), image_id="zz", beta=0.5),
            GalleryFeature(phi=make_vec(v), image_id="aa", beta=0.5),
        ]
        out = rank_topk(_query([1.0, 0.0]), gallery, k=2)
        assert [r.image_id for r in out] == ["aa", "zz"]

    def test_k_beyond_n_returns_all(self):
        gallery = random_gallery(np.random.default_rng(0), 5, 4)
        out = rank_topk(_query([1.0, 0, 0, 0]), gallery, k=50)
        assert len(out) == 5
        assert [r.rank for r in out] == [1, 2, 3, 4, 5]

    def test_empty_gallery(self):
        with pytest.raises(EmptyGallery):
            rank_topk(_query([1.0, 0.0]), [], k=1)

    def test_k_must_be_positive(self):
        gallery = random_gallery(np.random.default_rng(0), 3, 4)
        with pytest.raises(ValueError):
            rank_topk(_query([1.0, 0, 0, 0]), gallery, k=0)

    def test_scores_sorted_descending(self):
        rng = np.random.default_rng(3)
        gallery = random_gallery(rng, 20, 6)
        out = rank_topk(_query(rng.standard_normal(6)), gallery, k=20)
        scores = [r.score for r in out]
        assert scores == sorted(scores, reverse=True)


class TestRankSubset:
    def test_full_subset_equals_topk(self):
        rng = np.random.default_rng(11)
        gallery = random_gallery(rng, 10, 5)
        q = _query(rng.standard_normal(5))
        full = rank_topk(q, gallery, k=10)
        sub = rank_subset(q, gallery, [g.image_id for g in gallery])
        assert [(r.image_id, r.rank) for r in full] == [(r.image_id, r.rank) for r in sub]

    def test_singleton_subset(self):
        gallery = random_gallery(np.random.default_rng(1), 4, 3)
        out = rank_subset(_query([1.0, 0, 0]), gallery, ["g002"])
        assert [(r.image_id, r.rank) for r in out] == [("g002", 1)]

    def test_unknown_id(self):
        gallery = random_gallery(np.random.default_rng(1), 4, 3)
        with pytest.raises(UnknownImageId):
            rank_subset(_query([1.0, 0, 0]), gallery, ["nope"])

    def test_restriction_never_worsens_rank(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            n = int(rng.integers(6, 20))
            gallery = random_gallery(rng, n, 6)
            q = _query(rng.standard_normal(6))
            target = f"g{int(rng.integers(n)):03d}"
            global_rank = next(
                r.rank for r in rank_topk(q, gallery, k=n) if r.image_id == target
            )
            others = [g.image_id for g in gallery if g.image_id != target]
            rng.shuffle(others)
            subset = [target] + others[: int(rng.integers(0, n - 1))]
            sub_rank = next(
                r.rank for r in rank_subset(q, gallery, sorted(subset)) if r.image_id == target
            )
            assert sub_rank <= global_rank


class TestRankingProperties:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_positive_scale_invariance(self, seed):
        rng = np.random.default_rng(seed)
        n, dim = int(rng.integers(2, 15)), int(rng.integers(2, 8))
        gallery = random_gallery(rng, n, dim)
        q = _query(rng.standard_normal(dim))
        base = [(r.image_id, r.rank) for r in rank_topk(q, gallery, k=n)]

        c_q = float(rng.uniform(0.1, 50.0))
        scaled_q = QueryFeature(q=make_vec(q.q.values * c_q), lam=0.3)
        scaled_gallery = [
            GalleryFeature(
                phi=make_vec(g.phi.values * float(rng.uniform(0.1, 50.0))),
                image_id=g.image_id,
                beta=g.beta,
            )
            for g in gallery
        ]
        rescored = [(r.image_id, r.rank) for r in rank_topk(scaled_q, scaled_gallery, k=n)]
        assert rescored == base

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_beta_05_ranking_matches_unweighted_sum(self, seed):
        rng = np.random.default_rng(seed)
        n, dim = int(rng.integers(2, 12)), int(rng.integers(2, 8))
        reals = [rng.standard_normal(dim) for _ in range(n)]
        syns = [rng.standard_normal(dim) for _ in range(n)]
        weighted = [
            fuse_gallery(make_vec(r), make_vec(s), beta=0.5, config=FULL, image_id=f"g{i:03d}")
            for i, (r, s) in enumerate(zip(reals, syns))
        ]
        unweighted = [
            GalleryFeature(phi=make_vec(r + s), image_id=f"g{i:03d}", beta=0.5)
            for i, (r, s) in enumerate(zip(reals, syns))
        ]
        for w, u in zip(weighted, unweighted):
            np.testing.assert_array_equal(w.phi.values * 2.0, u.phi.values)
        q = _query(rng.standard_normal(dim))
        assert [(r.image_id, r.rank) for r in rank_topk(q, weighted, k=n)] == [
            (r.image_id, r.rank) for r in rank_topk(q, unweighted, k=n)
        ]

    def test_rankings_deterministic_across_runs(self):
        rng1 = np.random.default_rng(99)
        rng2 = np.random.default_rng(99)
        g1 = random_gallery(rng1, 30, 8)
        g2 = random_gallery(rng2, 30, 8)
        q1 = _query(rng1.standard_normal(8))
        q2 = _query(rng2.standard_normal(8))
        out1 = rank_topk(q1, g1, k=30)
        out2 = rank_topk(q2, g2, k=30)
        assert [(r.image_id, r.score, r.rank) for r in out1] == [
            (r.image_id, r.score, r.rank) for r in out2
        ]

    def test_partitioned_scoring_merges_to_same_order(self):
        rng = np.random.default_rng(7)
        gallery = random_gallery(rng, 25, 6)
        q = _query(rng.standard_normal(6))
        full = [(r.image_id, r.score) for r in rank_topk(q, gallery, k=25)]

        part_results = []
        for part in (gallery[:10], gallery[10:]):
            part_results.extend((r.image_id, r.score) for r in rank_topk(q, part, k=len(part)))
        merged = sorted(part_results, key=lambda t: (-t[1], t[0]))
        assert merged == full


class TestRankRows:
    def test_matches_feature_path(self):
        rng = np.random.default_rng(21)
        gallery = random_gallery(rng, 12, 5)
        q = _query(rng.standard_normal(5))
        via_features = rank_topk(q, gallery, k=12)
        matrix = np.stack([g.phi.values for g in gallery]).astype("<f4")
        via_rows = rank_rows(q.q.values, [g.image_id for g in gallery], matrix, 12)
        assert [r.image_id for r in via_features] == [r.image_id for r in via_rows]

    def test_zero_row_rejected(self):
        matrix = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(ZeroVector):
            rank_rows(np.array([1.0, 0.0]), ["a", "b"], matrix, 2)
