import numpy as np
import pytest

from content_probe.errors import FormatError, ParameterError, ValidationError
from content_probe.retrieval import (
    DescriptorIndex,
    build_index,
    knn_query,
    link_hashtags,
    load_index,
    rmac,
    rmac_regions,
    save_index,
)


class TestRmac:
    def test_single_cell_map_is_normalized_channels(self):
        act = np.array([3.0, 4.0]).reshape(2, 1, 1)
        np.testing.assert_allclose(rmac(act, 1), [0.6, 0.8])

    def test_one_hot_channel(self):
        act = np.zeros((4, 5, 5))
        act[2] = np.random.default_rng(0).random((5, 5))
        out = rmac(act, 3)
        np.testing.assert_allclose(out, [0, 0, 1, 0], atol=1e-12)

    def test_two_by_two_hand_computed(self):
        # scale 1 on a 2x2 map: side = floor(2*2/2) = 2, one region covering
        # everything; max per channel then L2 normalization
        act = np.array([[[1.0, 2.0], [3.0, 4.0]], [[0.0, 1.0], [1.0, 0.0]]])
        expected = np.array([4.0, 1.0]) / np.sqrt(17.0)
        np.testing.assert_allclose(rmac(act, 1), expected)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        act = rng.random((8, 6, 9))
        base = rmac(act, 3)
        np.testing.assert_allclose(rmac(act * 137.0, 3), base, atol=1e-6)

    def test_zero_activation(self):
        np.testing.assert_array_equal(rmac(np.zeros((3, 4, 4)), 2), np.zeros(3))

    def test_unit_norm(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            h, w = rng.integers(2, 12, size=2)
            act = rng.random((6, h, w))
            assert np.linalg.norm(rmac(act, 3)) == pytest.approx(1.0)

    def test_region_grid_overlap(self):
        for extent in (4, 7, 10, 24, 33):
            for scales in (1, 2, 3):
                for y, x, side in rmac_regions(extent, extent, scales):
                    assert 0 <= y <= extent - min(side, extent)
                    assert side >= 1
                regions = rmac_regions(extent, extent, scales)
                # consecutive offsets along an axis overlap by >= 40% of the
                # side, except for degenerate single-pixel regions
                by_side: dict = {}
                for y, x, side in regions:
                    by_side.setdefault(side, set()).add(y)
                for side, offsets in by_side.items():
                    starts = sorted(offsets)
                    for a, b in zip(starts, starts[1:]):
                        if side > 1:
                            assert (side - (b - a)) / side >= 0.4 - 1e-9

    def test_validation(self):
        with pytest.raises(ParameterError):
            rmac(np.zeros((2, 2, 2)), 0)
        with pytest.raises(ValidationError):
            rmac(np.zeros((2, 2)), 1)
        bad = np.zeros((1, 2, 2))
        bad[0, 0, 0] = float("nan")
        with pytest.raises(ValidationError):
            rmac(bad, 1)


class TestIndex:
    def test_build_preserves_order_and_normalizes(self):
        index = build_index([("a", [1.0, 0.0]), ("b", [3.0, 4.0])])
        assert index.ids == ("a", "b")
        np.testing.assert_allclose(index.vectors[1], [0.6, 0.8])
        norms = np.linalg.norm(index.vectors, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-5)

    def test_duplicate_id(self):
        with pytest.raises(ValidationError, match="duplicate"):
            build_index([("a", [1.0]), ("a", [2.0])])

    def test_zero_vector(self):
        with pytest.raises(ValidationError, match="zero"):
            build_index([("a", [0.0, 0.0])])

    def test_dim_mismatch(self):
        with pytest.raises(ValidationError, match="dimension"):
            build_index([("a", [1.0, 0.0]), ("b", [1.0])])

    def test_save_load_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        index = build_index((f"v{i}", rng.normal(size=16)) for i in range(20))
        path = tmp_path / "index.bin"
        save_index(index, path)
        back = load_index(path)
        assert back.ids == index.ids
        np.testing.assert_allclose(back.vectors, index.vectors, atol=1e-7)

    def test_load_rejects_junk(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"\x00\x01binary junk\nmore")
        with pytest.raises(FormatError):
            load_index(path)


class TestKnnQuery:
    def test_stored_vector_is_top_hit(self):
        rng = np.random.default_rng(4)
        vectors = rng.normal(size=(50, 8))
        index = build_index((f"v{i}", vectors[i]) for i in range(50))
        hits = knn_query(index, vectors[17], 3)
        assert hits[0][0] == "v17"
        assert hits[0][1] == pytest.approx(1.0)

    def test_k_larger_than_index(self):
        index = build_index([("a", [1.0, 0.0]), ("b", [0.0, 1.0])])
        assert len(knn_query(index, [1.0, 1.0], 10)) == 2

    def test_matches_brute_force(self):
        rng = np.random.default_rng(5)
        vectors = rng.normal(size=(300, 24))
        index = build_index((f"v{i}", vectors[i]) for i in range(300))
        for _ in range(20):
            query = rng.normal(size=24)
            hits = knn_query(index, query, 10)
            qn = query / np.linalg.norm(query)
            sims = [float(np.dot(vectors[i] / np.linalg.norm(vectors[i]), qn)) for i in range(300)]
            order = sorted(range(300), key=lambda i: (-sims[i], i))[:10]
            assert [h[0] for h in hits] == [f"v{i}" for i in order]

    def test_tie_break_by_insertion_order(self):
        index = build_index([("later", [1.0, 0.0]), ("first", [2.0, 0.0]), ("other", [0.0, 1.0])])
        hits = knn_query(index, [1.0, 0.0], 3)
        assert [h[0] for h in hits] == ["later", "first", "other"]

    def test_similarity_bounds_and_order(self):
        rng = np.random.default_rng(6)
        index = build_index((f"v{i}", rng.normal(size=5)) for i in range(40))
        hits = knn_query(index, rng.normal(size=5), 40)
        sims = [s for _, s in hits]
        assert all(-1.0 - 1e-9 <= s <= 1.0 + 1e-9 for s in sims)
        assert all(a >= b - 1e-12 for a, b in zip(sims, sims[1:]))

    def test_empty_and_bad_queries(self):
        index = build_index([("a", [1.0, 0.0])])
        with pytest.raises(ParameterError):
            knn_query(index, [1.0, 0.0], 0)
        with pytest.raises(ValidationError):
            knn_query(index, [1.0, 0.0, 0.0], 1)
        with pytest.raises(ValidationError):
            knn_query(DescriptorIndex((), np.zeros((0, 2))), [1.0, 0.0], 1)


class TestLinkHashtags:
    def test_union_keeps_rank_order(self):
        index = build_index([("n1", [1.0, 0.0]), ("n2", [0.9, 0.1]), ("n3", [0.0, 1.0])])
        tags = {"n1": ["#sun", "#sea"], "n2": ["#sea", "#sand"], "n3": ["#moon"]}
        linked = link_hashtags(index, [("q", [1.0, 0.05])], tags, k=2)
        assert linked == [
            {
                "image_id": "q",
                "neighbors": ["n1", "n2"],
                "hashtags": ["#sun", "#sea", "#sand"],
            }
        ]

    def test_neighbors_without_tags(self):
        index = build_index([("n1", [1.0])])
        linked = link_hashtags(index, [("q", [1.0])], {}, k=1)
        assert linked[0]["hashtags"] == []
