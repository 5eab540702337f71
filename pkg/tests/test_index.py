"""Exact flat L2 index: pooling, queries, tie-breaks, file format."""

import math
import struct

import numpy as np
import pytest

from cvdlab.corpus import CodeSample
from cvdlab.index import MAGIC, FlatIndex, build_index, pool_mean


def brute_force(index, q, k, exclude_id=None):
    """Independent pure-python scan with the same ordering contract."""
    q = np.asarray(q, dtype=np.float64)
    stored = index.vectors.astype(np.float64)
    n, d = stored.shape
    candidates = [i for i in range(n) if index.ids[i] != exclude_id]
    d2 = {i: float(sum((stored[i][j] - q[j]) ** 2 for j in range(d))) for i in candidates}
    order = sorted(candidates, key=lambda i: (d2[i], index.ids[i]))
    return [(index.ids[i], math.sqrt(d2[i])) for i in order[:k]]


class TestPoolMean:
    def test_two_vectors(self):
        assert pool_mean([np.array([1.0, 1.0]), np.array([3.0, 3.0])]).tolist() == [2.0, 2.0]

    def test_single_vector_identity(self):
        v = np.array([4.0, -1.0, 0.5])
        assert pool_mean([v]).tolist() == v.tolist()

    def test_matches_accumulation_loop(self):
        rng = np.random.default_rng(0)
        vectors = [rng.normal(size=12) for _ in range(100)]
        total = np.zeros(12)
        for v in vectors:
            total = total + v
        assert np.allclose(pool_mean(vectors), total / 100, atol=1e-9, rtol=0)

    def test_accepts_2d_stack(self):
        stack = np.arange(6.0).reshape(3, 2)
        assert pool_mean(stack).tolist() == [2.0, 3.0]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            pool_mean([])
        with pytest.raises(ValueError):
            pool_mean(np.zeros((0, 4)))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            pool_mean([np.zeros(3), np.zeros(4)])


class TestQuery:
    def test_stored_vector_is_its_own_nearest(self):
        rng = np.random.default_rng(1)
        vectors = rng.normal(size=(20, 8))
        index = FlatIndex(vectors, [f"s{i:02d}" for i in range(20)])
        hits = index.query(index.vectors[7], k=3)
        assert hits[0] == ("s07", 0.0)

    def test_k_equals_n_returns_all_sorted(self):
        vectors = np.array([[0.0], [3.0], [1.0]])
        index = FlatIndex(vectors, ["a", "b", "c"])
        hits = index.query(np.array([0.0]), k=3)
        assert [h[0] for h in hits] == ["a", "c", "b"]
        distances = [h[1] for h in hits]
        assert distances == sorted(distances)
        assert all(d >= 0 for d in distances)

    def test_ties_break_by_ascending_id(self):
        vectors = np.array([[1.0, 0.0], [1.0, 0.0], [5.0, 0.0]])
        index = FlatIndex(vectors, ["beta", "alpha", "zeta"])
        hits = index.query(np.array([0.0, 0.0]), k=2)
        assert [h[0] for h in hits] == ["alpha", "beta"]
        assert hits[0][1] == hits[1][1] == 1.0

    def test_matches_exhaustive_scan_on_random_index(self):
        rng = np.random.default_rng(2)
        vectors = rng.integers(-6, 7, size=(200, 16)).astype(np.float64)
        ids = [f"s{i:03d}" for i in rng.permutation(200)]
        index = FlatIndex(vectors, ids)
        q = rng.integers(-6, 7, size=16).astype(np.float64)
        assert index.query(q, k=6) == brute_force(index, q, 6)

    def test_exclude_id_drops_the_self_match(self):
        rng = np.random.default_rng(3)
        vectors = rng.normal(size=(10, 4))
        index = FlatIndex(vectors, [f"s{i}" for i in range(10)])
        hits = index.query(index.vectors[4], k=9, exclude_id="s4")
        assert "s4" not in [h[0] for h in hits]
        assert hits == brute_force(index, index.vectors[4], 9, exclude_id="s4")

    def test_k_out_of_range(self):
        index = FlatIndex(np.zeros((4, 2)) + np.arange(4).reshape(-1, 1), ["a", "b", "c", "d"])
        with pytest.raises(ValueError, match="k must be"):
            index.query(np.zeros(2), k=0)
        with pytest.raises(ValueError, match="k must be"):
            index.query(np.zeros(2), k=5)
        with pytest.raises(ValueError, match="k must be"):
            index.query(np.zeros(2), k=4, exclude_id="a")

    def test_dimension_mismatch(self):
        index = FlatIndex(np.ones((3, 4)) * np.arange(3).reshape(-1, 1), ["a", "b", "c"])
        with pytest.raises(ValueError, match="dimension"):
            index.query(np.zeros(5), k=1)

    def test_non_finite_query_rejected(self):
        index = FlatIndex(np.arange(6.0).reshape(3, 2), ["a", "b", "c"])
        with pytest.raises(ValueError, match="finite"):
            index.query(np.array([np.nan, 0.0]), k=1)


class TestConstruction:
    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError, match="unique"):
            FlatIndex(np.arange(4.0).reshape(2, 2), ["a", "a"])

    def test_non_finite_vectors_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            FlatIndex(np.array([[1.0, np.inf]]), ["a"])

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            FlatIndex(np.zeros((0, 3)), [])
        with pytest.raises(ValueError, match="ids"):
            FlatIndex(np.zeros((2, 3)), ["only-one"])


class TestFileFormat:
    def build(self):
        rng = np.random.default_rng(4)
        return FlatIndex(rng.normal(size=(17, 5)), [f"id-{i:02d}" for i in range(17)])

    def test_round_trip_is_bit_identical(self, tmp_path):
        index = self.build()
        path = tmp_path / "flat.bin"
        index.save(path)
        loaded = FlatIndex.load(path)
        assert np.array_equal(loaded.vectors, index.vectors)
        assert loaded.ids == index.ids
        resaved = tmp_path / "again.bin"
        loaded.save(resaved)
        assert resaved.read_bytes() == path.read_bytes()

    def test_loaded_index_answers_identically(self, tmp_path):
        index = self.build()
        path = tmp_path / "flat.bin"
        index.save(path)
        loaded = FlatIndex.load(path)
        q = np.linspace(-1, 1, 5)
        assert loaded.query(q, k=4) == index.query(q, k=4)

    def test_header_layout(self, tmp_path):
        index = self.build()
        path = tmp_path / "flat.bin"
        index.save(path)
        raw = path.read_bytes()
        assert raw.startswith(MAGIC)
        version, n, d = struct.unpack("<IQI", raw[len(MAGIC) : len(MAGIC) + 16])
        assert (version, n, d) == (1, 17, 5)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTANIDX" + b"\x00" * 32)
        with pytest.raises(ValueError, match="magic"):
            FlatIndex.load(path)

    def test_truncated_file_rejected(self, tmp_path):
        index = self.build()
        path = tmp_path / "flat.bin"
        index.save(path)
        (tmp_path / "cut.bin").write_bytes(path.read_bytes()[:40])
        with pytest.raises(ValueError, match="truncated"):
            FlatIndex.load(tmp_path / "cut.bin")

    def test_unsupported_version_rejected(self, tmp_path):
        index = self.build()
        path = tmp_path / "flat.bin"
        index.save(path)
        raw = bytearray(path.read_bytes())
        raw[len(MAGIC) : len(MAGIC) + 4] = struct.pack("<I", 9)
        (tmp_path / "v9.bin").write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="version"):
            FlatIndex.load(tmp_path / "v9.bin")


class TestBuildIndex:
    def samples(self, n=5):
        return [CodeSample(id=f"s{i}", code=f"code {i}", label=i % 2) for i in range(n)]

    def test_shapes_and_order(self):
        def embedder(code):
            return np.full(8, float(len(code)))

        index = build_index(self.samples(), embedder)
        assert (index.size, index.dim) == (5, 8)
        assert index.ids == [f"s{i}" for i in range(5)]

    def test_embedder_failure_names_the_sample(self):
        def embedder(code):
            if code.endswith("3"):
                raise RuntimeError("boom")
            return np.zeros(4)

        with pytest.raises(RuntimeError, match="s3"):
            build_index(self.samples(), embedder)

    def test_mixed_dimensions_rejected(self):
        def embedder(code):
            return np.zeros(3 if code.endswith("0") else 4)

        with pytest.raises(ValueError, match="dimension"):
            build_index(self.samples(), embedder)

    def test_empty_samples_rejected(self):
        with pytest.raises(ValueError):
            build_index([], lambda code: np.zeros(2))
