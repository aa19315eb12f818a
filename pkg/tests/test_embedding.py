import numpy as np
import pytest

from trajsim.core import Dataset, Trajectory, generate_synthetic
from trajsim.embedding import (
    Embedding,
    EmbeddingError,
    EmbeddingStore,
    FfnWeights,
    encode_dataset,
    ffn_encode,
    flatten,
    load_store,
    save_store,
    similarity,
)


def small_weights(d=4, L=3, fill=None, seed=0):
    if fill is not None:
        return FfnWeights(np.full((2 * L, d), fill), np.full(d, fill), np.full((d, d), fill), np.full(d, fill))
    return FfnWeights.from_seed(seed, d=d, L=L)


class TestWeights:
    def test_seeded_shapes_and_range(self):
        w = FfnWeights.from_seed(1)
        assert (w.d, w.L) == (128, 200)
        assert w.W1.shape == (400, 128) and w.W2.shape == (128, 128)
        assert np.abs(w.W1).max() <= 1 / np.sqrt(400) and np.abs(w.W2).max() <= 1 / np.sqrt(128)

    def test_seed_deterministic(self):
        assert FfnWeights.from_seed(5, d=8, L=4) == FfnWeights.from_seed(5, d=8, L=4)
        assert FfnWeights.from_seed(5, d=8, L=4) != FfnWeights.from_seed(6, d=8, L=4)

    def test_inconsistent_shapes(self):
        with pytest.raises(EmbeddingError):
            FfnWeights(np.zeros((6, 4)), np.zeros(3), np.zeros((4, 4)), np.zeros(4))

    def test_non_finite(self):
        with pytest.raises(EmbeddingError):
            FfnWeights(np.full((6, 4), np.nan), np.zeros(4), np.zeros((4, 4)), np.zeros(4))

    def test_file_round_trip(self, tmp_path):
        w = FfnWeights.from_seed(3, d=5, L=7)
        w.save(tmp_path / "w.txt")
        assert FfnWeights.load(tmp_path / "w.txt") == w
        assert (tmp_path / "w.txt").read_text().splitlines()[0] == "W1 14 5"

    def test_truncated_file(self, tmp_path):
        w = FfnWeights.from_seed(3, d=2, L=2)
        w.save(tmp_path / "w.txt")
        lines = (tmp_path / "w.txt").read_text().splitlines()
        (tmp_path / "bad.txt").write_text("\n".join(lines[:6]) + "\n")
        with pytest.raises(EmbeddingError):
            FfnWeights.load(tmp_path / "bad.txt")


class TestEncode:
    def test_zero_weights(self):
        tr = Trajectory("a", [[3, 4], [5, 6]])
        assert np.array_equal(ffn_encode(tr, small_weights(fill=0.0)).vec, np.zeros(4))

    def test_bias_passthrough(self):
        d, L = 3, 2
        c = np.array([1.5, -2.0, 0.25])
        w = FfnWeights(np.zeros((2 * L, d)), np.zeros(d), np.eye(d), c)
        assert np.array_equal(ffn_encode(Trajectory("a", [[9, 9]]), w).vec, c)

    def test_deterministic(self):
        w = FfnWeights.from_seed(2)
        tr = generate_synthetic(1, seed=4)[0]
        assert ffn_encode(tr, w) == ffn_encode(tr, w)

    def test_dimension_independent_of_length(self):
        w = small_weights(d=6, L=5)
        for n in (1, 4, 5, 9):
            assert ffn_encode(Trajectory("a", np.ones((n, 2))), w).d == 6

    def test_flatten_pads_with_last_point(self):
        x = flatten(Trajectory("a", [[1, 2], [3, 4]]), 4)
        assert x.tolist() == [1, 2, 3, 4, 3, 4, 3, 4]

    def test_flatten_truncates(self):
        x = flatten(Trajectory("a", np.arange(10.0).reshape(5, 2)), 2)
        assert x.tolist() == [0, 1, 2, 3]

    def test_matches_explicit_forward_pass(self):
        w = small_weights(d=4, L=3, seed=9)
        tr = Trajectory("a", [[0.5, 1.0], [2.0, -1.0]])
        x = np.array([0.5, 1.0, 2.0, -1.0, 2.0, -1.0])
        h = np.maximum(x @ w.W1 + w.b1, 0)
        assert np.allclose(ffn_encode(tr, w).vec, h @ w.W2 + w.b2, rtol=0, atol=1e-15)

    def test_empty_trajectory(self):
        with pytest.raises(EmbeddingError):
            ffn_encode(Trajectory("a", np.zeros((0, 2))), small_weights())


class TestSimilarity:
    def test_self(self):
        h = Embedding("a", [0.3, -2.0])
        assert similarity(h, h) == 1.0

    def test_examples(self):
        assert similarity(Embedding("a", [1, 0]), Embedding("b", [0, 1])) == -1.0
        assert similarity(Embedding("a", [0.5, 0.5]), Embedding("b", [0.5, 0.0])) == 0.5

    def test_mismatch(self):
        with pytest.raises(EmbeddingError):
            similarity(Embedding("a", [1, 0]), Embedding("b", [1, 0, 0]))

    def test_symmetric_and_monotone(self, rng):
        for _ in range(50):
            h, g = Embedding("a", rng.normal(size=8)), Embedding("b", rng.normal(size=8))
            assert similarity(h, g) == similarity(g, h)
            far = Embedding("c", g.vec + np.sign(g.vec - h.vec) * 0.5)
            assert similarity(h, far) < similarity(h, g)


class TestStore:
    def test_duplicate_and_dimension(self):
        s = EmbeddingStore(2)
        s.add(Embedding("a", [0, 0]))
        with pytest.raises(EmbeddingError):
            s.add(Embedding("a", [1, 1]))
        with pytest.raises(EmbeddingError):
            s.add(Embedding("b", [1, 1, 1]))

    def test_non_finite_embedding(self):
        with pytest.raises(EmbeddingError):
            Embedding("a", [np.inf, 0])

    def test_round_trip(self, tmp_path, rng):
        s = EmbeddingStore.from_embeddings(3, (Embedding(k, rng.normal(size=3)) for k in "xyz"))
        save_store(s, tmp_path / "e.csv")
        assert load_store(tmp_path / "e.csv") == s
        assert (tmp_path / "e.csv").read_text().splitlines()[0] == "id,v1,v2,v3"

    def test_short_row(self, tmp_path):
        (tmp_path / "e.csv").write_text("id,v1,v2\na,1.0,2.0\nb,1.0\n")
        with pytest.raises(EmbeddingError, match="line 3"):
            load_store(tmp_path / "e.csv")

    def test_header_only(self, tmp_path):
        (tmp_path / "e.csv").write_text("id,v1,v2\n")
        s = load_store(tmp_path / "e.csv")
        assert len(s) == 0 and s.d == 2


class TestEncodeDataset:
    def test_empty(self):
        assert len(encode_dataset(Dataset(()), small_weights())) == 0

    def test_cardinality_and_ids(self):
        ds = generate_synthetic(100, (5, 30), seed=1)
        s = encode_dataset(ds, small_weights(d=8, L=10))
        assert s.ids == ds.ids and s.emb_s >= 0

    def test_workers_do_not_change_result(self):
        ds = generate_synthetic(40, (5, 30), seed=2)
        w = FfnWeights.from_seed(1, d=16, L=20)
        assert encode_dataset(ds, w, workers=1) == encode_dataset(ds, w, workers=3)

    def test_permutation(self):
        ds = generate_synthetic(20, (5, 30), seed=3)
        w = small_weights(d=8, L=10)
        rev = Dataset(tuple(reversed(ds.trajectories)))
        a, b = encode_dataset(ds, w), encode_dataset(rev, w)
        assert all(a[i] == b[i] for i in ds.ids) and b.ids == list(reversed(a.ids))
