import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mcvlr.embeddings import Embedding, EmbeddingMatrix, dot_scores, l2_normalize, mean_pool
from mcvlr.errors import DataError, DimensionMismatchError, NumericError

finite_vec = st.lists(
    st.floats(min_value=-1e6, max_value=1e6, allow_nan=False), min_size=1, max_size=16
)


def test_dot_scores_orthonormal_basis():
    scores = dot_scores(Embedding([1.0, 0.0]), EmbeddingMatrix([[1.0, 0.0], [0.0, 1.0]]))
    assert np.allclose(scores, [1.0, 0.0])


def test_dot_scores_hand_computed():
    q = Embedding(np.array([1.0, 1.0]) / math.sqrt(2))
    m = EmbeddingMatrix([[1, 0], [0, 1], [-1, 0], [0.6, 0.8]])
    expected = [0.7071, 0.7071, -0.7071, 0.9899]
    assert np.allclose(dot_scores(q, m), expected, atol=5e-5)


def test_dot_scores_zero_query():
    m = EmbeddingMatrix(np.random.default_rng(0).normal(size=(5, 3)))
    assert np.all(dot_scores(Embedding([0.0, 0.0, 0.0]), m) == 0.0)


def test_dot_scores_dim_mismatch():
    with pytest.raises(DimensionMismatchError):
        dot_scores(Embedding([1.0, 2.0, 3.0]), EmbeddingMatrix([[1.0, 2.0]]))


@given(finite_vec, st.floats(min_value=0.01, max_value=100))
def test_dot_scores_bilinear_and_argmax_invariant(vec, c):
    m = EmbeddingMatrix(np.random.default_rng(1).normal(size=(6, len(vec))))
    q = Embedding(vec)
    base = dot_scores(q, m)
    scaled = dot_scores(Embedding(np.asarray(vec) * c), m)
    assert np.allclose(scaled, base * c, atol=1e-6 * max(1.0, c * np.abs(base).max()))
    assert np.argmax(scaled) == np.argmax(base)


def test_l2_normalize_345():
    assert np.allclose(l2_normalize(Embedding([3.0, 4.0])).values, [0.6, 0.8])


def test_l2_normalize_idempotent():
    e = l2_normalize(Embedding([2.0, -1.0, 0.5]))
    again = l2_normalize(e)
    assert np.allclose(e.values, again.values, atol=1e-7)


def test_l2_normalize_zero_vector_rejected():
    with pytest.raises(NumericError):
        l2_normalize(Embedding([0.0, 0.0]))


def test_mean_pool_two_points():
    pooled = mean_pool([Embedding([1.0, 0.0]), Embedding([0.0, 1.0])])
    assert np.allclose(pooled.values, [0.5, 0.5])


def test_mean_pool_single_identity():
    e = Embedding([1.5, -2.0])
    assert np.allclose(mean_pool([e]).values, e.values)


def test_mean_pool_mask_excludes():
    pooled = mean_pool([Embedding([1.0, 0.0]), Embedding([9.0, 9.0])], mask=[True, False])
    assert np.allclose(pooled.values, [1.0, 0.0])


def test_mean_pool_all_masked_rejected():
    with pytest.raises(DataError):
        mean_pool([Embedding([1.0])], mask=[False])


@given(finite_vec, st.integers(min_value=1, max_value=5))
def test_mean_pool_identical_vectors_exact(vec, n):
    e = Embedding(vec)
    assert np.array_equal(mean_pool([e] * n).values, e.values)


def test_embedding_rejects_nan():
    with pytest.raises(NumericError):
        Embedding([1.0, float("nan")])


def test_matrix_duplicate_keys_rejected():
    with pytest.raises(DataError):
        EmbeddingMatrix([[1.0], [2.0]], row_keys=("a", "a"))


def test_matrix_roundtrip(tmp_path):
    m = EmbeddingMatrix(np.random.default_rng(3).normal(size=(4, 3)), row_keys=("a", "b", "c", "d"))
    m.save(tmp_path / "mat")
    back = EmbeddingMatrix.load(tmp_path / "mat")
    assert np.array_equal(back.data, m.data)
    assert back.row_keys == m.row_keys
