import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from liftedstruct.core import EmbeddingBatch, ValidationError, pair_sets, pairwise_sq_distances

from oracles import naive_sq_distances


def test_two_points_on_a_line():
    D = pairwise_sq_distances(EmbeddingBatch([[0.0], [3.0]], [0, 1]))
    np.testing.assert_array_equal(D.sq, [[0, 9], [9, 0]])
    np.testing.assert_array_equal(D.dist, [[0, 3], [3, 0]])


def test_identical_rows_give_zero_matrix():
    D = pairwise_sq_distances(EmbeddingBatch([[1.5, -2.0], [1.5, -2.0]], [0, 0]))
    np.testing.assert_array_equal(D.sq, np.zeros((2, 2)))


def test_matches_naive_loop():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(8, 4))
    D = pairwise_sq_distances(X)
    np.testing.assert_allclose(D.sq, naive_sq_distances(X), rtol=0, atol=1e-10)


def test_structure():
    X = np.random.default_rng(0).normal(size=(20, 5)) * 100
    D = pairwise_sq_distances(X)
    assert np.array_equal(D.sq, D.sq.T)
    assert np.all(np.diag(D.sq) == 0)
    assert np.all(D.sq >= 0)
    np.testing.assert_array_equal(D.dist, np.sqrt(np.maximum(D.sq, 0)))


def test_near_duplicates_never_go_negative():
    X = np.full((5, 3), 1e8) + np.arange(5)[:, None] * 1e-9
    D = pairwise_sq_distances(X)
    assert np.all(D.sq >= 0)
    assert np.all(np.isfinite(D.dist))


def test_non_finite_row_is_named():
    X = np.zeros((4, 2))
    X[2, 1] = np.nan
    with pytest.raises(ValidationError, match="row 2"):
        pairwise_sq_distances(X)
    with pytest.raises(ValidationError, match="row 2"):
        EmbeddingBatch(X, [0, 0, 1, 1])


def test_batch_validation():
    with pytest.raises(ValidationError):
        EmbeddingBatch(np.zeros((3, 2)), [0, 1])
    with pytest.raises(ValidationError):
        EmbeddingBatch(np.zeros((0, 2)), [])
    with pytest.raises(ValidationError):
        EmbeddingBatch(np.zeros((2, 2)), [0, -1])


def test_normalize_flag():
    X = np.array([[3.0, 4.0], [0.0, 2.0]])
    D = pairwise_sq_distances(X, normalize=True)
    u = X / np.linalg.norm(X, axis=1, keepdims=True)
    assert D.sq[0, 1] == pytest.approx(np.sum((u[0] - u[1]) ** 2))


def test_pair_sets_examples():
    P, N = pair_sets([0, 0, 1, 1])
    assert set(P) == {(0, 1), (2, 3)}
    assert set(N) == {(0, 2), (0, 3), (1, 2), (1, 3)}
    P, N = pair_sets([0, 1, 2, 3])
    assert P == []
    P, N = pair_sets([5, 5, 5])
    assert N == [] and len(P) == 3
    with pytest.raises(ValidationError):
        pair_sets([])


@given(st.lists(st.integers(0, 4), min_size=1, max_size=30))
def test_pair_sets_cover_all_pairs(labels):
    P, N = pair_sets(labels)
    m = len(labels)
    assert len(P) + len(N) == m * (m - 1) // 2
    assert not set(P) & set(N)
    assert all(labels[i] == labels[j] and i < j for i, j in P)
    assert all(labels[i] != labels[j] and i < j for i, j in N)


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=50)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 6)), elements=finite), st.randoms())
def test_permutation_equivariance(X, rnd):
    perm = np.array(rnd.sample(range(X.shape[0]), X.shape[0]))
    D = pairwise_sq_distances(X).sq
    Dp = pairwise_sq_distances(X[perm]).sq
    np.testing.assert_allclose(Dp, D[np.ix_(perm, perm)], atol=1e-6 * max(1.0, np.abs(X).max() ** 2))


@settings(max_examples=50)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 6)), elements=st.floats(-10, 10)),
       arrays(np.float64, 6, elements=st.floats(-10, 10)))
def test_translation_invariance(X, shift):
    D = pairwise_sq_distances(X).sq
    Ds = pairwise_sq_distances(X + shift[: X.shape[1]]).sq
    np.testing.assert_allclose(Ds, D, rtol=0, atol=1e-9)
