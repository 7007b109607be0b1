import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedsim.linalg import (
    RankDeficient,
    affine_project,
    gram_factorize,
    mean_projection,
    min_norm_interpolator,
    project_row_space,
)
from fedsim.oracles import dense_projector


def test_factor_of_identity_rows():
    F = gram_factorize([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(F.lower, np.eye(2))


def test_factor_reconstructs_gram():
    F = gram_factorize([[1, 1, 0], [0, 1, 1]])
    np.testing.assert_allclose(F.lower @ F.lower.T, [[2, 1], [1, 2]], rtol=1e-12)
    assert np.all(np.diag(F.lower) > 0)
    assert np.allclose(F.lower, np.tril(F.lower))


def test_dependent_rows_rejected():
    with pytest.raises(RankDeficient):
        gram_factorize([[1, 0], [2, 0]])


def test_more_rows_than_columns_rejected():
    with pytest.raises(RankDeficient):
        gram_factorize(np.ones((3, 2)) + np.eye(3, 2))


@pytest.mark.parametrize("X, y, expected", [
    ([[1, 0]], [2], [2, 0]),
    ([[1, 0], [0, 1]], [1, 2], [1, 2]),
    ([[1, 1, 0], [0, 1, 1]], [1, 1], [1 / 3, 2 / 3, 1 / 3]),
])
def test_min_norm_interpolator_examples(X, y, expected):
    np.testing.assert_allclose(min_norm_interpolator(X, y), expected, atol=1e-14)


def test_affine_project_examples():
    np.testing.assert_allclose(affine_project([0, 5], [[1, 0]], [3]), [3, 5])
    np.testing.assert_allclose(affine_project(np.zeros(3), [[1, 1, 0], [0, 1, 1]], [1, 1]),
                               min_norm_interpolator([[1, 1, 0], [0, 1, 1]], [1, 1]), atol=1e-15)


def test_affine_project_fixed_point(rng):
    X = rng.standard_normal((4, 9))
    w0 = rng.standard_normal(9)
    np.testing.assert_allclose(affine_project(w0, X, X @ w0), w0, atol=1e-12)


def test_project_row_space_examples():
    np.testing.assert_allclose(project_row_space([[1, 0, 0]], [2, 3, 4]), [2, 0, 0])
    np.testing.assert_allclose(project_row_space([[1, 1, 0]], [1, 0, 0]), [0.5, 0.5, 0])
    X = np.array([[1.0, 2, 3], [0, 1, 1]])
    v = X.T @ np.array([0.3, -2.0])
    np.testing.assert_allclose(project_row_space(X, v), v, atol=1e-13)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 5), extra=st.integers(0, 6), seed=st.integers(0, 2**31))
def test_projection_matches_dense_projector(n, extra, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n + extra))
    v = rng.standard_normal(n + extra)
    P = dense_projector(X)
    p = project_row_space(X, v)
    np.testing.assert_allclose(p, P @ v, atol=1e-9)
    np.testing.assert_allclose(project_row_space(X, p), p, atol=1e-9)
    # residual is orthogonal to every row
    np.testing.assert_allclose(X @ (v - p), 0, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 5), extra=st.integers(0, 6), seed=st.integers(0, 2**31))
def test_affine_project_is_nearest_interpolator(n, extra, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n + extra))
    y, w0 = rng.standard_normal(n), rng.standard_normal(n + extra)
    w = affine_project(w0, X, y)
    np.testing.assert_allclose(X @ w, y, atol=1e-9)
    # w - w0 lies in the row space, so no other interpolator is closer
    np.testing.assert_allclose(dense_projector(X) @ (w - w0), w - w0, atol=1e-9)


def test_mean_projection_is_average(rng):
    Xs = [rng.standard_normal((3, 8)) for _ in range(4)]
    v = rng.standard_normal(8)
    ref = sum(dense_projector(X) @ v for X in Xs) / 4
    np.testing.assert_allclose(mean_projection(Xs, v), ref, atol=1e-12)
