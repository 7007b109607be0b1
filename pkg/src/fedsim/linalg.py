"""Gram-matrix primitives for wide (N << d) sample matrices.

Every ``(X X^T)^{-1} b`` is a Cholesky solve on the N x N Gram matrix; the
d x d projector ``X^T (X X^T)^{-1} X`` is never formed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

RANK_RTOL = 1e-10


class RankDeficient(ValueError):
    """Raised when a sample matrix does not have full row rank."""


def as_sample_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError(f"sample matrix must be 2-D and non-empty, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("sample matrix has non-finite entries")
    return X


@dataclass(frozen=True)
class GramFactor:
    """Lower Cholesky factor of ``X X^T``."""

    lower: np.ndarray
    min_diag: float

    @property
    def size(self) -> int:
        return self.lower.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        return cho_solve((self.lower, True), b, check_finite=False)

    def gram(self) -> np.ndarray:
        return self.lower @ self.lower.T


def gram_factorize(X, rtol: float = RANK_RTOL) -> GramFactor:
    """Factor ``X X^T = L L^T``.

    Raises RankDeficient when a squared pivot falls below ``rtol`` times the
    largest Gram diagonal (dependent or duplicated samples), or when X is
    taller than it is wide.
    """
    X = as_sample_matrix(X)
    n, d = X.shape
    if n > d:
        raise RankDeficient(f"{n} samples in {d} dimensions cannot have full row rank")
    G = X @ X.T
    scale = float(np.max(np.diag(G)))
    if scale <= 0.0:
        raise RankDeficient("all samples are zero")
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise RankDeficient("Gram matrix is not positive definite") from exc
    pivots = np.diag(L) ** 2
    if np.min(pivots) < rtol * scale:
        j = int(np.argmin(pivots))
        raise RankDeficient(
            f"pivot {j} is {pivots[j]:.3e}, below {rtol:g} x max Gram diagonal {scale:.3e}"
        )
    return GramFactor(lower=L, min_diag=float(np.min(np.diag(L))))


def _factor(X, factor: GramFactor | None) -> GramFactor:
    return gram_factorize(X) if factor is None else factor


def affine_project(w0, X, y, factor: GramFactor | None = None) -> np.ndarray:
    """Euclidean projection of ``w0`` onto ``{w : X w = y}``.

    Computed as ``w0 + X^T (X X^T)^{-1} (y - X w0)``.
    """
    X = as_sample_matrix(X)
    w0 = np.asarray(w0, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if w0.shape != (X.shape[1],) or y.shape != (X.shape[0],):
        raise ValueError(f"shape mismatch: X {X.shape}, w0 {w0.shape}, y {y.shape}")
    F = _factor(X, factor)
    return w0 + X.T @ F.solve(y - X @ w0)


def min_norm_interpolator(X, y, factor: GramFactor | None = None) -> np.ndarray:
    """Smallest-norm solution of ``X w = y``."""
    X = as_sample_matrix(X)
    return affine_project(np.zeros(X.shape[1]), X, y, factor)


def project_row_space(X, v, factor: GramFactor | None = None) -> np.ndarray:
    """Orthogonal projection of ``v`` onto the row space of ``X``."""
    X = as_sample_matrix(X)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (X.shape[1],):
        raise ValueError(f"vector of length {v.shape} does not match {X.shape[1]} columns")
    F = _factor(X, factor)
    return X.T @ F.solve(X @ v)


def mean_projection(Xs, v, factors=None) -> np.ndarray:
    """Apply ``(1/M) sum_i P_i`` to ``v`` where ``P_i`` projects onto row(X_i)."""
    if factors is None:
        factors = [None] * len(Xs)
    acc = np.zeros_like(np.asarray(v, dtype=np.float64))
    for X, F in zip(Xs, factors):
        acc += project_row_space(X, v, F)
    return acc / len(Xs)
