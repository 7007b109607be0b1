"""Brute-force reference solvers for small instances.

These deliberately share no code with the production solvers.
"""
from __future__ import annotations

from itertools import combinations

import numpy as np


def enumerate_projection(w0, A, feas_tol: float = 1e-10):
    """Projection of ``w0`` onto ``{w : A w >= 1}`` by active-set enumeration.

    For every subset S of constraints, project ``w0`` onto the affine set
    ``{A_S w = 1}`` (least squares, so dependent rows are fine) and keep the
    candidates that satisfy every constraint.  The projection is the
    feasible candidate nearest to ``w0``.  Returns ``(w, S)`` or
    ``(None, None)`` if no candidate is feasible.
    """
    w0 = np.asarray(w0, dtype=float)
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    best, best_S, best_dist = None, None, np.inf
    for k in range(n + 1):
        for S in combinations(range(n), k):
            if k == 0:
                w = w0.copy()
            else:
                A_S = A[list(S)]
                rhs = 1.0 - A_S @ w0
                step, *_ = np.linalg.lstsq(A_S, rhs, rcond=None)
                w = w0 + step
                if np.max(np.abs(A_S @ w - 1.0)) > 1e-8:
                    continue  # inconsistent equality system
            if np.min(A @ w) < 1.0 - feas_tol:
                continue
            dist = np.linalg.norm(w - w0)
            if dist < best_dist - 1e-14:
                best, best_S, best_dist = w, S, dist
    return best, best_S


def dense_projector(X) -> np.ndarray:
    """Explicit d x d projector onto the row space of X (via SVD)."""
    X = np.asarray(X, dtype=float)
    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    V = Vt[s > s[0] * 1e-12].T
    return V @ V.T


def random_margin_instance(rng: np.random.Generator, n: int, d: int, start_feasible: bool = False):
    """Random ``(w0, A)`` whose margin set ``{A w >= 1}`` is nonempty.

    Rows are drawn so that a hidden point has margin at least 1 on each.
    With ``start_feasible`` the returned ``w0`` already lies in the set.
    """
    w_hidden = rng.standard_normal(d)
    A = rng.standard_normal((n, d))
    m = A @ w_hidden
    A[m < 0] *= -1
    m = np.abs(m)
    A /= np.maximum(m, 1e-3)[:, None] / rng.uniform(1.0, 2.0, size=n)[:, None]
    if start_feasible:
        return w_hidden * rng.uniform(1.0, 1.5), A
    return rng.standard_normal(d) * rng.uniform(0.1, 2.0), A
