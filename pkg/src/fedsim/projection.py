"""Euclidean projection onto margin polyhedra ``{w : A w >= 1}``.

The solver is cyclic dual coordinate ascent on the least-distance dual,

    max_{beta >= 0}  sum(beta) - beta^T A w0 - 0.5 ||A^T beta||^2,

run entirely in the N x N Gram space so each coordinate update costs O(N)
instead of O(d).  The primal point is recovered as ``w = w0 + A^T beta``.
After convergence the active set is polished with one exact Gram solve when
that solve yields a valid KKT point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numba
import numpy as np
from scipy.linalg import cho_solve
from scipy.optimize import nnls

from fedsim.linalg import as_sample_matrix

DEFAULT_TOL = 1e-9
DUAL_BLOWUP = 1e8

CONVERGED = "converged"
INFEASIBLE = "infeasible_suspected"
MAX_ITERS = "max_iters"


class MarginSet:
    """Polyhedron ``{w : a_j^T w >= 1 for every row a_j of A}``.

    Rows are label-folded samples ``y_j * x_j``.
    """

    def __init__(self, A):
        self.A = as_sample_matrix(A)
        self.A.setflags(write=False)

    @classmethod
    def from_samples(cls, X, y) -> "MarginSet":
        X = as_sample_matrix(X)
        y = np.asarray(y, dtype=np.float64)
        return cls(y[:, None] * X)

    @classmethod
    def stack(cls, sets) -> "MarginSet":
        return cls(np.vstack([s.A for s in sets]))

    @property
    def n_constraints(self) -> int:
        return self.A.shape[0]

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @cached_property
    def gram(self) -> np.ndarray:
        G = self.A @ self.A.T
        G.setflags(write=False)
        return G

    def margins(self, w) -> np.ndarray:
        return self.A @ np.asarray(w, dtype=np.float64)

    def __repr__(self) -> str:
        return f"MarginSet(n_constraints={self.n_constraints}, dim={self.dim})"


@dataclass
class ProjectionResult:
    w: np.ndarray
    beta: np.ndarray
    kkt_residual: float
    iterations: int
    active_set: list[int]
    status: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def min_margin(w, margin_set: MarginSet) -> float:
    return float(np.min(margin_set.margins(w)))


def default_max_iters(n_constraints: int, tol: float) -> int:
    return int(math.ceil(200 * n_constraints * math.log(1.0 / tol)))


@numba.njit(cache=True)
def _dual_sweeps(G, m, beta, tol, max_sweeps, blowup):
    # m holds A w0 + G beta and is updated in place with beta.
    n = beta.shape[0]
    last_check_viol = np.inf
    for sweep in range(1, max_sweeps + 1):
        for j in range(n):
            gjj = G[j, j]
            delta = (1.0 - m[j]) / gjj
            if delta < -beta[j]:
                delta = -beta[j]
            if delta != 0.0:
                beta[j] += delta
                for i in range(n):
                    m[i] += delta * G[j, i]
        viol = 0.0
        slack = 0.0
        bnorm2 = 0.0
        bmax = 0.0
        for j in range(n):
            if beta[j] > bmax:
                bmax = beta[j]
            v = 1.0 - m[j]
            if v > viol:
                viol = v
            s = abs(beta[j] * (m[j] - 1.0))
            if s > slack:
                slack = s
            bnorm2 += beta[j] * beta[j]
        if viol <= tol and slack <= tol * (1.0 + bmax):
            return sweep, 0
        if bnorm2 > blowup * blowup:
            if viol >= last_check_viol:
                return sweep, 1
            last_check_viol = viol
    return max_sweeps, 2


def _kkt(A, w0, w, beta):
    margins = A @ w
    primal = max(0.0, float(np.max(1.0 - margins)))
    dual = max(0.0, float(np.max(-beta))) if beta.size else 0.0
    slack = 0.0
    if beta.size:
        # scaled so that huge duals on near-degenerate sets can still certify
        slack = float(np.max(np.abs(beta * (margins - 1.0)))) / (1.0 + float(np.max(np.abs(beta))))
    station = float(np.linalg.norm(w - w0 - A.T @ beta)) / (1.0 + float(np.linalg.norm(w)))
    return {"primal": primal, "dual": dual, "slackness": slack, "stationarity": station}


def _polish(margin_set: MarginSet, w0, beta, a_w0, tol):
    """Exact solve on the current active set; None unless it is a KKT point."""
    active = np.flatnonzero(beta > 0.0)
    if active.size == 0:
        return None
    G_s = margin_set.gram[np.ix_(active, active)]
    rhs = 1.0 - a_w0[active]
    gamma = None
    try:
        L = np.linalg.cholesky(G_s)
        if np.min(np.diag(L)) ** 2 >= 1e-12 * np.max(np.diag(G_s)):
            gamma = cho_solve((L, True), rhs, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    if gamma is None or np.any(gamma < 0.0):
        # singular active Gram (more active rows than dimensions) or a
        # wrong-signed solution: fall back to the non-negative solve
        gamma, _ = nnls(G_s, rhs)
    new_beta = np.zeros_like(beta)
    new_beta[active] = gamma
    w = w0 + margin_set.A.T @ new_beta
    kkt = _kkt(margin_set.A, w0, w, new_beta)
    if max(kkt.values()) > tol:
        return None
    return w, new_beta, kkt


def margin_project(
    w0,
    margin_set: MarginSet,
    tol: float = DEFAULT_TOL,
    max_iters: int | None = None,
    polish: bool = True,
) -> ProjectionResult:
    """Project ``w0`` onto ``margin_set``.

    ``max_iters`` counts full sweeps over the constraints.  Sweeps run in
    geometrically growing chunks; after each chunk the current active set is
    solved exactly and accepted if it is a KKT point.  A converged result
    has been re-validated from the recovered primal point: margins at least
    ``1 - tol``, dual variables non-negative and complementary slackness
    (divided by ``1 + max(beta)``) at most ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    w0 = np.asarray(w0, dtype=np.float64)
    A = margin_set.A
    n = margin_set.n_constraints
    if w0.shape != (margin_set.dim,):
        raise ValueError(f"w0 has shape {w0.shape}, expected ({margin_set.dim},)")
    if max_iters is None:
        max_iters = default_max_iters(n, tol)

    a_w0 = A @ w0
    if np.min(a_w0) >= 1.0:
        return ProjectionResult(w0.copy(), np.zeros(n), 0.0, 0, [], CONVERGED)

    zero_rows = np.flatnonzero(np.diag(margin_set.gram) == 0.0)
    if zero_rows.size:
        return ProjectionResult(
            w0.copy(), np.zeros(n), math.inf, 0, [], INFEASIBLE,
            {"reason": "zero constraint rows", "rows": zero_rows.tolist()},
        )

    G = np.ascontiguousarray(margin_set.gram)
    beta = np.zeros(n)
    sweeps_total = 0
    chunk = 16
    status = MAX_ITERS
    polished = False
    w = kkt = None
    while sweeps_total < max_iters:
        # margins are refreshed exactly at each chunk to stop drift
        m = a_w0 + G @ beta
        budget = min(chunk, max_iters - sweeps_total)
        sweeps, code = _dual_sweeps(G, m, beta, tol, budget, DUAL_BLOWUP)
        sweeps_total += sweeps
        if code == 1:
            status = INFEASIBLE
            break
        if code == 0:
            w = w0 + A.T @ beta
            kkt = _kkt(A, w0, w, beta)
            if max(kkt.values()) <= tol:
                status = CONVERGED
                break
        if polish:
            out = _polish(margin_set, w0, beta, a_w0, tol)
            if out is not None:
                w, beta, kkt = out
                status = CONVERGED
                polished = True
                break
        chunk = min(2 * chunk, 4096)

    if status == CONVERGED and polish and not polished:
        out = _polish(margin_set, w0, beta, a_w0, tol)
        if out is not None:
            w, beta, kkt = out
            polished = True
    if status != CONVERGED:
        w = w0 + A.T @ beta
        kkt = _kkt(A, w0, w, beta)
    diagnostics = dict(kkt, polished=polished, dual_norm=float(np.linalg.norm(beta)))
    return ProjectionResult(
        w=w,
        beta=beta,
        kkt_residual=max(kkt["primal"], kkt["dual"], kkt["slackness"], kkt["stationarity"]),
        iterations=sweeps_total,
        active_set=np.flatnonzero(beta > 0.0).tolist(),
        status=status,
        diagnostics=diagnostics,
    )


def hard_margin_svm(sets, tol: float = DEFAULT_TOL, max_iters: int | None = None) -> ProjectionResult:
    """Min-norm point of the intersection of ``sets`` (homogeneous hard-margin SVM)."""
    sets = list(sets)
    if not sets:
        raise ValueError("need at least one margin set")
    stacked = MarginSet.stack(sets) if len(sets) > 1 else sets[0]
    return margin_project(np.zeros(stacked.dim), stacked, tol=tol, max_iters=max_iters)
