"""Multi-round distributed schemes and their centralized counterparts.

Local solves within a round may run on a thread pool; aggregation always
sums node models in ascending node order, so results do not depend on the
number of workers.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from fedsim.datagen import REGRESSION, FederatedDataset, NodeDataset
from fedsim.linalg import gram_factorize, min_norm_interpolator
from fedsim.local import (
    EXP_REG,
    SQUARED,
    Diverged,
    LocalUpdateConfig,
    LossSpec,
    local_update,
)
from fedsim.projection import DEFAULT_TOL, MarginSet, margin_project

log = logging.getLogger(__name__)


class ProjectionFailed(RuntimeError):
    def __init__(self, message, status, round_index, node):
        super().__init__(message)
        self.status = status
        self.round_index = round_index
        self.node = node


def worker_count(threads: int | None = None) -> int:
    """Worker threads for per-node work: argument, then FEDSIM_THREADS, then CPU count."""
    if threads is None:
        env = os.environ.get("FEDSIM_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


@dataclass(frozen=True)
class AlphaSchedule:
    """Anchoring weights; ``alpha(k)`` is the weight used to produce round ``k``."""

    name: str
    alpha: Callable[[int], float]
    # whether lim alpha = 1, sum(1 - alpha) = inf and sum |alpha' - alpha| < inf
    converges_to_projection: bool

    def __call__(self, k: int) -> float:
        return self.alpha(k)


HARMONIC = AlphaSchedule("harmonic", lambda k: 1.0 - 1.0 / (k + 1), True)
NO_ANCHOR = AlphaSchedule("constant-1", lambda k: 1.0, False)
SCHEDULES = {s.name: s for s in (HARMONIC, NO_ANCHOR)}


@dataclass(frozen=True)
class ProtocolConfig:
    rounds: int = 200
    local: LocalUpdateConfig = field(default_factory=LocalUpdateConfig)
    lam: float = 1e-4
    aggregation: AlphaSchedule | None = None  # None: vanilla mean
    init: np.ndarray | None = None
    record_every: int = 1
    squared_reduction: str = "mean"
    threads: int | None = None

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if self.record_every < 1:
            raise ValueError("record_every must be at least 1")
        sched = self.aggregation
        if sched is not None and sched.name in SCHEDULES and not sched.converges_to_projection:
            log.warning("schedule %r does not steer the iterates to the projection of init", sched.name)

    def fingerprint(self) -> str:
        payload = {
            "rounds": self.rounds,
            "local": asdict(self.local),
            "lam": self.lam,
            "aggregation": None if self.aggregation is None else self.aggregation.name,
            "init": None if self.init is None else hashlib.sha256(
                np.ascontiguousarray(self.init, dtype="<f8").tobytes()).hexdigest(),
            "record_every": self.record_every,
            "squared_reduction": self.squared_reduction,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Trajectory:
    globals: list[np.ndarray]
    round_indices: list[int]
    diagnostics: list[list[dict]]
    config_fingerprint: str = ""

    @property
    def final(self) -> np.ndarray:
        return self.globals[-1]

    def at(self, k: int) -> np.ndarray:
        return self.globals[self.round_indices.index(k)]

    def as_array(self) -> np.ndarray:
        return np.vstack(self.globals)


def _recorded(k: int, K: int, every: int) -> bool:
    return k % every == 0 or k == K


def _init(init, d) -> np.ndarray:
    if init is None:
        return np.zeros(d)
    init = np.asarray(init, dtype=np.float64)
    if init.shape != (d,):
        raise ValueError(f"init has shape {init.shape}, expected ({d},)")
    return init.copy()


def _ordered_mean(vectors) -> np.ndarray:
    acc = np.zeros_like(vectors[0])
    for v in vectors:
        acc += v
    return acc / len(vectors)


def _aggregate(local_models, anchor, schedule, k):
    avg = _ordered_mean(local_models)
    if schedule is None:
        return avg
    a = schedule(k)
    return (1.0 - a) * anchor + a * avg


def _loss_for(fed: FederatedDataset, pcfg: ProtocolConfig) -> LossSpec:
    if fed.task == REGRESSION:
        return LossSpec(SQUARED, reduction=pcfg.squared_reduction)
    return LossSpec(EXP_REG, lam=pcfg.lam)


def _run_local(fed: FederatedDataset, pcfg: ProtocolConfig, schedule) -> Trajectory:
    K = pcfg.rounds
    w0 = _init(pcfg.init, fed.dim)
    anchor = w0.copy()
    base = _loss_for(fed, pcfg)
    traj = Trajectory([w0.copy()], [0], [[]], pcfg.fingerprint())

    def solve(k, i, node, w):
        spec = base.anchored_at(w) if base.kind == EXP_REG else base
        try:
            return local_update(w, node, spec, pcfg.local)
        except Diverged as exc:
            exc.round_index, exc.node = k, i
            raise

    workers = min(worker_count(pcfg.threads), fed.M)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        w = w0
        for k in range(K):
            futures = [pool.submit(solve, k, i, node, w) for i, node in enumerate(fed.nodes)]
            results = [f.result() for f in futures]
            w = _aggregate([r.w for r in results], anchor, schedule, k + 1)
            if _recorded(k + 1, K, pcfg.record_every):
                traj.globals.append(w.copy())
                traj.round_indices.append(k + 1)
                traj.diagnostics.append([
                    {"steps": r.steps, "grad_norm": r.grad_norm, "stop_reason": r.stop_reason,
                     "clamped": r.clamped, "monotone": r.monotone}
                    for r in results
                ])
    return traj


def local_gd(fed: FederatedDataset, pcfg: ProtocolConfig) -> Trajectory:
    """Local-GD: broadcast, ``L`` local steps per node, mean aggregation.

    If ``pcfg.aggregation`` is set the anchored rule is used instead, which
    is what ``modified_local_gd`` does by default.
    """
    return _run_local(fed, pcfg, pcfg.aggregation)


def modified_local_gd(fed: FederatedDataset, pcfg: ProtocolConfig) -> Trajectory:
    """Local-GD whose aggregate is pulled toward the initial model.

    Round ``k`` is ``(1 - alpha_k) w_init + alpha_k * mean(local models)``
    with the harmonic schedule ``alpha_k = 1 - 1/(k+1)`` unless another is
    configured.
    """
    return _run_local(fed, pcfg, pcfg.aggregation or HARMONIC)


def ppm(sets, init, K: int, anchored: AlphaSchedule | None = None,
        tol: float = DEFAULT_TOL, threads: int | None = None) -> Trajectory:
    """Parallel projection method over margin sets.

    Each round projects the current point onto every set and averages the
    projections (optionally anchored to ``init``).  Raises ProjectionFailed
    if a projection does not converge.
    """
    sets = list(sets)
    if not sets:
        raise ValueError("need at least one margin set")
    if K < 1:
        raise ValueError("K must be at least 1")
    d = sets[0].dim
    w0 = _init(init, d)
    traj = Trajectory([w0.copy()], [0], [[]])

    def project(k, i, ms, w):
        res = margin_project(w, ms, tol=tol)
        if not res.converged:
            raise ProjectionFailed(
                f"projection onto set {i} ended with status {res.status} in round {k}",
                res.status, k, i)
        return res

    workers = min(worker_count(threads), len(sets))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        w = w0
        for k in range(K):
            futures = [pool.submit(project, k, i, ms, w) for i, ms in enumerate(sets)]
            results = [f.result() for f in futures]
            w = _aggregate([r.w for r in results], w0, anchored, k + 1)
            traj.globals.append(w.copy())
            traj.round_indices.append(k + 1)
            traj.diagnostics.append([
                {"iterations": r.iterations, "active": len(r.active_set),
                 "kkt_residual": r.kkt_residual}
                for r in results
            ])
    return traj


class RegressionOperators:
    """Averaged projector and offsets of the regression round map.

    ``apply(w) = w - p_bar(w) + y_bar`` is one Local-GD round with exactly
    solved local problems.  ``q_bar`` and ``z_bar`` split ``y_bar`` into the
    ground-truth and noise parts when ground truth is known.
    """

    def __init__(self, fed: FederatedDataset):
        if fed.task != REGRESSION:
            raise ValueError("closed form is defined for regression data")
        self.fed = fed
        self.factors = [gram_factorize(n.X) for n in fed.nodes]
        self.y_bar = _ordered_mean([n.X.T @ F.solve(n.y) for n, F in zip(fed.nodes, self.factors)])

    def p_bar(self, v) -> np.ndarray:
        return _ordered_mean([n.X.T @ F.solve(n.X @ v) for n, F in zip(self.fed.nodes, self.factors)])

    @property
    def q_bar(self) -> np.ndarray:
        if any(n.w_star is None for n in self.fed.nodes):
            raise ValueError("ground truth is not available")
        return _ordered_mean([n.X.T @ F.solve(n.X @ n.w_star) for n, F in zip(self.fed.nodes, self.factors)])

    @property
    def z_bar(self) -> np.ndarray:
        return self.y_bar - self.q_bar

    def apply(self, w) -> np.ndarray:
        return w - self.p_bar(w) + self.y_bar


def closed_form_regression(fed: FederatedDataset, K: int, init=None, record_every: int = 1) -> Trajectory:
    """Global models of Local-GD with exact local solves, by direct recursion."""
    ops = RegressionOperators(fed)
    w = _init(init, fed.dim)
    traj = Trajectory([w.copy()], [0], [[]])
    for k in range(K):
        w = ops.apply(w)
        if _recorded(k + 1, K, record_every):
            traj.globals.append(w.copy())
            traj.round_indices.append(k + 1)
            traj.diagnostics.append([])
    return traj


def centralized_min_norm(fed: FederatedDataset) -> np.ndarray:
    stacked = fed.stacked()
    return min_norm_interpolator(stacked.X, stacked.y)


def centralized_gd(fed: FederatedDataset, spec: LossSpec, cfg: LocalUpdateConfig, init=None) -> np.ndarray:
    """Gradient descent on the pooled data, started from ``init`` (default 0)."""
    stacked: NodeDataset = fed.stacked()
    w0 = _init(init, fed.dim)
    if spec.kind == EXP_REG and spec.anchor is None:
        spec = spec.anchored_at(np.zeros(fed.dim))
    res = local_update(w0, stacked, spec, cfg)
    log.debug("centralized GD stopped after %d steps (%s)", res.steps, res.stop_reason)
    return res.w
