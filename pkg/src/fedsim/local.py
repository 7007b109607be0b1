"""Local objectives and the inner gradient-descent loop run on each node."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedsim.datagen import NodeDataset

SQUARED = "squared"
EXP_REG = "exp_reg"
EXP_CLAMP = 700.0


class Diverged(RuntimeError):
    def __init__(self, message, step=None, round_index=None, node=None):
        super().__init__(message)
        self.step = step
        self.round_index = round_index
        self.node = node


@dataclass(frozen=True)
class LossSpec:
    """Local objective.

    ``squared``: ``c ||y - X w||^2 / 2`` with ``c = 1/N`` for
    ``reduction="mean"`` and ``c = 1`` for ``reduction="sum"``.
    ``exp_reg``: ``sum_j exp(-y_j x_j^T w) + lam/2 ||w - anchor||^2``.
    """

    kind: str = SQUARED
    lam: float = 0.0
    anchor: np.ndarray | None = None
    reduction: str = "mean"

    def __post_init__(self):
        if self.kind not in (SQUARED, EXP_REG):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == EXP_REG and not self.lam > 0:
            raise ValueError("exp_reg needs lam > 0")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"unknown reduction {self.reduction!r}")

    def anchored_at(self, w0) -> "LossSpec":
        return LossSpec(self.kind, self.lam, np.asarray(w0, dtype=np.float64), self.reduction)


@dataclass(frozen=True)
class LocalUpdateConfig:
    steps: int = 200
    eta: float = 1e-4
    stop_grad_norm: float = 1e-12
    divergence_factor: float = 10.0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if not self.eta > 0:
            raise ValueError("eta must be positive")


@dataclass
class LocalResult:
    w: np.ndarray
    steps: int
    grad_norm: float
    stop_reason: str  # "grad_norm" or "max_steps"
    clamped: bool
    monotone: bool
    loss_initial: float
    loss_final: float


def _evaluate(spec: LossSpec, X, y, w, folded=None):
    """Return ``(loss, grad, clamped)``."""
    if spec.kind == SQUARED:
        r = X @ w - y
        c = 1.0 / X.shape[0] if spec.reduction == "mean" else 1.0
        return 0.5 * c * float(r @ r), c * (X.T @ r), False
    A = y[:, None] * X if folded is None else folded
    neg = -(A @ w)
    clamped = bool(np.any(neg > EXP_CLAMP))
    e = np.exp(np.minimum(neg, EXP_CLAMP))
    anchor = np.zeros_like(w) if spec.anchor is None else spec.anchor
    diff = w - anchor
    value = float(np.sum(e)) + 0.5 * spec.lam * float(diff @ diff)
    return value, spec.lam * diff - A.T @ e, clamped


def loss_value(spec: LossSpec, node: NodeDataset, w) -> float:
    return _evaluate(spec, node.X, node.y, np.asarray(w, dtype=np.float64))[0]


def loss_grad(spec: LossSpec, node: NodeDataset, w) -> np.ndarray:
    return _evaluate(spec, node.X, node.y, np.asarray(w, dtype=np.float64))[1]


def local_update(w0, node: NodeDataset, spec: LossSpec, cfg: LocalUpdateConfig) -> LocalResult:
    """Run at most ``cfg.steps`` gradient steps from ``w0``.

    Stops early once the gradient norm reaches ``cfg.stop_grad_norm``.
    Raises Diverged when the loss exceeds ``divergence_factor`` times its
    starting value.
    """
    w = np.array(w0, dtype=np.float64)
    if w.shape != (node.X.shape[1],):
        raise ValueError(f"w0 has shape {w.shape}, node has {node.X.shape[1]} features")
    X, y = node.X, node.y
    folded = y[:, None] * X if spec.kind == EXP_REG else None
    f, g, clamped = _evaluate(spec, X, y, w, folded)
    f0 = prev = f
    monotone = True
    any_clamp = clamped
    gnorm = float(np.linalg.norm(g))
    for step in range(cfg.steps):
        if gnorm <= cfg.stop_grad_norm:
            return LocalResult(w, step, gnorm, "grad_norm", any_clamp, monotone, f0, f)
        w -= cfg.eta * g
        f, g, clamped = _evaluate(spec, X, y, w, folded)
        any_clamp |= clamped
        gnorm = float(np.linalg.norm(g))
        if not np.isfinite(f) or f > cfg.divergence_factor * f0 and f0 > 0:
            raise Diverged(f"loss rose from {f0:.6g} to {f:.6g} at step {step + 1}", step=step + 1)
        if f > prev:
            monotone = False
        prev = f
    reason = "grad_norm" if gnorm <= cfg.stop_grad_norm else "max_steps"
    return LocalResult(w, cfg.steps, gnorm, reason, any_clamp, monotone, f0, f)
