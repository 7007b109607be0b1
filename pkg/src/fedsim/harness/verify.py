"""Fast invariant checks on small instances, one PASS/FAIL line each."""
from __future__ import annotations

import tempfile
import time
from pathlib import Path

import numpy as np

from fedsim import io
from fedsim.datagen import GenConfig, check_separable, gen_classification, gen_regression
from fedsim.harness.report import Table, emit_csv, load_csv
from fedsim.linalg import affine_project, min_norm_interpolator
from fedsim.local import EXP_REG, SQUARED, LocalUpdateConfig, LossSpec, loss_grad, loss_value
from fedsim.metrics import scaled_diff
from fedsim.oracles import enumerate_projection, random_margin_instance
from fedsim.projection import MarginSet, hard_margin_svm, margin_project, min_margin
from fedsim.protocols import ProtocolConfig, closed_form_regression, local_gd, ppm


def _closed_form():
    fed = gen_regression(GenConfig(M=3, N=5, d=40, seed=3))
    pcfg = ProtocolConfig(rounds=10, local=LocalUpdateConfig(steps=3000, eta=0.01), squared_reduction="sum")
    a, b = local_gd(fed, pcfg), closed_form_regression(fed, 10)
    worst = max(scaled_diff(x, y) for x, y in zip(a.globals, b.globals))
    return worst <= 1e-9, f"max scaled diff {worst:.2e}"


def _interpolation():
    rng = np.random.default_rng(0)
    X, y, w0 = rng.standard_normal((6, 20)), rng.standard_normal(6), rng.standard_normal(20)
    w = affine_project(w0, X, y)
    res = np.abs(X @ w - y).max()
    ortho = abs(float((w - w0) @ (min_norm_interpolator(X, y) - w)))
    return res <= 1e-10 and ortho <= 1e-9, f"residual {res:.1e}"


def _oracle():
    rng = np.random.default_rng(1)
    worst = 0.0
    for t in range(40):
        w0, A = random_margin_instance(rng, int(rng.integers(1, 8)), int(rng.integers(1, 6)),
                                       start_feasible=t % 5 == 0)
        ref, _ = enumerate_projection(w0, A)
        worst = max(worst, float(np.linalg.norm(margin_project(w0, MarginSet(A)).w - ref)))
    return worst <= 1e-7, f"max distance to oracle {worst:.2e}"


def _gradients():
    rng = np.random.default_rng(2)
    from fedsim.datagen import NodeDataset
    worst = 0.0
    for kind in (SQUARED, EXP_REG):
        for _ in range(5):
            X = rng.standard_normal((4, 6))
            node = NodeDataset(X, np.sign(rng.standard_normal(4)) + (kind == SQUARED) * rng.standard_normal(4))
            spec = LossSpec(kind, lam=0.1 if kind == EXP_REG else 0.0,
                            anchor=rng.standard_normal(6) if kind == EXP_REG else None)
            w = rng.standard_normal(6) * 0.3
            g = loss_grad(spec, node, w)
            h = 1e-6
            fd = np.array([(loss_value(spec, node, w + h * e) - loss_value(spec, node, w - h * e)) / (2 * h)
                           for e in np.eye(6)])
            worst = max(worst, float(np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-12)))
    return worst <= 1e-5, f"max relative error {worst:.1e}"


def _ppm_feasible():
    fed = gen_classification(GenConfig.classification(M=4, N=8, d=80, seed=4))
    sep = check_separable(fed)
    traj = ppm(fed.margin_sets(), None, 500)
    m = min(min_margin(traj.final, s) for s in fed.margin_sets())
    return sep.globally_separable and m >= 1 - 1e-3, f"min margin {m:.6f}"


def _svm():
    fed = gen_classification(GenConfig.classification(M=3, N=6, d=30, seed=5))
    res = hard_margin_svm(fed.margin_sets())
    return res.converged and res.kkt_residual <= 1e-8, f"{res.status}, kkt {res.kkt_residual:.1e}"


def _threads():
    fed = gen_classification(GenConfig.classification(M=4, N=10, d=60, seed=6))
    base = ProtocolConfig(rounds=3, local=LocalUpdateConfig(steps=20, eta=0.01))
    a = local_gd(fed, ProtocolConfig(**{**base.__dict__, "threads": 1}))
    b = local_gd(fed, ProtocolConfig(**{**base.__dict__, "threads": 4}))
    same = all(np.array_equal(x, y) for x, y in zip(a.globals, b.globals))
    return same, "1 vs 4 threads bit-identical" if same else "trajectories differ"


def _roundtrips():
    fed = gen_regression(GenConfig(M=2, N=3, d=5, seed=7))
    back = io.dataset_from_bytes(io.dataset_bytes(fed))
    ok = all(np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y) for a, b in zip(fed.nodes, back.nodes))
    t = Table(["x", "y"], [[1, 0.1], [2, 1 / 3]])
    with tempfile.TemporaryDirectory() as tmp:
        loaded = load_csv(emit_csv(t, Path(tmp) / "t.csv"))
    ok = ok and loaded.rows == [[1.0, 0.1], [2.0, 1 / 3]]
    return ok, "container and CSV exact"


CHECKS = [
    ("closed-form regression matches Local-GD", _closed_form),
    ("affine projection interpolates", _interpolation),
    ("margin projection matches enumeration oracle", _oracle),
    ("analytic gradients match finite differences", _gradients),
    ("PPM reaches the global margin set", _ppm_feasible),
    ("hard-margin SVM KKT certificate", _svm),
    ("thread count does not change results", _threads),
    ("binary and CSV round trips", _roundtrips),
]


def run_checks(out=print) -> bool:
    ok_all = True
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # report and keep going
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        ok_all &= bool(ok)
        out(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail}; {time.perf_counter() - t0:.2f}s)")
    return ok_all
