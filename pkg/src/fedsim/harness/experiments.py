"""Named synthetic experiments, their presets, and the run driver.

Each experiment writes one CSV per metric series (plus an SVG per CSV when
plots are enabled) and a ``manifest.json`` recording the spec, seed, code
version, timings and SHA-256 checksums of everything written.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

import fedsim
from fedsim import io
from fedsim.datagen import (
    GenConfig,
    dirichlet_partition_retry,
    gen_classification,
    gen_pool,
    gen_regression,
    FederatedDataset,
    NodeDataset,
    CLASSIFICATION,
)
from fedsim.harness.report import PlotOptions, Table, emit_csv, emit_svg_lineplot
from fedsim.linalg import RankDeficient
from fedsim.local import EXP_REG, SQUARED, LocalUpdateConfig, LossSpec
from fedsim.metrics import accuracy, directional_diff, generalization_error, scaled_diff
from fedsim.projection import hard_margin_svm
from fedsim.protocols import (
    ProtocolConfig,
    centralized_gd,
    centralized_min_norm,
    closed_form_regression,
    local_gd,
    modified_local_gd,
    worker_count,
)

log = logging.getLogger(__name__)

DIM_GRID = [100, 250, 500, 750, 1000, 1500]
# sweep budget for the SVM baseline; exhausting it marks the pooled data non-separable
SVM_MAX_SWEEPS = 20000
SWEEPABLE = {"d", "alpha"}


@dataclass(frozen=True)
class Sweep:
    param: str
    values: tuple

    def __post_init__(self):
        if self.param not in SWEEPABLE:
            raise ValueError(f"cannot sweep {self.param!r}; choose from {sorted(SWEEPABLE)}")
        if not self.values:
            raise ValueError("sweep needs at least one value")


@dataclass
class ExperimentSpec:
    name: str
    gen: GenConfig
    protocol: ProtocolConfig
    centralized: LocalUpdateConfig
    sweep: Sweep | None = None
    outputs: Path = Path("results")
    emit_plots: bool = True
    n_test: int = 500
    pool_size: int = 500

    def to_json(self) -> dict:
        p = self.protocol
        return {
            "experiment": self.name,
            "seed": self.gen.seed,
            "gen": asdict(self.gen),
            "protocol": {
                "rounds": p.rounds,
                "local_steps": p.local.steps,
                "eta": p.local.eta,
                "stop_grad_norm": p.local.stop_grad_norm,
                "lambda": p.lam,
                "record_every": p.record_every,
                "squared_reduction": p.squared_reduction,
            },
            "centralized": {"steps": self.centralized.steps, "eta": self.centralized.eta},
            "sweep": None if self.sweep is None else {"param": self.sweep.param,
                                                      "values": list(self.sweep.values)},
            "out": str(self.outputs),
            "plots": self.emit_plots,
            "n_test": self.n_test,
            "pool_size": self.pool_size,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentSpec":
        """Build a spec from the experiment's preset, overridden by ``doc``."""
        spec = preset(doc["experiment"])
        return apply_overrides(spec, doc)


def _regression_spec(name, sweep=None) -> ExperimentSpec:
    return ExperimentSpec(
        name=name,
        gen=GenConfig.regression(),
        protocol=ProtocolConfig(rounds=200, local=LocalUpdateConfig(steps=200, eta=1e-4),
                                squared_reduction="sum"),
        centralized=LocalUpdateConfig(steps=10000, eta=1e-4),
        sweep=sweep,
    )


def _classification_spec(name, sweep=None) -> ExperimentSpec:
    return ExperimentSpec(
        name=name,
        gen=GenConfig.classification(),
        protocol=ProtocolConfig(rounds=120, local=LocalUpdateConfig(steps=150, eta=0.01), lam=1e-4),
        centralized=LocalUpdateConfig(steps=20000, eta=0.01),
        sweep=sweep,
    )


def _dirichlet_spec(name) -> ExperimentSpec:
    return ExperimentSpec(
        name=name,
        gen=GenConfig.classification(dirichlet_alpha=0.5),
        protocol=ProtocolConfig(rounds=150, local=LocalUpdateConfig(steps=150, eta=0.01), lam=1e-4),
        centralized=LocalUpdateConfig(steps=22500, eta=0.01),
        sweep=Sweep("alpha", (0.3, 0.5)),
    )


def preset(name: str) -> ExperimentSpec:
    try:
        factory, kwargs = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown experiment {name!r}; see `fedsim list`") from None
    return factory(name, **kwargs)


def apply_overrides(spec: ExperimentSpec, doc: dict) -> ExperimentSpec:
    gen = spec.gen
    if "gen" in doc:
        gen = replace(gen, **doc["gen"])
    if doc.get("seed") is not None:
        gen = replace(gen, seed=int(doc["seed"]))
    p = spec.protocol
    pdoc = doc.get("protocol", {})
    local = replace(
        p.local,
        steps=int(pdoc.get("local_steps", p.local.steps)),
        eta=float(pdoc.get("eta", p.local.eta)),
        stop_grad_norm=float(pdoc.get("stop_grad_norm", p.local.stop_grad_norm)),
    )
    protocol = replace(
        p,
        rounds=int(pdoc.get("rounds", p.rounds)),
        local=local,
        lam=float(pdoc.get("lambda", p.lam)),
        record_every=int(pdoc.get("record_every", p.record_every)),
        squared_reduction=pdoc.get("squared_reduction", p.squared_reduction),
    )
    cdoc = doc.get("centralized", {})
    centralized = replace(spec.centralized, steps=int(cdoc.get("steps", spec.centralized.steps)),
                          eta=float(cdoc.get("eta", spec.centralized.eta)))
    sweep = spec.sweep
    if "sweep" in doc:
        s = doc["sweep"]
        sweep = None if s is None else Sweep(s["param"], tuple(s["values"]))
    return replace(
        spec,
        gen=gen,
        protocol=protocol,
        centralized=centralized,
        sweep=sweep,
        outputs=Path(doc.get("out", spec.outputs)),
        emit_plots=bool(doc.get("plots", spec.emit_plots)),
        n_test=int(doc.get("n_test", spec.n_test)),
        pool_size=int(doc.get("pool_size", spec.pool_size)),
    )


# ---------------------------------------------------------------- points

@dataclass
class RegressionPoint:
    d: int
    trajectory: object
    closed_form: object
    centralized: np.ndarray
    centralized_closed: np.ndarray
    fed: FederatedDataset


def _min_norm_least_squares(fed: FederatedDataset) -> np.ndarray:
    try:
        return centralized_min_norm(fed)
    except RankDeficient:
        # fewer features than pooled samples: no interpolator exists
        stacked = fed.stacked()
        return np.linalg.lstsq(stacked.X, stacked.y, rcond=None)[0]


def regression_point(gen: GenConfig, protocol: ProtocolConfig, central: LocalUpdateConfig) -> RegressionPoint:
    return _regression_point(gen, protocol, central, worker_count(protocol.threads))


@lru_cache(maxsize=16)
def _regression_point(gen, protocol, central, _workers) -> RegressionPoint:
    fed = gen_regression(gen)
    traj = local_gd(fed, protocol)
    closed = closed_form_regression(fed, protocol.rounds, protocol.init, protocol.record_every)
    spec = LossSpec(SQUARED, reduction=protocol.squared_reduction)
    wc = centralized_gd(fed, spec, central)
    return RegressionPoint(gen.d, traj, closed, wc, _min_norm_least_squares(fed), fed)


@dataclass
class ClassificationPoint:
    fed: FederatedDataset
    test: FederatedDataset
    trajectory: object
    modified: object
    centralized: np.ndarray
    svm: object

    @property
    def svm_w(self) -> np.ndarray | None:
        return self.svm.w if self.svm.converged else None


def _maybe(fn, *args):
    return None if any(a is None for a in args) else fn(*args)


def _classification_models(fed, test, protocol, central) -> ClassificationPoint:
    traj = local_gd(fed, protocol)
    mod = modified_local_gd(fed, protocol)
    wc = centralized_gd(fed, LossSpec(EXP_REG, lam=protocol.lam), central)
    svm = hard_margin_svm(fed.margin_sets(), max_iters=SVM_MAX_SWEEPS)
    if not svm.converged:
        log.warning("pooled data not separable (%s, d=%d); SVM columns left empty", svm.status, fed.dim)
    return ClassificationPoint(fed, test, traj, mod, wc, svm)


def classification_point(gen: GenConfig, protocol: ProtocolConfig, central: LocalUpdateConfig,
                         n_test: int) -> ClassificationPoint:
    return _classification_point(gen, protocol, central, n_test, worker_count(protocol.threads))


@lru_cache(maxsize=16)
def _classification_point(gen, protocol, central, n_test, _workers) -> ClassificationPoint:
    fed, test = gen_classification(gen, n_test=n_test)
    return _classification_models(fed, test, protocol, central)


def dirichlet_point(gen: GenConfig, protocol: ProtocolConfig, central: LocalUpdateConfig,
                    pool_size: int, n_test: int) -> ClassificationPoint:
    return _dirichlet_point(gen, protocol, central, pool_size, n_test, worker_count(protocol.threads))


@lru_cache(maxsize=8)
def _dirichlet_point(gen, protocol, central, pool_size, n_test, _workers) -> ClassificationPoint:
    X, y, w_star = gen_pool(gen, pool_size)
    fed = dirichlet_partition_retry(X, y, gen.dirichlet_alpha, gen.M, gen.seed, w_star)
    Xt, yt, _ = gen_pool(gen, n_test * gen.M, test=True)
    test = FederatedDataset([NodeDataset(Xt, yt, w_star)], gen.d, CLASSIFICATION)
    return _classification_models(fed, test, protocol, central)


def clear_caches():
    _regression_point.cache_clear()
    _classification_point.cache_clear()
    _dirichlet_point.cache_clear()


def _sweep_values(spec: ExperimentSpec, param: str, default):
    if spec.sweep is None:
        return list(default)
    if spec.sweep.param != param:
        raise ValueError(f"{spec.name} sweeps {param!r}, not {spec.sweep.param!r}")
    return list(spec.sweep.values)


def _map_points(fn, values):
    # points are independent and individually deterministic
    with ThreadPoolExecutor(max_workers=min(len(values), worker_count())) as pool:
        return list(pool.map(fn, values))


# ------------------------------------------------------------ experiments

def _regression_rounds(spec, out):
    pt = regression_point(spec.gen, spec.protocol, spec.centralized)
    d = spec.gen.d
    t = Table(["round", "diff_global_vs_centralized", "diff_global_vs_closedform"])
    for k, g, c in zip(pt.trajectory.round_indices, pt.trajectory.globals, pt.closed_form.globals):
        t.append(k, scaled_diff(g, pt.centralized, d), scaled_diff(g, c, d))
    artifacts = [
        io.save_dataset(pt.fed, out / "dataset.fsim"),
        io.save_trajectory(pt.trajectory, out / "trajectory_global.fsim"),
        io.export_trajectory_csv(pt.trajectory, out / "trajectory_global.csv"),
    ]
    return [("rounds", t, PlotOptions(xlabel="communication round", ylabel="||w1 - w2|| / d", logy=True))], artifacts


def _regression_points(spec):
    dims = _sweep_values(spec, "d", DIM_GRID)
    return _map_points(lambda d: regression_point(spec.gen.with_(d=int(d)), spec.protocol, spec.centralized), dims)


def _regression_dim_sweep(spec, out):
    t = Table(["d", "diff_global_vs_centralized", "diff_global_vs_closedform",
               "diff_centralized_vs_closedform"])
    for pt in _regression_points(spec):
        t.append(pt.d, scaled_diff(pt.trajectory.final, pt.centralized, pt.d),
                 scaled_diff(pt.trajectory.final, pt.closed_form.final, pt.d),
                 scaled_diff(pt.centralized, pt.centralized_closed, pt.d))
    return [("difference", t, PlotOptions(xlabel="dimension d", ylabel="||w1 - w2|| / d", logy=True))], []


def _regression_generalization(spec, out):
    t = Table(["d", "gen_error_global", "gen_error_centralized", "gen_error_global_closedform",
               "gen_error_centralized_closedform"])
    for pt in _regression_points(spec):
        t.append(pt.d, generalization_error(pt.trajectory.final, pt.fed),
                 generalization_error(pt.centralized, pt.fed),
                 generalization_error(pt.closed_form.final, pt.fed),
                 generalization_error(pt.centralized_closed, pt.fed))
    return [("generalization", t, PlotOptions(xlabel="dimension d", ylabel="generalization error / d"))], []


def _classification_rounds(spec, out):
    pt = classification_point(spec.gen, spec.protocol, spec.centralized, spec.n_test)
    t = _direction_table(pt)
    return [("difference", t, PlotOptions(xlabel="communication round", ylabel="directional difference"))], [
        io.save_dataset(pt.fed, out / "dataset.fsim"),
        io.save_trajectory(pt.trajectory, out / "trajectory_global.fsim"),
        io.save_trajectory(pt.modified, out / "trajectory_modified.fsim"),
        io.export_trajectory_csv(pt.trajectory, out / "trajectory_global.csv"),
    ]


def _direction_table(pt: ClassificationPoint) -> Table:
    t = Table(["round", "diff_global_vs_centralized", "diff_modified_vs_centralized",
               "diff_global_vs_svm", "diff_modified_vs_svm", "diff_centralized_vs_svm"])
    c, s = pt.centralized, pt.svm_w
    cs = _maybe(directional_diff, c, s)
    for k, g, m in zip(pt.trajectory.round_indices, pt.trajectory.globals, pt.modified.globals):
        if k == 0:
            continue  # the zero initial model has no direction
        t.append(k, directional_diff(g, c), directional_diff(m, c), _maybe(directional_diff, g, s),
                 _maybe(directional_diff, m, s), cs)
    return t


def _accuracy_rounds_table(pt: ClassificationPoint) -> Table:
    t = Table(["round", "acc_global", "acc_modified", "acc_centralized", "acc_svm"])
    ac, asvm = accuracy(pt.centralized, pt.test), _maybe(accuracy, pt.svm_w, pt.test)
    for k, g, m in zip(pt.trajectory.round_indices, pt.trajectory.globals, pt.modified.globals):
        if k == 0:
            continue
        t.append(k, accuracy(g, pt.test), accuracy(m, pt.test), ac, asvm)
    return t


def _classification_points(spec):
    dims = _sweep_values(spec, "d", DIM_GRID)
    pts = _map_points(lambda d: classification_point(spec.gen.with_(d=int(d)), spec.protocol,
                                                     spec.centralized, spec.n_test), dims)
    return list(zip(dims, pts))


def _classification_dim_sweep(spec, out):
    t = Table(["d", "diff_global_vs_centralized", "diff_modified_vs_centralized"])
    for d, pt in _classification_points(spec):
        t.append(d, directional_diff(pt.trajectory.final, pt.centralized),
                 directional_diff(pt.modified.final, pt.centralized))
    return [("difference", t, PlotOptions(xlabel="dimension d", ylabel="directional difference"))], []


def _classification_svm_gap(spec, out):
    t = Table(["d", "diff_global_vs_svm", "diff_modified_vs_svm", "diff_centralized_vs_svm"])
    for d, pt in _classification_points(spec):
        s = pt.svm_w
        t.append(d, _maybe(directional_diff, pt.trajectory.final, s), _maybe(directional_diff, pt.modified.final, s),
                 _maybe(directional_diff, pt.centralized, s))
    return [("svm_gap", t, PlotOptions(xlabel="dimension d", ylabel="directional difference to SVM"))], []


def _classification_accuracy(spec, out):
    t = Table(["d", "acc_global", "acc_modified", "acc_centralized", "acc_svm"])
    for d, pt in _classification_points(spec):
        t.append(d, accuracy(pt.trajectory.final, pt.test), accuracy(pt.modified.final, pt.test),
                 accuracy(pt.centralized, pt.test), _maybe(accuracy, pt.svm_w, pt.test))
    return [("accuracy", t, PlotOptions(xlabel="dimension d", ylabel="test accuracy"))], []


def _dirichlet_classification(spec, out):
    alphas = _sweep_values(spec, "alpha", [spec.gen.dirichlet_alpha])
    pts = _map_points(lambda a: dirichlet_point(spec.gen.with_(dirichlet_alpha=float(a)), spec.protocol,
                                                spec.centralized, spec.pool_size, spec.n_test), alphas)
    series = []
    for a, pt in zip(alphas, pts):
        series.append((f"alpha{a:g}_difference", _direction_table(pt),
                       PlotOptions(title=f"alpha = {a:g}", xlabel="communication round",
                                   ylabel="directional difference")))
        series.append((f"alpha{a:g}_accuracy", _accuracy_rounds_table(pt),
                       PlotOptions(title=f"alpha = {a:g}", xlabel="communication round",
                                   ylabel="test accuracy")))
        series.append((f"alpha{a:g}_nodes", _node_table(pt.fed), None))
    return series, []


def _node_table(fed: FederatedDataset) -> Table:
    t = Table(["node", "n_samples", "n_positive", "n_negative"])
    for i, n in enumerate(fed.nodes):
        t.append(i, n.n_samples, int(np.sum(n.y > 0)), int(np.sum(n.y < 0)))
    return t


EXPERIMENTS = {
    "regression-rounds": _regression_rounds,
    "regression-dim-sweep": _regression_dim_sweep,
    "regression-generalization": _regression_generalization,
    "classification-rounds": _classification_rounds,
    "classification-dim-sweep": _classification_dim_sweep,
    "classification-svm-gap": _classification_svm_gap,
    "classification-accuracy": _classification_accuracy,
    "dirichlet-classification": _dirichlet_classification,
}

DESCRIPTIONS = {
    "regression-rounds": "regression: global vs centralized and closed form, per round",
    "regression-dim-sweep": "regression: final model differences across d",
    "regression-generalization": "regression: generalization error across d",
    "classification-rounds": "classification: directional differences per round",
    "classification-dim-sweep": "classification: global vs centralized direction across d",
    "classification-svm-gap": "classification: direction gap to the hard-margin SVM across d",
    "classification-accuracy": "classification: test accuracy across d",
    "dirichlet-classification": "classification on Dirichlet-split pooled data",
}

PRESETS = {
    "regression-rounds": (_regression_spec, {}),
    "regression-dim-sweep": (_regression_spec, {"sweep": Sweep("d", tuple(DIM_GRID))}),
    "regression-generalization": (_regression_spec, {"sweep": Sweep("d", tuple(DIM_GRID))}),
    "classification-rounds": (_classification_spec, {}),
    "classification-dim-sweep": (_classification_spec, {"sweep": Sweep("d", tuple(DIM_GRID))}),
    "classification-svm-gap": (_classification_spec, {"sweep": Sweep("d", tuple(DIM_GRID))}),
    "classification-accuracy": (_classification_spec, {"sweep": Sweep("d", tuple(DIM_GRID))}),
    "dirichlet-classification": (_dirichlet_spec, {}),
}


# ------------------------------------------------------------------- run

@dataclass
class RunManifest:
    spec: dict
    seed: int
    code_version: str
    status: str = "running"
    started: float = field(default_factory=time.time)
    finished: float | None = None
    wall_clock_s: float | None = None
    files: dict = field(default_factory=dict)
    failed_stage: str | None = None
    error: str | None = None

    def write(self, out: Path) -> Path:
        path = out / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_experiment(spec: ExperimentSpec) -> RunManifest:
    """Run one named experiment and write its outputs under ``spec.outputs``."""
    if spec.name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {spec.name!r}")
    out = Path(spec.outputs)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(spec.to_json(), spec.gen.seed, fedsim.__version__)
    manifest.write(out)
    t0 = time.perf_counter()
    stage = "compute"
    try:
        series, artifacts = EXPERIMENTS[spec.name](spec, out)
        written = list(artifacts)
        stage = "write"
        for stem, table, opts in series:
            written.append(emit_csv(table, out / f"{spec.name}_{stem}.csv"))
            if spec.emit_plots and opts is not None and table.rows:
                stage = "plot"
                written.append(emit_svg_lineplot(table, out / f"{spec.name}_{stem}.svg", opts))
                stage = "write"
    except Exception as exc:
        manifest.status = "failed"
        manifest.failed_stage = f"{spec.name}:{stage}"
        manifest.error = f"{type(exc).__name__}: {exc}"
        manifest.finished = time.time()
        manifest.wall_clock_s = time.perf_counter() - t0
        manifest.write(out)
        raise
    manifest.files = {Path(p).name: sha256_file(p) for p in written}
    manifest.status = "completed"
    manifest.finished = time.time()
    manifest.wall_clock_s = time.perf_counter() - t0
    manifest.write(out)
    log.info("%s finished in %.1fs", spec.name, manifest.wall_clock_s)
    return manifest
