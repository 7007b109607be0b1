import logging
from dataclasses import replace

import numpy as np
import pytest

from fedsim.datagen import REGRESSION, FederatedDataset, GenConfig, NodeDataset, gen_classification, gen_regression
from fedsim.linalg import affine_project, min_norm_interpolator
from fedsim.local import SQUARED, Diverged, LocalUpdateConfig, LossSpec, local_update
from fedsim.metrics import scaled_diff
from fedsim.projection import MarginSet
from fedsim.protocols import (
    HARMONIC,
    NO_ANCHOR,
    ProjectionFailed,
    ProtocolConfig,
    RegressionOperators,
    centralized_gd,
    centralized_min_norm,
    closed_form_regression,
    local_gd,
    modified_local_gd,
    ppm,
)

CONVERGED_LOCAL = LocalUpdateConfig(steps=5000, eta=0.02)


def _small_regression(M=3, seed=0):
    return gen_regression(GenConfig(M=M, N=4, d=30, seed=seed))


def test_harmonic_schedule_indexing():
    assert HARMONIC(1) == 0.5 and HARMONIC(3) == 0.75


def test_single_node_round_is_affine_projection(rng):
    fed = _small_regression(M=1)
    init = rng.standard_normal(30)
    traj = local_gd(fed, ProtocolConfig(rounds=1, local=CONVERGED_LOCAL, init=init, squared_reduction="sum"))
    n = fed.nodes[0]
    np.testing.assert_allclose(traj.at(1), affine_project(init, n.X, n.y), atol=1e-9)


def test_identical_nodes_aggregation_is_noop():
    node = _small_regression(M=1).nodes[0]
    fed = FederatedDataset([node, node, node], 30, REGRESSION)
    pcfg = ProtocolConfig(rounds=2, local=LocalUpdateConfig(steps=7, eta=0.01))
    traj = local_gd(fed, pcfg)
    w1 = local_update(np.zeros(30), node, LossSpec(SQUARED), pcfg.local).w
    np.testing.assert_allclose(traj.at(1), w1, rtol=1e-15)


def test_modified_first_round_halves_the_mean():
    fed = _small_regression()
    pcfg = ProtocolConfig(rounds=1, local=LocalUpdateConfig(steps=20, eta=0.01))
    np.testing.assert_allclose(modified_local_gd(fed, pcfg).at(1), 0.5 * local_gd(fed, pcfg).at(1), rtol=1e-15)


def test_constant_schedule_matches_vanilla(caplog):
    fed = gen_classification(GenConfig.classification(M=3, N=5, d=20))
    base = ProtocolConfig(rounds=3, local=LocalUpdateConfig(steps=10, eta=0.01))
    with caplog.at_level(logging.WARNING):
        const = replace(base, aggregation=NO_ANCHOR)
    assert "does not steer" in caplog.text
    a, b = modified_local_gd(fed, const), local_gd(fed, base)
    for x, y in zip(a.globals, b.globals):
        np.testing.assert_array_equal(x, y)


def test_thread_count_is_irrelevant():
    fed = _small_regression(M=5)
    pcfg = ProtocolConfig(rounds=4, local=LocalUpdateConfig(steps=30, eta=0.01))
    a = local_gd(fed, replace(pcfg, threads=1))
    b = local_gd(fed, replace(pcfg, threads=5))
    assert all(np.array_equal(x, y) for x, y in zip(a.globals, b.globals))


def test_record_every_keeps_final_round():
    fed = _small_regression()
    traj = local_gd(fed, ProtocolConfig(rounds=7, local=LocalUpdateConfig(steps=3, eta=0.01), record_every=3))
    assert traj.round_indices == [0, 3, 6, 7]


def test_diverged_reports_round_and_node():
    fed = _small_regression()
    with pytest.raises(Diverged) as info:
        local_gd(fed, ProtocolConfig(rounds=2, local=LocalUpdateConfig(steps=50, eta=5.0)))
    assert info.value.round_index == 0 and info.value.node is not None


def test_ppm_two_halfspaces():
    sets = [MarginSet([[1.0, 0.0]]), MarginSet([[0.0, 1.0]])]
    traj = ppm(sets, None, 10)
    for k in range(1, 11):
        np.testing.assert_allclose(traj.at(k), [1 - 2.0 ** -k] * 2, atol=1e-14)


def test_ppm_feasible_init_is_fixed():
    sets = [MarginSet([[1.0, 0.0]]), MarginSet([[0.0, 1.0]])]
    traj = ppm(sets, np.array([2.0, 3.0]), 1)
    np.testing.assert_array_equal(traj.final, [2.0, 3.0])


def test_anchored_ppm_limit_is_projection_of_init():
    sets = [MarginSet([[1.0, 0.0]]), MarginSet([[0.0, 1.0]])]
    traj = ppm(sets, None, 1000, anchored=HARMONIC)
    np.testing.assert_allclose(traj.final, [1, 1], atol=5e-3)


def test_ppm_infeasible_raises():
    with pytest.raises(ProjectionFailed):
        ppm([MarginSet([[0.0, 0.0]])], None, 1)


def test_closed_form_first_round_is_mean_interpolator():
    fed = _small_regression()
    traj = closed_form_regression(fed, 1)
    ref = sum(min_norm_interpolator(n.X, n.y) for n in fed.nodes) / fed.M
    np.testing.assert_allclose(traj.at(1), ref, atol=1e-12)


def test_closed_form_single_node_fixed_point():
    fed = _small_regression(M=1)
    traj = closed_form_regression(fed, 5)
    ref = min_norm_interpolator(fed.nodes[0].X, fed.nodes[0].y)
    for k in range(1, 6):
        np.testing.assert_allclose(traj.at(k), ref, atol=1e-12)


def test_closed_form_matches_local_gd_small():
    fed = _small_regression()
    pcfg = ProtocolConfig(rounds=6, local=CONVERGED_LOCAL, squared_reduction="sum")
    a, b = local_gd(fed, pcfg), closed_form_regression(fed, 6)
    assert max(scaled_diff(x, y) for x, y in zip(a.globals, b.globals)) <= 1e-9


def test_operators_split_offset():
    ops = RegressionOperators(_small_regression())
    np.testing.assert_allclose(ops.q_bar + ops.z_bar, ops.y_bar)


def test_centralized_min_norm():
    fed = _small_regression(M=1)
    n = fed.nodes[0]
    np.testing.assert_allclose(centralized_min_norm(fed), min_norm_interpolator(n.X, n.y))
    a = NodeDataset([[1.0, 2.0, 0.0, 0.0]], [3.0])
    b = NodeDataset([[0.0, 0.0, 1.0, 1.0]], [2.0])
    w = centralized_min_norm(FederatedDataset([a, b], 4, REGRESSION))
    np.testing.assert_allclose(w, [0.6, 1.2, 1.0, 1.0], atol=1e-14)


def test_centralized_min_norm_residual_default_config():
    fed = gen_regression(GenConfig())
    s = fed.stacked()
    assert np.abs(s.X @ centralized_min_norm(fed) - s.y).max() <= 1e-8


def test_centralized_gd_implicit_bias():
    fed = _small_regression()
    w = centralized_gd(fed, LossSpec(SQUARED, reduction="sum"), LocalUpdateConfig(steps=20000, eta=0.005))
    assert scaled_diff(w, centralized_min_norm(fed)) <= 1e-5
    init = np.ones(30)
    np.testing.assert_array_equal(
        centralized_gd(fed, LossSpec(SQUARED), LocalUpdateConfig(steps=0), init=init), init)


def test_fingerprint_tracks_config():
    a = ProtocolConfig()
    assert a.fingerprint() == ProtocolConfig().fingerprint()
    assert a.fingerprint() != ProtocolConfig(rounds=3).fingerprint()
