import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mkrisk import (
    DataError,
    FittedPotential,
    ParameterError,
    PointCloud,
    ReferenceSpec,
    SolveLog,
    SolveOptions,
    SolverMethod,
    sample_reference,
    semidual_objective,
    smooth_c_transform,
    solve_semidual,
)
from mkrisk._gibbs import softmin, softmin_weights
from mkrisk.solver import _SparseKernel

_LOG = SolveLog("fixed", 0, 0.0, 0.0, 0.0, True, 0)


def _potential(points, v, eps, reference=None):
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    reference = reference or ReferenceSpec.spherical(points.shape[1])
    return FittedPotential(PointCloud(points), np.asarray(v, dtype=float), eps, reference, 0, 0.0, _LOG)


def test_c_transform_two_point_example():
    pot = _potential([-1.0, 1.0], [0.0, 0.0], 1.0)
    assert smooth_c_transform(pot, [0.0]) == pytest.approx(0.5, abs=1e-15)
    # unequal potentials: -log(mean(exp(v - 1/2)))
    pot = _potential([-1.0, 1.0], [0.0, math.log(3.0)], 1.0)
    assert smooth_c_transform(pot, [0.0]) == pytest.approx(0.5 - math.log(2.0), abs=1e-14)


def test_c_transform_survives_tiny_epsilon():
    pot = _potential([[0.0, 0.0], [5.0, 5.0]], [0.0, 0.0], 1e-6)
    c = pot.c_transform(np.array([[4.0, 4.0]]))
    # hard minimum plus eps * log 2
    assert np.isfinite(c[0])
    assert c[0] == pytest.approx(1.0 + 1e-6 * math.log(2.0), rel=1e-12)


def test_quantile_is_gibbs_barycentre():
    x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    v = np.array([0.0, 0.3, -0.2])
    pot = _potential(x, v, 0.5)
    u = np.array([0.2, -0.1])
    logits = (v - 0.5 * np.sum((u - x) ** 2, axis=1)) / 0.5
    w = np.exp(logits - logits.max())
    w /= w.sum()
    np.testing.assert_allclose(pot.quantile(u), w @ x, rtol=1e-14)


def test_semidual_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 2))
    v = rng.standard_normal(5) * 0.1
    eps = 0.3
    sample = sample_reference(ReferenceSpec.spherical(2), 400, 1)
    grad = 1.0 / 5 - softmin_weights(sample, x, v, eps).mean(axis=0)
    h = 1e-6
    for i in range(5):
        e = np.zeros(5)
        e[i] = h
        hi = semidual_objective(_potential(x, v + e, eps), sample)
        lo = semidual_objective(_potential(x, v - e, eps), sample)
        assert (hi - lo) / (2 * h) == pytest.approx(grad[i], rel=1e-6, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), t=st.floats(0.05, 0.95))
def test_semidual_objective_is_concave(seed, t):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((6, 2))
    a, b = rng.standard_normal((2, 6))
    sample = sample_reference(ReferenceSpec.spherical(2), 200, seed)
    f = lambda v: semidual_objective(_potential(x, v, 0.2), sample)
    assert f(t * a + (1 - t) * b) >= t * f(a) + (1 - t) * f(b) - 1e-12


def test_sparse_kernel_matches_dense_evaluation():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((200, 2))
    grid = sample_reference(ReferenceSpec.spherical(2), 1500, 3)
    v = rng.standard_normal(200) * 0.05
    eps = 0.02
    kernel = _SparseKernel(grid, x, eps)
    kernel.build(v)
    objective, probs, mass = kernel.evaluate(v)
    lse, _ = softmin(grid, x, v, eps)
    dense_obj = float(np.mean(-eps * (lse - math.log(200))) + v.mean() - eps)
    dense_mass = softmin_weights(grid, x, v, eps).mean(axis=0)
    assert objective == pytest.approx(dense_obj, abs=1e-12)
    np.testing.assert_allclose(mass, dense_mass, atol=1e-12)
    assert len(kernel.indices) < 200 * 1500


def test_fit_converges_and_history_is_monotone(small_fit):
    log = small_fit.solve_log
    assert log.converged
    assert log.residual < 1e-7
    hist = np.array(log.objective_history)
    assert np.all(np.diff(hist) >= -1e-12 * np.abs(hist[:-1]).max())


def test_fitted_potential_vanishes_at_origin(small_fit):
    assert small_fit.potential(np.zeros(2)) == pytest.approx(0.0, abs=1e-15)
    assert small_fit.v[small_fit.anchor_index] == 0.0


def test_quantile_is_gradient_of_potential(small_fit):
    u = sample_reference(small_fit.reference, 20, 5) * 0.9
    h = 1e-6
    for point in u:
        fd = np.array(
            [
                (small_fit.potential(point + h * e) - small_fit.potential(point - h * e)) / (2 * h)
                for e in np.eye(2)
            ]
        )
        np.testing.assert_allclose(small_fit.quantile(point), fd, rtol=1e-6, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_potential_is_convex_and_map_monotone(small_fit, seed):
    u, w = sample_reference(small_fit.reference, 2, seed)
    psi = small_fit.potential
    assert psi(0.5 * (u + w)) <= 0.5 * (psi(u) + psi(w)) + 1e-12
    q = small_fit.quantile
    assert np.dot(q(u) - q(w), u - w) >= -1e-12


def test_constant_shift_of_dual_leaves_maps_unchanged(small_fit):
    u = sample_reference(small_fit.reference, 30, 6)
    shifted = _potential(small_fit.data.points, small_fit.v + 2.5, small_fit.epsilon)
    base = _potential(small_fit.data.points, small_fit.v, small_fit.epsilon)
    np.testing.assert_allclose(shifted.quantile(u), base.quantile(u), atol=1e-13)
    np.testing.assert_allclose(shifted.c_transform(u), base.c_transform(u) - 2.5, atol=1e-12)


def test_fit_is_deterministic(plane, small_cloud):
    opts = SolveOptions(batch_reference_size=2000, seed=4)
    a = solve_semidual(small_cloud, plane, 1e-2, opts)
    b = solve_semidual(small_cloud, plane, 1e-2, opts)
    np.testing.assert_array_equal(a.v, b.v)
    assert a.psi_zero == b.psi_zero


def test_shift_and_scale_equivariance_on_small_fit(plane, small_cloud, small_grid, small_fit):
    u = sample_reference(plane, 40, 4) * 0.9
    b = np.array([3.0, -1.0])
    a = 2.5
    moved = solve_semidual(a * small_cloud + b, plane, a * small_fit.epsilon, reference_grid=small_grid)
    np.testing.assert_allclose(moved.quantile(u), a * small_fit.quantile(u) + b, atol=1e-6)


def test_warm_start_reaches_same_solution(plane, small_cloud, small_grid, small_fit):
    again = solve_semidual(small_cloud, plane, 1e-2, reference_grid=small_grid, initial=small_fit.v)
    assert again.solve_log.iterations <= 1
    np.testing.assert_allclose(again.v, small_fit.v, atol=1e-8)


def test_sinkhorn_only_backend_converges(plane, small_cloud, small_grid, small_fit):
    opts = SolveOptions(newton=False, tolerance=1e-5, iterations=5000)
    fit = solve_semidual(small_cloud, plane, 1e-2, opts, reference_grid=small_grid)
    assert fit.solve_log.converged
    u = sample_reference(plane, 30, 8) * 0.8
    np.testing.assert_allclose(fit.quantile(u), small_fit.quantile(u), atol=1e-4)


def test_sgd_backend_approximates_fixed_point(plane, small_cloud, small_fit):
    opts = SolveOptions(method=SolverMethod.AVERAGED_SGD, iterations=3000, batch_reference_size=256, seed=1)
    fit = solve_semidual(small_cloud, plane, 1e-2, opts)
    assert fit.solve_log.method == "sgd"
    assert np.all(np.isfinite(fit.v))
    assert fit.solve_log.objective == pytest.approx(small_fit.solve_log.objective, abs=2e-2)
    u = sample_reference(plane, 50, 3) * 0.7
    err = np.linalg.norm(fit.quantile(u) - small_fit.quantile(u), axis=1)
    assert err.mean() < 0.25


def test_kernel_budget_reduces_grid_with_warning(plane, small_cloud):
    opts = SolveOptions(batch_reference_size=3000, max_kernel_entries=20_000, tolerance=1e-6)
    fit = solve_semidual(small_cloud, plane, 1e-2, opts)
    assert fit.solve_log.grid_size < 3000
    assert "max_kernel_entries" in fit.solve_log.warning


def test_one_dimensional_fit_tracks_empirical_quantile():
    x = np.random.default_rng(0).standard_normal(1000)
    fit = solve_semidual(x, ReferenceSpec.spherical(1), 1e-3)
    assert fit.solve_log.converged
    levels = np.array([-0.8, -0.4, 0.4, 0.8])
    q = fit.quantile(levels).ravel()
    expected = np.quantile(x, (1 + levels) / 2)
    np.testing.assert_allclose(q, expected, atol=0.1)
    assert np.all(np.diff(q) > 0)


def test_solver_rejects_bad_input(plane):
    with pytest.raises(DataError):
        solve_semidual(np.ones((5, 2)), plane)
    with pytest.raises(ParameterError):
        solve_semidual(np.eye(2), plane, epsilon=0.0)
    with pytest.raises(ParameterError):
        solve_semidual(np.random.default_rng(0).random((5, 3)), plane)
    with pytest.raises(DataError):
        PointCloud(np.array([[0.0, np.nan], [1.0, 1.0]]))
    with pytest.raises(DataError):
        PointCloud(np.array([[0.0, 1.0]]))
    with pytest.raises(ParameterError):
        solve_semidual(np.eye(2), plane, reference_grid=np.zeros((10, 3)))
    with pytest.raises(ParameterError):
        solve_semidual(np.eye(2), plane, initial=np.zeros(3))


def test_options_resolve_per_method_and_round_trip():
    fixed = SolveOptions().resolved(50)
    assert (fixed.iterations, fixed.batch_reference_size) == (500, 500)
    assert SolveOptions().resolved(10**6).batch_reference_size == 100_000
    sgd = SolveOptions(method="sgd").resolved(1000)
    assert (sgd.iterations, sgd.batch_reference_size) == (2000, 256)
    assert SolveOptions.from_dict(fixed.to_dict()) == fixed
    for bad in ({"tolerance": 0}, {"iterations": 0}, {"step_scale": -1}, {"truncation": 5}):
        with pytest.raises(ParameterError):
            SolveOptions(**bad)


def test_solve_log_round_trip(small_fit):
    log = small_fit.solve_log
    assert SolveLog.from_dict(log.to_dict()) == log


def test_backward_map_inverts_quantile_on_average(sharp_fit):
    u = sample_reference(sharp_fit.reference, 200, 12) * 0.8
    back = sharp_fit.backward(sharp_fit.quantile(u))
    assert np.median(np.linalg.norm(back - u, axis=1)) < 0.08


def test_single_atom_c_transform_and_objective():
    # a repeated atom is the one-point measure
    pot = _potential([[0.0, 0.0], [0.0, 0.0]], [0.0, 0.0], 0.7)
    u = np.array([[0.3, -0.2], [1.0, 2.0]])
    np.testing.assert_allclose(pot.c_transform(u), 0.5 * np.sum(u * u, axis=1), rtol=1e-14)
    unit = _potential([[0.0, 0.0], [0.0, 0.0]], [0.0, 0.0], 1.0)
    assert semidual_objective(unit, np.zeros((1, 2))) == pytest.approx(-1.0, abs=1e-15)
    with pytest.raises(ParameterError):
        semidual_objective(unit, np.zeros((0, 2)))


def test_c_transform_small_epsilon_limit():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((7, 2))
    v = rng.standard_normal(7)
    u = rng.standard_normal((5, 2)) * 0.5
    hard = np.min(0.5 * np.sum((u[:, None, :] - x[None]) ** 2, axis=2) - v, axis=1)
    for eps in (1e-2, 1e-4):
        soft = _potential(x, v, eps).c_transform(u)
        assert np.all(np.abs(soft - hard) <= eps * math.log(7) + 1e-12)


def test_optimum_beats_zero_potential(small_fit, small_grid):
    zero = _potential(small_fit.data.points, np.zeros(small_fit.data.n), small_fit.epsilon)
    assert semidual_objective(small_fit, small_grid) >= semidual_objective(zero, small_grid)


def test_anchor_invariance_of_the_start(plane, small_cloud, small_grid, small_fit):
    a = solve_semidual(small_cloud, plane, 1e-2, reference_grid=small_grid, initial=small_fit.v * 0.9)
    b = solve_semidual(small_cloud, plane, 1e-2, reference_grid=small_grid, initial=small_fit.v * 0.9 + 4.0)
    np.testing.assert_allclose(a.v, b.v, atol=1e-12)
    assert a.psi_zero == pytest.approx(b.psi_zero, abs=1e-12)
