import numpy as np
import pytest
from scipy.spatial import ConvexHull

from mkrisk import (
    ContourKind,
    FittedPotential,
    PointCloud,
    ReferenceSpec,
    ScenarioSpec,
    SolveLog,
    SolveOptions,
    TailEvalOptions,
    averaged_sign_curve,
    decomposition_residual,
    direction_grid,
    expected_shortfall,
    generate_scenario,
    identity_map,
    quantile_contour,
    rank_sign,
    sample_reference,
    sign_curve,
    solve_semidual,
    superquantile,
)
from mkrisk.analytic import center_outward_superquantile
from mkrisk.maps import rank_sign_batch
from mkrisk.tails import tail_contour

_LOG = SolveLog("fixed", 0, 0.0, 0.0, 0.0, True, 0)


def _inside_hull(points, queries, slack=1e-9):
    hull = ConvexHull(points)
    return np.all(queries @ hull.equations[:, :-1].T + hull.equations[:, -1] <= slack, axis=1)


def _inside_polygon(polygon, queries):
    # even-odd ray casting
    x, y = polygon[:, 0], polygon[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    inside = np.zeros(len(queries), dtype=bool)
    for k, (qx, qy) in enumerate(queries):
        crosses = ((y > qy) != (yn > qy)) & (qx < (xn - x) * (qy - y) / (yn - y + 1e-300) + x)
        inside[k] = np.count_nonzero(crosses) % 2 == 1
    return inside


def test_large_epsilon_flattens_map_to_mean():
    x = np.random.default_rng(0).standard_normal((50, 2))
    pot = FittedPotential(PointCloud(x), np.zeros(50), 1e8, ReferenceSpec.spherical(2), 0, 0.0, _LOG)
    u = sample_reference(pot.reference, 10, 1)
    np.testing.assert_allclose(pot.quantile(u), np.tile(x.mean(axis=0), (10, 1)), atol=1e-7)


def test_symmetric_pair_maps_centre_to_zero():
    pot = FittedPotential(PointCloud([[-1.0], [1.0]]), np.zeros(2), 0.3, ReferenceSpec.spherical(1), 0, 0.0, _LOG)
    assert pot.quantile([0.0])[0] == pytest.approx(0.0, abs=1e-15)


def test_single_atom_potential_is_linear():
    c = np.array([1.5, -0.5])
    cloud = PointCloud(np.array([c, c]))
    raw = FittedPotential(cloud, np.zeros(2), 0.2, ReferenceSpec.spherical(2), 0, 0.0, _LOG)
    pot = FittedPotential(cloud, np.zeros(2), 0.2, raw.reference, 0, -float(raw.c_transform(np.zeros(2))), _LOG)
    u = sample_reference(pot.reference, 20, 2)
    np.testing.assert_allclose(pot.potential(u), u @ c, atol=1e-13)


@pytest.mark.parametrize("d", [1, 2])
def test_quantiles_stay_in_convex_hull(d, small_fit):
    if d == 2:
        fit = small_fit
        u = sample_reference(fit.reference, 500, 4)
        assert _inside_hull(fit.data.points, fit.quantile(u)).all()
    else:
        x = np.random.default_rng(1).standard_normal(200)
        fit = solve_semidual(x, ReferenceSpec.spherical(1), 1e-2)
        q = fit.quantile(np.linspace(-1, 1, 101)).ravel()
        assert x.min() <= q.min() and q.max() <= x.max()


def test_tail_curves_stay_in_convex_hull(small_fit):
    radii = np.linspace(0.05, 0.95, 10)
    for kind in ("superquantile", "shortfall"):
        for direction in direction_grid(small_fit.reference, 8).directions:
            curve = averaged_sign_curve(small_fit, direction, kind, radii)
            assert np.all(np.isfinite(curve))
            assert _inside_hull(small_fit.data.points, curve).all()


def test_self_transport_contours_signs_and_ranks(uniform_fit):
    grid = direction_grid(uniform_fit.reference, 64)
    for alpha in (0.25, 0.5, 0.75):
        vertices = quantile_contour(uniform_fit, alpha, grid).vertices
        assert np.abs(np.linalg.norm(vertices, axis=1) - alpha).max() <= 0.1
    radii = np.linspace(0.1, 0.9, 9)
    e1 = np.array([1.0, 0.0])
    curve = sign_curve(uniform_fit, e1, radii)
    np.testing.assert_allclose(curve, radii[:, None] * e1, atol=0.1)
    ranks = rank_sign_batch(uniform_fit, radii[:, None] * e1)[0]
    assert np.all(np.diff(ranks) > 0)
    curve_ranks = rank_sign_batch(uniform_fit, curve)[0]
    assert np.all(np.diff(curve_ranks) >= -0.05)


def test_contours_shrink_toward_centre_and_nest(uniform_fit):
    grid = direction_grid(uniform_fit.reference, 64)
    spread = lambda a: np.ptp(quantile_contour(uniform_fit, a, grid).vertices, axis=0).max()
    assert spread(0.01) < spread(0.5)
    inner = quantile_contour(uniform_fit, 0.3, grid).vertices
    outer = quantile_contour(uniform_fit, 0.6, grid).vertices
    assert _inside_polygon(outer, inner).all()


def test_superquantile_is_deeper_than_quantile(uniform_fit):
    u = sample_reference(uniform_fit.reference, 100, 7)
    u = u[(np.linalg.norm(u, axis=1) > 0.05) & (np.linalg.norm(u, axis=1) < 0.95)]
    q_rank = rank_sign_batch(uniform_fit, uniform_fit.quantile(u))[0]
    s_rank = rank_sign_batch(uniform_fit, superquantile(uniform_fit, u))[0]
    assert np.all(s_rank >= q_rank - 0.05)


def test_superquantile_potential_relation(uniform_fit):
    opts = TailEvalOptions(radial_steps=4096, r_min=0.0, r_max=1.0)
    u = sample_reference(uniform_fit.reference, 100, 8)
    a = np.linalg.norm(u, axis=1)
    u = u[(a > 0.05) & (a < 0.95)]
    a = np.linalg.norm(u, axis=1)
    s = superquantile(uniform_fit, u, opts)
    psi = uniform_fit.potential
    rhs = a / (1 - a) * (psi(u / a[:, None]) - psi(u))
    assert np.abs(np.sum(s * u, axis=1) - rhs).max() <= 1e-4


def test_identity_decomposition_example(plane):
    opts = TailEvalOptions(radial_steps=16, r_min=0.0, r_max=1.0)
    assert decomposition_residual(identity_map(plane), [0.5, 0.0], opts) == pytest.approx(0.0, abs=1e-15)
    radii = np.array([0.2, 0.6])
    e = averaged_sign_curve(identity_map(plane), [0.0, 1.0], ContourKind.EXPECTED_SHORTFALL, radii, opts)
    s = averaged_sign_curve(identity_map(plane), [0.0, 1.0], ContourKind.SUPERQUANTILE, radii, opts)
    np.testing.assert_allclose(e[:, 1], radii / 2)
    np.testing.assert_allclose(s[:, 1], (1 + radii) / 2)


def test_mismatched_grid_residual_is_second_order(small_fit):
    u = sample_reference(small_fit.reference, 10, 9) * 0.8
    residual = [
        decomposition_residual(small_fit, u, TailEvalOptions(k, 1e-6, 1 - 1e-6), shared_grid=False).max()
        for k in (16, 32, 64)
    ]
    assert residual[0] > residual[1] > residual[2]
    assert residual[1] / residual[2] > 3.0


@pytest.mark.slow
def test_one_dimensional_superquantile_matches_sorted_sample():
    x = np.random.default_rng(11).standard_normal(10_000)
    fit = solve_semidual(x, ReferenceSpec.spherical(1), 1e-3)
    for level in (0.2, 0.5, 0.8):
        s = float(superquantile(fit, np.array([level])).ravel()[0])
        assert s == pytest.approx(center_outward_superquantile(x, level), abs=2e-2)


def test_banana_shortfall_contours_are_nested():
    cloud = generate_scenario(ScenarioSpec("banana", n=1500, seed=2))
    plane = ReferenceSpec.spherical(2)
    fit = solve_semidual(cloud, plane, 1e-2, SolveOptions(batch_reference_size=6000))
    grid = direction_grid(plane, 64)
    levels = np.linspace(0.1, 0.9, 9)
    contours = [tail_contour(fit, a, "shortfall", grid).vertices for a in levels]
    for inner, outer in zip(contours[:-1], contours[1:]):
        assert _inside_polygon(outer, inner).all()


def test_shortfall_characterises_the_distribution(plane):
    rng = np.random.default_rng(13)
    first, second = rng.standard_normal((2, 2000, 2))
    grid = sample_reference(plane, 15000, 3)
    k = np.concatenate([a * direction_grid(plane, 16).directions for a in (0.2, 0.5, 0.8)])
    fits = [solve_semidual(x, plane, 1e-3, reference_grid=grid) for x in (first, second, second + [0.5, 0.0])]
    e = [expected_shortfall(f, k) for f in fits]
    same = np.linalg.norm(e[0] - e[1], axis=1).max()
    shifted = np.linalg.norm(e[0] - e[2], axis=1).max()
    assert same < 0.2
    assert shifted >= 0.3
