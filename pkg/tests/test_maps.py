import numpy as np
import pytest

from mkrisk import (
    AnalyticMap,
    Contour,
    ContourKind,
    ParameterError,
    ReferenceSpec,
    direction_grid,
    entropic_potential,
    entropic_quantile,
    identity_map,
    quantile_contour,
    rank_sign,
    sample_reference,
    sign_curve,
)
from mkrisk.maps import rank_sign_batch


def test_identity_map_contour_is_scaled_grid(plane):
    grid = direction_grid(plane, 16)
    contour = quantile_contour(identity_map(plane), 0.4, grid)
    assert contour.kind is ContourKind.QUANTILE
    np.testing.assert_allclose(contour.vertices, 0.4 * grid.directions)
    assert contour.d == 2


def test_linear_map_sign_curve_is_a_ray(plane):
    a = np.array([[2.0, 0.5], [0.5, 1.0]])
    linear = AnalyticMap(plane, lambda u: u @ a.T, lambda u: 0.5 * np.einsum("ij,jk,ik->i", u, a, u))
    radii = np.linspace(0.1, 0.9, 5)
    curve = sign_curve(linear, [0.6, 0.8], radii)
    np.testing.assert_allclose(curve, radii[:, None] * (a @ [0.6, 0.8]))
    assert linear.potential(np.zeros(2)) == 0.0


def test_entropic_wrappers_delegate(small_fit):
    u = sample_reference(small_fit.reference, 10, 2)
    np.testing.assert_array_equal(entropic_quantile(small_fit, u), small_fit.quantile(u))
    np.testing.assert_array_equal(entropic_potential(small_fit, u), small_fit.potential(u))


def test_quantile_contours_are_nested(small_fit, plane):
    grid = direction_grid(plane, 64)
    inner = quantile_contour(small_fit, 0.3, grid).vertices
    outer = quantile_contour(small_fit, 0.7, grid).vertices
    centre = small_fit.quantile(np.zeros(2))
    # monotone map: moving out along each direction moves the image outward
    assert np.all(np.sum((outer - inner) * grid.directions, axis=1) > 0)
    assert np.all(np.linalg.norm(outer - centre, axis=1) > np.linalg.norm(inner - centre, axis=1) * 0.99)


def test_contour_level_and_grid_validation(small_fit, plane):
    grid = direction_grid(plane, 8)
    for bad in (0.0, -0.2, 1.0):
        with pytest.raises(ParameterError):
            quantile_contour(small_fit, bad, grid)
    with pytest.raises(ParameterError):
        quantile_contour(small_fit, 0.5, direction_grid(ReferenceSpec.spherical(3), 8))
    with pytest.raises(ParameterError):
        Contour(0.5, "quantile", np.zeros((3, 2)), grid)
    with pytest.raises(ParameterError):
        sign_curve(small_fit, [1.0, 1.0], [0.5])


def test_rank_of_quantile_image_recovers_level(sharp_fit):
    grid = direction_grid(sharp_fit.reference, 12)
    for level in (0.3, 0.6):
        x = sharp_fit.quantile(level * grid.directions)
        ranks, signs, defined = rank_sign_batch(sharp_fit, x)
        assert defined.all()
        np.testing.assert_allclose(ranks, level, atol=0.06)
        cos = np.sum(signs * grid.directions, axis=1)
        assert np.all(cos > 0.95)


def test_rank_sign_single_point(sharp_fit):
    rs = rank_sign(sharp_fit, [0.0, 0.0])
    assert 0.0 <= rs.rank < 0.2
    far = rank_sign(sharp_fit, [50.0, 0.0])
    assert far.rank > 0.95
    # far outside the cloud the sign follows the outermost atoms, not the exact ray
    assert far.sign[0] > 0.95
    with pytest.raises(ParameterError):
        rank_sign(sharp_fit, [1.0, 2.0, 3.0])


def test_analytic_map_without_potential_refuses(plane):
    bare = AnalyticMap(plane, lambda u: u)
    with pytest.raises(ParameterError):
        bare.potential([0.1, 0.1])
