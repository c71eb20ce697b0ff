import math

import numpy as np
import pytest
from scipy.integrate import quad

from finsler_heat import norms
from finsler_heat.comparison import (
    ModelParams,
    ResolutionError,
    backward_ball_ratio,
    example_flat,
    exact_gaussian,
    laplacian_comparison_check,
    model_coefficient,
    model_density,
    model_kernel,
    solve_radial,
    subsolution_residual,
    unit_ball_volume,
)
from finsler_heat.field import FinslerField, Grid, build_weight


def test_model_params_validation():
    with pytest.raises(ValueError):
        ModelParams(0.0, 0.5)
    with pytest.raises(ValueError):
        ModelParams(1.0, 1.0)
    assert math.isinf(ModelParams(-1.0, 3.0).L)
    assert ModelParams(2.0, 3.0).L == pytest.approx(math.pi)


def test_flat_coefficient():
    assert model_coefficient(ModelParams(0.0, 3.0), 2.0) == pytest.approx(1.0)


def test_coefficients_limits():
    neg = ModelParams(-2.0, 3.0)
    assert model_coefficient(neg, 50.0) == pytest.approx(2.0, rel=1e-12)
    pos = ModelParams(2.0, 3.0)
    assert model_coefficient(pos, pos.L / 2) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        model_coefficient(pos, pos.L)


@pytest.mark.parametrize("params", [ModelParams(-2.0, 3.0), ModelParams(1.0, 2.5), ModelParams(0.0, 4.0)])
def test_density_log_derivative_is_coefficient(params):
    r = np.linspace(0.3, 1.5, 7)
    h = 1e-6
    fd = (np.log(model_density(params, r + h)) - np.log(model_density(params, r - h))) / (2 * h)
    np.testing.assert_allclose(fd, model_coefficient(params, r), rtol=1e-7)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_flat_kernel_peak_and_mass(n):
    params = ModelParams(0.0, float(n))
    t = 0.3
    assert model_kernel(params, t, 0.0) == pytest.approx((4 * math.pi * t) ** (-n / 2))
    mass, _ = quad(lambda r: model_kernel(params, t, r) * n * unit_ball_volume(n) * r ** (n - 1), 0, 20)
    assert mass == pytest.approx(1.0, rel=1e-10)


def test_hyperbolic_kernel_matches_closed_form():
    # K = -2, N = 3 is hyperbolic 3-space with curvature -1
    params = ModelParams(-2.0, 3.0)
    t = 0.5
    r = np.array([0.1, 0.5, 1.0, 2.0])
    exact = (4 * math.pi * t) ** -1.5 * r / np.sinh(r) * np.exp(-t - r**2 / (4 * t))
    np.testing.assert_allclose(model_kernel(params, t, r), exact, rtol=1e-2)


def test_radial_solver_propagates_flat_gaussian():
    params = ModelParams(0.0, 2.0)
    t0, T = 0.01, 0.04
    prof = solve_radial(params, lambda r: np.exp(-(r**2) / (4 * t0)) / t0, T, radius=3.0, nr=1500)
    r = np.linspace(0.0, 1.0, 11)
    t1 = t0 + T
    exact = np.exp(-(r**2) / (4 * t1)) / t1
    np.testing.assert_allclose(prof.at(T, r), exact, atol=2e-3 * exact.max())
    assert prof.derivative_sign_ok(1e-10)


def test_radial_solver_rejects_unresolved_diameter():
    params = ModelParams(2.0, 3.0)
    with pytest.raises(ResolutionError):
        solve_radial(params, lambda r: np.ones_like(r), 0.1, radius=params.L - 1e-4, nr=100)
    with pytest.raises(ValueError):
        solve_radial(params, lambda r: np.ones_like(r), 0.1, radius=params.L)


def test_radial_csv_header():
    prof = solve_radial(ModelParams(0.0, 2.0), lambda r: np.exp(-r**2), 0.01, 2.0, nr=50, record_times=[0.005])
    lines = prof.to_csv().splitlines()
    assert lines[0].startswith("r,t=0.0,") and len(lines) == 51


def test_exact_gaussian_values_and_orientation():
    n = norms.two_slope_1d(1.0, 2.0)
    y = np.array([0.0])
    x = np.array([[0.5], [-0.5]])
    g = exact_gaussian(n, y, 0.25, x)
    # F(y - x): y - x = -0.5 costs 2 * 0.5, y - x = 0.5 costs 0.5
    np.testing.assert_allclose(g, 0.25**-0.5 * np.exp(-np.array([1.0, 0.25]) / 1.0))
    np.testing.assert_allclose(exact_gaussian(n, y, 0.25, x, mirrored=True), g[::-1])
    with pytest.raises(ValueError):
        exact_gaussian(n, y, 0.0, x)


def test_exact_gaussian_parabolic_scaling():
    n = norms.lp(4)
    x = np.random.default_rng(0).normal(size=(20, 2))
    lam = 1.7
    a = exact_gaussian(n, np.zeros(2), lam**2 * 0.3, lam * x)
    b = exact_gaussian(n, np.zeros(2), 0.3, x)
    np.testing.assert_allclose(a, lam ** -2 * b, rtol=1e-12)


def test_backward_ball_ratio():
    assert backward_ball_ratio(norms.euclidean(2)) == pytest.approx(1.0, abs=1e-12)
    assert backward_ball_ratio(norms.euclidean(3)) == pytest.approx(1.0, abs=1e-12)
    assert backward_ball_ratio(norms.two_slope_1d(1.0, 2.0)) == pytest.approx(0.75)
    a = np.array([[2.0, 0.3], [0.3, 1.0]])
    # {x : x.Ax < 1} has volume c_n / sqrt(det A)
    assert backward_ball_ratio(norms.quadratic(a), count=200000) == pytest.approx(np.linalg.det(a) ** -0.5, rel=5e-3)


def test_flat_subsolution_is_sharp_for_euclidean():
    g = Grid((64, 64), (2.0, 2.0), (-1.0, -1.0))
    f = FinslerField(g, norms.euclidean(2))
    rep = subsolution_residual(f, build_weight(g), example_flat(2.0), ModelParams(0.0, 2.0), (32, 32), [0.05, 0.1], tolerance=2e-2, exclude=3.0)
    assert rep.certified
    # a dimension that is too small breaks it
    bad = subsolution_residual(f, build_weight(g), example_flat(1.0), ModelParams(0.0, 1.0), (32, 32), [0.05, 0.1], tolerance=2e-2, exclude=3.0)
    assert not bad.certified


def test_laplacian_of_distance_euclidean():
    g = Grid((64, 64), (2.0, 2.0), (-1.0, -1.0))
    f = FinslerField(g, norms.euclidean(2))
    rep = laplacian_comparison_check(f, build_weight(g), (32, 32), ModelParams(0.0, 2.0))
    assert rep.certified
    assert laplacian_comparison_check(f, build_weight(g), (32, 32), ModelParams(0.0, 1.5)).certified is False
