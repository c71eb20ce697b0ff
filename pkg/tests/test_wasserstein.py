import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from finsler_heat import norms
from finsler_heat.field import FinslerField, Grid, build_weight, gaussian_potential
from finsler_heat.flow import SolverConfig, evolve
from finsler_heat.wasserstein import (
    Density1D,
    Lagrangian1D,
    MassMismatchError,
    c_transform,
    cconcavity_check,
    continuity_residual,
    dissipation_check,
    double_transform,
    entropy,
    fisher_information,
    jko_objective,
    jko_step,
    jko_step_nodes,
    jko_trajectory,
    w2_distance,
    w2_linear_program,
)

TWO = norms.two_slope_1d(1.0, 2.0)


def _line(n=200, length=1.0, lower=0.0, boundary="dirichlet_zero"):
    return Grid((n,), (length,), (lower,), boundary)


def _bump(g, centre, width, floor=0.0):
    x = g.centres()[..., 0]
    return Density1D.normalized(g, floor + np.exp(-((x - centre) ** 2) / (2 * width**2)))


def _indicator(g, a, b):
    x = g.centres()[..., 0]
    return Density1D.normalized(g, ((x > a) & (x < b)).astype(float))


def _variance(mu):
    x = mu.grid.centres()[..., 0]
    m = mu.cell_masses
    mean = np.sum(m * x)
    # cell masses are spread uniformly: add h^2/12 per cell
    return float(np.sum(m * (x - mean) ** 2) + mu.grid.spacing[0] ** 2 / 12)


# -- densities --------------------------------------------------------------


def test_density_requires_unit_mass():
    g = _line(10)
    with pytest.raises(MassMismatchError):
        Density1D(g, np.ones(10) * 2.0)
    with pytest.raises(ValueError):
        Density1D(g, -np.ones(10))
    with pytest.raises(ValueError):
        Density1D(Grid((4, 4), (1, 1), (0, 0)), np.ones((4, 4)))


def test_quantile_of_uniform():
    mu = Density1D.normalized(_line(10), np.ones(10))
    np.testing.assert_allclose(mu.quantile([0.0, 0.25, 1.0]), [0.0, 0.25, 1.0], atol=1e-14)


# -- W2 ---------------------------------------------------------------------


def test_w2_of_equal_measures_is_zero():
    mu = _bump(_line(), 0.5, 0.1)
    assert w2_distance(mu, mu, TWO) == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("shift", [20, -20])
def test_w2_translation(shift):
    g = _line()
    mu = _indicator(g, 0.3, 0.5)
    nu = _indicator(g, 0.3 + shift / 200, 0.5 + shift / 200)
    c = shift / 200
    slope = 1.0 if c > 0 else 2.0
    assert w2_distance(mu, nu, TWO) == pytest.approx(slope * abs(c), rel=1e-10)


def test_w2_swap_is_reverse_norm():
    g = _line()
    mu, nu = _bump(g, 0.3, 0.05), _indicator(g, 0.4, 0.8)
    ab = w2_distance(mu, nu, TWO)
    assert ab != pytest.approx(w2_distance(nu, mu, TWO), rel=1e-3)
    assert ab == pytest.approx(w2_distance(nu, mu, norms.reverse(TWO)), rel=1e-12)


def test_w2_torus_rotation_beats_identity_levels():
    g = _line(128, boundary="periodic")
    mu = _indicator(g, 0.05, 0.15)
    nu = _indicator(g, 0.85, 0.95)
    # the supports are 13-cell blocks 25 cells apart across the seam:
    # going left costs 2 * 25/128, going right 103/128
    assert w2_distance(mu, nu, TWO) == pytest.approx(2 * 25 / 128, rel=1e-9)


def test_w2_matches_linear_program_small():
    g = _line(8)
    rng = np.random.default_rng(3)
    mu = Density1D.normalized(g, rng.random(8) ** 3 + 1e-3)
    nu = Density1D.normalized(g, rng.random(8) ** 3 + 1e-3)
    k = 24
    h = g.spacing[0]
    sub = (np.arange(k) + 0.5) / k * h
    pts = (g.lower[0] + h * np.arange(8))[:, None] + sub[None, :]
    lp = w2_linear_program(np.repeat(mu.cell_masses / k, k), pts.ravel(), np.repeat(nu.cell_masses / k, k), pts.ravel(), TWO)
    assert w2_distance(mu, nu, TWO) == pytest.approx(lp, rel=1e-2)


def test_linear_program_rejects_unequal_mass():
    with pytest.raises(MassMismatchError):
        w2_linear_program(np.array([0.5, 0.4]), np.array([0.0, 1.0]), np.array([1.0]), np.array([0.5]), TWO)


# -- c-transforms -----------------------------------------------------------


def test_c_transform_of_zero():
    g = _line(64, boundary="periodic")
    np.testing.assert_allclose(c_transform(np.zeros(64), g, TWO), 0.0, atol=1e-15)
    np.testing.assert_allclose(c_transform(np.zeros(64), g, TWO, "c_bar"), 0.0, atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_double_transform_dominates_and_is_idempotent(seed):
    g = _line(48, boundary="periodic")
    phi = np.random.default_rng(seed).normal(size=48) * 0.05
    cc = double_transform(phi, g, TWO)
    assert np.all(cc >= phi - 1e-14)
    np.testing.assert_allclose(double_transform(cc, g, TWO), cc, atol=1e-14)


def test_small_smooth_potential_is_c_concave():
    g = _line(128, boundary="periodic")
    x = g.centres()[..., 0]
    assert cconcavity_check(0.005 * np.sin(2 * np.pi * x), g, TWO).concave
    assert not cconcavity_check(0.1 * np.sin(2 * np.pi * x), g, TWO).concave


# -- entropy and Fisher information ----------------------------------------


def test_entropy_values():
    g = _line(400)
    assert entropy(Density1D.normalized(g, np.ones(400))) == pytest.approx(0.0, abs=1e-13)
    assert entropy(_indicator(g, 0.0, 0.5)) == pytest.approx(math.log(2), abs=1e-12)
    wide = Grid((2000,), (20.0,), (-10.0,))
    s = 0.7
    assert entropy(_bump(wide, 0.0, s)) == pytest.approx(-0.5 * math.log(2 * math.pi * math.e * s * s), abs=1e-5)


def test_fisher_information():
    g = Grid((1000,), (20.0,), (-10.0,), "periodic")
    w = build_weight(g)
    f = FinslerField(g, norms.euclidean(1))
    assert fisher_information(np.full(1000, 1 / 20.0), f, w) == pytest.approx(0.0, abs=1e-14)
    s = 0.8
    rho = _bump(g, 0.0, s).rho
    assert fisher_information(rho, f, w) == pytest.approx(1 / s**2, rel=1e-3)


def test_entropy_dissipation_identity():
    g = _line(128, boundary="periodic")
    f = FinslerField(g, TWO)
    rho = _bump(g, 0.4, 0.06, floor=0.05).rho
    rep = dissipation_check(rho, f, build_weight(g), 0.005, SolverConfig(delta=5e-5, inner_tol=1e-6))
    assert rep["relative_error"] < 0.02


def test_gaussian_weight_entropy_of_reference_density():
    g = Grid((200,), (12.0,), (-6.0,))
    w = build_weight(g, gaussian_potential(1.0))
    mu = Density1D.normalized(g, np.ones(200), w)
    assert entropy(mu) == pytest.approx(-math.log(w.total_mass), abs=1e-12)


# -- JKO --------------------------------------------------------------------


def test_uniform_is_stationary():
    g = _line(64, boundary="periodic")
    mu = Density1D.normalized(g, np.ones(64))
    out = jko_step(mu, TWO, 1e-3, S=64)
    np.testing.assert_allclose(out.rho, mu.rho, atol=1e-12)


def test_lagrangian_requires_periodic_positive():
    with pytest.raises(ValueError):
        Lagrangian1D.from_density(_bump(_line(64), 0.5, 0.1), 32)
    with pytest.raises(ValueError):
        Lagrangian1D.from_density(_indicator(_line(64, boundary="periodic"), 0.2, 0.4), 32)


def test_jko_step_decreases_objective():
    g = _line(128, boundary="periodic")
    start = Lagrangian1D.from_density(_bump(g, 0.4, 0.06, floor=0.05), 128)
    new = jko_step_nodes(start, TWO, 1e-3)
    assert jko_objective(new, start, TWO, 1e-3) < jko_objective(start, start, TWO, 1e-3)
    # first-order optimality: no small perturbation improves it
    rng = np.random.default_rng(0)
    best = jko_objective(new, start, TWO, 1e-3)
    for _ in range(5):
        trial = Lagrangian1D(g, new.nodes + 1e-5 * rng.normal(size=128))
        assert jko_objective(trial, start, TWO, 1e-3) >= best - 1e-12


def test_symmetric_jko_spreads_like_heat():
    g = _line(256, boundary="periodic")
    mu = _bump(g, 0.5, 0.05, floor=1e-6)
    traj = jko_trajectory(mu, norms.euclidean(1), 0.002, 5e-5, S=512)
    # compare against the node reconstruction of the start, not mu itself
    v0 = _variance(Density1D.normalized(g, traj.densities[0]))
    v1 = _variance(Density1D.normalized(g, traj.densities[-1]))
    assert (v1 - v0) == pytest.approx(2 * 0.002, rel=0.02)


def test_reverse_of_reverse_is_identical():
    g = _line(128, boundary="periodic")
    mu = _bump(g, 0.4, 0.06, floor=0.05)
    a = jko_step(mu, TWO, 1e-3)
    b = jko_step(mu, norms.reverse(norms.reverse(TWO)), 1e-3)
    np.testing.assert_array_equal(a.rho, b.rho)


def test_asymmetric_jko_drifts_along_cheap_direction():
    g = _line(128, boundary="periodic")
    mu = _bump(g, 0.5, 0.06, floor=0.05)
    x = g.centres()[..., 0]
    right = jko_trajectory(mu, TWO, 0.003, 5e-4).densities[-1]
    left = jko_trajectory(mu, norms.reverse(TWO), 0.003, 5e-4).densities[-1]
    m = build_weight(g).measure
    # mirror images of each other about the start centre
    assert np.sum(m * right * x) - 0.5 == pytest.approx(-(np.sum(m * left * x) - 0.5), rel=1e-6, abs=1e-9)


def test_jko_csv():
    g = _line(32, boundary="periodic")
    traj = jko_trajectory(_bump(g, 0.5, 0.1, floor=0.1), TWO, 2e-3, 1e-3, S=32)
    lines = traj.to_csv().splitlines()
    assert lines[0].split(",")[:2] == ["t", "c0"] and len(lines) == 4


# -- continuity equation ----------------------------------------------------


def test_continuity_residual_picks_the_right_velocity():
    g = _line(128, boundary="periodic")
    w = build_weight(g)
    f = FinslerField(g, TWO)
    rho = _bump(g, 0.4, 0.06, floor=0.05).rho
    tr = evolve(f.reversed(), w, rho, 0.002, SolverConfig(delta=2e-5, inner_tol=1e-6))
    good = continuity_residual(tr.times, tr.states, f, w, "entropy_gradient")
    bad = continuity_residual(tr.times, tr.states, f, w, "reversed")
    assert good < 0.02 and bad > 1.0
    with pytest.raises(ValueError):
        continuity_residual(tr.times, tr.states, f, w, "sideways")
