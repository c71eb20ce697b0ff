import math

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings, strategies as st

from finsler_heat import norms
from finsler_heat import operators as ops
from finsler_heat.field import FinslerField, Grid, build_weight, gaussian_potential
from finsler_heat.flow import (
    NonConvergenceError,
    SolverConfig,
    contraction_rate,
    contraction_report,
    davies_check,
    default_delta,
    evolve,
    ground_state,
    mm_step,
    semi_implicit_step,
    step_plan,
    step_residual,
)


def _torus(n=32, norm=None):
    g = Grid((n, n), (1.0, 1.0), (0.0, 0.0), "periodic")
    return g, FinslerField(g, norm or norms.lp(4)), build_weight(g)


def _smooth(g, seed):
    rng = np.random.default_rng(seed)
    x = g.centres()
    u = np.zeros(g.shape)
    for k in (1, 2):
        for i in range(g.dim):
            u += rng.normal() / k * np.sin(2 * np.pi * k * x[..., i] + rng.uniform(0, 6.3))
    return u


def _dense_laplacian(field, weight):
    """Matrix of the (linear) Euclidean Laplacian, built column by column."""
    g = field.grid
    cols = []
    for k in range(g.size):
        e = np.zeros(g.size)
        e[k] = 1.0
        cols.append(ops.laplacian(field, weight, e.reshape(g.shape)).ravel())
    return np.array(cols).T


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(delta=0.0)
    with pytest.raises(ValueError):
        SolverConfig(delta=1e-3, scheme="rk4")
    with pytest.raises(ValueError):
        SolverConfig(delta=1e-3, inner_method="cg")


def test_constants_are_stationary():
    g, f, w = _torus(16)
    u0 = np.full(g.shape, 0.7)
    cfg = SolverConfig(delta=1e-3)
    np.testing.assert_array_equal(mm_step(f, w, u0, cfg), u0)
    np.testing.assert_allclose(semi_implicit_step(f, w, u0, cfg), u0, atol=1e-14)


def test_mm_step_is_implicit_euler_for_euclidean():
    g = Grid((12, 10), (1.0, 1.0), (0.0, 0.0))
    f = FinslerField(g, norms.euclidean(2))
    w = build_weight(g)
    u0 = np.random.default_rng(0).normal(size=g.shape)
    delta = 1e-3
    lap = _dense_laplacian(f, w)
    oracle = la.solve(np.eye(g.size) - delta * lap, u0.ravel()).reshape(g.shape)
    out = mm_step(f, w, u0, SolverConfig(delta=delta, inner_tol=1e-10))
    np.testing.assert_allclose(out, oracle, atol=1e-9)
    np.testing.assert_allclose(semi_implicit_step(f, w, u0, SolverConfig(delta=delta, inner_tol=1e-12)), oracle, atol=1e-9)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 1000))
def test_mm_step_energy_decrease_and_mass(seed):
    g, f, w = _torus(16)
    u0 = _smooth(g, seed)
    cfg = SolverConfig(delta=4 * default_delta(f))
    u = mm_step(f, w, u0, cfg)
    assert ops.energy(f, w, u).energy <= ops.energy(f, w, u0).energy
    assert abs(np.sum(w.measure * (u - u0))) < 1e-12


def test_mm_step_residual_meets_tolerance():
    g, f, w = _torus(24)
    u0 = _smooth(g, 1)
    delta = default_delta(f)
    tol = 1e-4
    u = mm_step(f, w, u0, SolverConfig(delta=delta, inner_tol=tol))
    ref = delta * math.sqrt(ops.inner(w, ops.laplacian(f, w, u0), ops.laplacian(f, w, u0)))
    assert step_residual(f, w, u0, u, delta) <= tol * ref * (1 + 1e-9)


def test_mm_step_consistent_with_laplacian_as_delta_shrinks():
    g, f, w = _torus(24)
    u0 = _smooth(g, 2)
    lap0 = ops.laplacian(f, w, u0)
    errs = []
    for d in (4e-5, 2e-5, 1e-5):
        u = mm_step(f, w, u0, SolverConfig(delta=d, inner_tol=1e-6))
        errs.append(np.sqrt(ops.inner(w, (u - u0) / d - lap0, (u - u0) / d - lap0)))
    assert errs[1] / errs[0] < 0.6 and errs[2] / errs[1] < 0.6


def test_semi_implicit_close_to_mm_step_for_small_delta():
    g, f, w = _torus(16)
    u0 = _smooth(g, 3)
    diffs = []
    for d in (2e-4, 1e-4):
        a = mm_step(f, w, u0, SolverConfig(delta=d, inner_tol=1e-8))
        b = semi_implicit_step(f, w, u0, SolverConfig(delta=d, inner_tol=1e-10))
        diffs.append(np.abs(a - b).max())
    # the frozen-coefficient step differs at second order in delta
    assert diffs[1] / diffs[0] < 0.35


def test_lbfgs_agrees_with_newton():
    g, f, w = _torus(16)
    u0 = _smooth(g, 4)
    d = default_delta(f)
    a = mm_step(f, w, u0, SolverConfig(delta=d, inner_tol=1e-6))
    b = mm_step(f, w, u0, SolverConfig(delta=d, inner_tol=1e-6, inner_method="lbfgs", inner_max_iter=5000))
    assert np.abs(a - b).max() < 1e-6 * np.abs(u0).max()


def test_nonconvergence_raises_with_last_iterate():
    g, f, w = _torus(16)
    u0 = _smooth(g, 5)
    with pytest.raises(NonConvergenceError) as exc:
        mm_step(f, w, u0, SolverConfig(delta=1e-2, inner_tol=1e-12, inner_max_iter=1))
    assert exc.value.last is not None and exc.value.residual > 0


def test_step_plan():
    n, d, keep = step_plan(1.0, 0.3)
    assert n == 4 and d == pytest.approx(0.25) and keep == [0, 1, 2, 3, 4]
    n, d, keep = step_plan(1.0, 0.1, [0.5])
    assert keep == [0, 5, 10]
    with pytest.raises(ValueError):
        step_plan(0.0, 0.1)


def test_l2_identity_and_csv():
    g, f, w = _torus(16)
    u0 = _smooth(g, 6)
    traj = evolve(f, w, u0, 10 * default_delta(f), SolverConfig(delta=default_delta(f), inner_tol=1e-6))
    l2, e = traj.diagnostics["l2"], traj.diagnostics["energy"]
    # |u1|^2 - |u0|^2 = -4 delta E(u1) - |u1 - u0|^2 for an exact implicit step
    jumps = np.array([ops.inner(w, b - a, b - a) for a, b in zip(traj.states[:-1], traj.states[1:])])
    lhs = np.diff(l2**2)
    rhs = -4 * traj.delta * e[1:] - jumps
    assert np.all(np.abs(lhs - rhs) <= 1e-3 * np.abs(rhs))
    text = traj.to_csv().splitlines()
    assert text[0] == "t,mass,energy,l2,laplacian_l2,inner_iters,residual"
    assert len(text) == len(traj.times) + 1


def test_dirichlet_ground_state_matches_dense_eigensolve():
    g = Grid((64,), (1.0,), (0.0,))
    f = FinslerField(g, norms.euclidean(1))
    w = build_weight(g)
    rep = ground_state(f, w, "dirichlet_chi")
    ev = la.eigh(-np.diag(w.measure) @ _dense_laplacian(f, w), np.diag(w.measure), eigvals_only=True)
    assert rep.value == pytest.approx(ev[0], rel=1e-8)
    assert rep.value == pytest.approx(math.pi**2, rel=1e-3)


def test_ground_state_scaling():
    a = ground_state(FinslerField(Grid((48,), (1.0,), (0.0,)), norms.euclidean(1)), build_weight(Grid((48,), (1.0,), (0.0,))), "dirichlet_chi")
    g2 = Grid((48,), (2.0,), (0.0,))
    b = ground_state(FinslerField(g2, norms.euclidean(1)), build_weight(g2), "dirichlet_chi")
    assert b.value == pytest.approx(a.value / 4, rel=1e-8)


def test_gaussian_weight_spectral_gap():
    g = Grid((256,), (16.0,), (-8.0,))
    f = FinslerField(g, norms.euclidean(1))
    w = build_weight(g, gaussian_potential(1.0))
    rep = ground_state(f, w, "mean_zero_chi_bar")
    ev = la.eigh(-np.diag(w.measure) @ _dense_laplacian(f, w), np.diag(w.measure), eigvals_only=True)
    assert rep.value == pytest.approx(ev[1], rel=1e-6)
    assert 0.99 <= rep.value <= 1.05


def test_mean_zero_needs_compactness():
    g = Grid((16,), (1.0,), (0.0,))
    with pytest.raises(ValueError):
        ground_state(FinslerField(g, norms.euclidean(1)), build_weight(g), "mean_zero_chi_bar")


def test_contraction_rate_formula():
    assert contraction_rate(2, 0.5, 10.0) == pytest.approx(5.0)
    assert contraction_rate(1, 0.5, 10.0) == 0.0
    assert contraction_rate(math.inf, 0.5, 10.0) == 0.0


def test_dirichlet_decay_against_ground_state():
    g = Grid((48,), (1.0,), (0.0,))
    f = FinslerField(g, norms.euclidean(1))
    w = build_weight(g)
    chi = ground_state(f, w, "dirichlet_chi").value
    u0 = np.random.default_rng(7).normal(size=g.shape)
    cfg = SolverConfig(delta=2e-4, inner_tol=1e-8)
    ta = evolve(f, w, u0, 0.01, cfg)
    tb = evolve(f, w, np.zeros(g.shape), 0.01, cfg)
    rep = contraction_report(ta, tb, w, 2, 1.0, chi)
    assert rep.ratio <= 1.0 + 1e-12


def test_equal_data_reports_coincidence():
    g, f, w = _torus(8)
    u0 = _smooth(g, 8)
    cfg = SolverConfig(delta=1e-4)
    t = evolve(f, w, u0, 3e-4, cfg)
    rep = contraction_report(t, t, w, 2, 1.0, 1.0)
    assert rep.coincident and rep.ratio == 0.0


def test_davies_euclidean_and_swap_changes_distance():
    g = Grid((128,), (1.0,), (0.0,), "periodic")
    w = build_weight(g)
    x = g.centres()[..., 0]
    a = ((x >= 0.2) & (x <= 0.3)).astype(float)
    b = ((x >= 0.5) & (x <= 0.6)).astype(float)
    cfg = SolverConfig(delta=1e-4)
    rep = davies_check(FinslerField(g, norms.euclidean(1)), w, a, b, [0.01, 0.02], cfg)
    assert rep.certified()
    f2 = FinslerField(g, norms.two_slope_1d(1, 2))
    ab = davies_check(f2, w, a, b, [0.01], cfg)
    ba = davies_check(f2, w, b, a, [0.01], cfg)
    assert ab.distance != pytest.approx(ba.distance)
    assert ab.distance == pytest.approx(ba.distance_reverse)


def test_davies_large_time_is_cauchy_schwarz():
    g = Grid((64,), (1.0,), (0.0,), "periodic")
    w = build_weight(g)
    x = g.centres()[..., 0]
    a = ((x >= 0.1) & (x <= 0.2)).astype(float)
    b = ((x >= 0.6) & (x <= 0.7)).astype(float)
    rep = davies_check(FinslerField(g, norms.euclidean(1)), w, a, b, [2.0], SolverConfig(delta=0.05))
    assert rep.ratios[0] <= 1.0
