import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import trapezoid

from finsler_heat import norms
from finsler_heat.field import (
    FinslerField,
    Grid,
    GridError,
    build_finsler,
    build_grid,
    build_weight,
    cut_locus_mask,
    distance_field,
    field_from_bytes,
    field_to_bytes,
    gaussian_potential,
    graph_distance,
    load_field,
    save_field,
)


def test_unit_square_mass():
    g = build_grid({"shape": [64, 64]})
    assert build_weight(g).total_mass == pytest.approx(1.0, abs=1e-12)


def test_periodic_mass_is_length():
    g = Grid((50,), (3.5,), (0.0,), "periodic")
    assert build_weight(g).total_mass == pytest.approx(3.5, abs=1e-12)


def test_gaussian_weight_against_trapezoid():
    g = Grid((400,), (8.0,), (-4.0,))
    w = build_weight(g, gaussian_potential(1.0))
    fine = np.linspace(-4, 4, 20001)
    assert w.total_mass == pytest.approx(trapezoid(np.exp(-fine**2 / 2), fine), rel=1e-5)


def test_grid_validation():
    with pytest.raises(GridError):
        Grid((2,), (1.0,), (0.0,))
    with pytest.raises(GridError):
        Grid((8,), (-1.0,), (0.0,))
    with pytest.raises(GridError):
        Grid((8,), (1.0,), (0.0,), "neumann")
    with pytest.raises(GridError):
        build_grid({"lengths": [1.0]})


def test_centres_and_wrap():
    g = Grid((4,), (1.0,), (0.0,), "periodic")
    np.testing.assert_allclose(g.centres()[..., 0], [0.125, 0.375, 0.625, 0.875])
    np.testing.assert_allclose(g.wrap(np.array([0.9, -0.6])), [-0.1, 0.4])


def test_dimension_mismatch():
    with pytest.raises(GridError):
        FinslerField(Grid((8, 8), (1, 1), (0, 0)), norms.lp(4, 3))


def test_two_slope_distance_from_origin():
    g = Grid((21,), (2.1,), (-1.05,))
    f = FinslerField(g, norms.two_slope_1d(1, 2))
    x = g.centres()[..., 0]
    d = distance_field(f, (10,))
    np.testing.assert_allclose(d, np.where(x >= 0, x, 2 * np.abs(x)), atol=1e-14)


def test_to_z_is_from_z_of_reverse():
    g = Grid((16, 16), (1, 1), (0, 0), "periodic")
    n = norms.randers([[1.0, 0.0], [0.0, 1.0]], [0.4, 0.1])
    f = FinslerField(g, n)
    to = distance_field(f, (3, 5), "to_z")
    fr = distance_field(f, (3, 5), "from_z")
    assert np.abs(to - fr).max() > 1e-3
    np.testing.assert_allclose(to, distance_field(f.reversed(), (3, 5), "from_z"), atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.tuples(st.integers(0, 11), st.integers(0, 11)), st.tuples(st.integers(0, 11), st.integers(0, 11)), st.tuples(st.integers(0, 11), st.integers(0, 11)))
def test_triangle_inequality_and_positivity(a, b, c):
    g = Grid((12, 12), (1, 1), (0, 0), "periodic")
    f = FinslerField(g, norms.randers([[1.0, 0.2], [0.2, 1.5]], [0.3, -0.2]))
    da = distance_field(f, a)
    db = distance_field(f, b)
    assert da[a] == 0.0
    assert np.all(da >= 0)
    if b != a:
        assert da[b] > 0
    # d(a, c) <= d(a, b) + d(b, c)
    assert da[c] <= da[b] + db[c] + 1e-12


def test_graph_distance_approaches_exact_for_uniform_field():
    g = Grid((32, 32), (1, 1), (0, 0))
    f = FinslerField(g, norms.lp(4))
    exact = distance_field(f, (16, 16), method="exact")
    graph = graph_distance(f, (16, 16))
    assert np.all(graph >= exact - 1e-12)
    assert np.max(graph - exact) < 0.02


def test_varying_field_uses_graph():
    g = Grid((16, 16), (1, 1), (0, 0))
    sig = np.broadcast_to(np.eye(2), g.shape + (2, 2)).copy()
    sig[..., 0, 0] = 1.0 + g.centres()[..., 0]
    f = build_finsler(g, {"norm": norms.euclidean(2), "sigma": sig})
    d = distance_field(f, (0, 8))
    assert not f.uniform and d[(0, 8)] == 0.0 and np.all(np.isfinite(d))
    with pytest.raises(GridError):
        distance_field(f, (0, 8), method="exact")


def test_cut_locus_is_opposite_point():
    g = Grid((16,), (1.0,), (0.0,), "periodic")
    f = FinslerField(g, norms.euclidean(1))
    m = cut_locus_mask(f, (0,), width=1.0)
    assert m[8] and not m[0] and not m[4]


def test_outside_cell_rejected():
    g = Grid((8,), (1.0,), (0.0,))
    with pytest.raises(GridError):
        distance_field(FinslerField(g, norms.euclidean(1)), (9,))


@pytest.mark.parametrize("boundary", ["periodic", "dirichlet_zero"])
def test_field_round_trip(tmp_path, boundary):
    g = Grid((5, 7), (1.0, 2.0), (-0.5, 0.25), boundary)
    v = np.random.default_rng(0).normal(size=g.shape)
    path = tmp_path / "u.field"
    save_field(str(path), g, v)
    g2, v2 = load_field(str(path))
    assert g2 == g
    np.testing.assert_array_equal(v2, v)
    with pytest.raises(GridError):
        field_from_bytes(b"XXXX" + field_to_bytes(g, v)[4:])
