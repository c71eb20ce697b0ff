"""Grids, measure weights, cell-wise Finsler structures and distance fields."""

from __future__ import annotations

import csv
import io
import itertools
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from . import norms
from .norms import ConvexityConstants, MinkowskiNorm

BOUNDARIES = ("dirichlet_zero", "periodic")


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Cell-centred tensor grid on the box prod [lower_i, lower_i + length_i].

    Dirichlet grids carry an implicit ring of zeros on the box boundary, half
    a cell away from the outermost centres. Periodic grids wrap around.
    """

    shape: tuple[int, ...]
    lengths: tuple[float, ...]
    lower: tuple[float, ...]
    boundary: str = "dirichlet_zero"

    def __post_init__(self):
        if not 1 <= len(self.shape) <= 3:
            raise GridError("grid dimension must be 1, 2 or 3")
        if len(self.lengths) != len(self.shape) or len(self.lower) != len(self.shape):
            raise GridError("shape, lengths and lower must have equal length")
        if any(int(s) < 3 for s in self.shape):
            raise GridError("at least 3 cells per axis are required")
        if any(not (float(L) > 0 and math.isfinite(L)) for L in self.lengths):
            raise GridError("axis lengths must be positive")
        if self.boundary not in BOUNDARIES:
            raise GridError(f"boundary must be one of {BOUNDARIES}")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def spacing(self) -> np.ndarray:
        return np.array(self.lengths, float) / np.array(self.shape, float)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axis_centres(self, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        return self.lower[axis] + (np.arange(self.shape[axis]) + 0.5) * h

    def centres(self) -> np.ndarray:
        """Cell centres, shape ``shape + (dim,)``."""
        axes = [self.axis_centres(i) for i in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def centre(self, cell: Sequence[int]) -> np.ndarray:
        return np.array([self.axis_centres(i)[c] for i, c in enumerate(cell)])

    def nearest_cell(self, point: Sequence[float]) -> tuple[int, ...]:
        idx = np.floor((np.asarray(point, float) - self.lower) / self.spacing).astype(int)
        return tuple(int(np.clip(i, 0, s - 1)) for i, s in zip(idx, self.shape))

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(tuple(s * factor for s in self.shape), self.lengths, self.lower, self.boundary)

    def wrap(self, dx: np.ndarray) -> np.ndarray:
        """Reduce displacement vectors to the fundamental cell [-L/2, L/2)."""
        if not self.periodic:
            return dx
        L = np.array(self.lengths)
        return dx - L * np.floor(dx / L + 0.5)

    def to_dict(self) -> dict:
        return {
            "shape": list(self.shape),
            "lengths": list(self.lengths),
            "lower": list(self.lower),
            "boundary": self.boundary,
        }


def build_grid(spec: dict) -> Grid:
    """Grid from a dict with ``shape`` and ``lengths`` (``lower`` defaults to 0)."""
    try:
        shape = tuple(int(s) for s in spec["shape"])
        lengths = spec.get("lengths", [1.0] * len(shape))
        if np.isscalar(lengths):
            lengths = [lengths] * len(shape)
        lengths = tuple(float(L) for L in lengths)
        lower = spec.get("lower", [0.0] * len(shape))
        if np.isscalar(lower):
            lower = [lower] * len(shape)
        lower = tuple(float(a) for a in lower)
    except KeyError as exc:
        raise GridError(f"grid spec missing {exc.args[0]!r}") from None
    return Grid(shape, lengths, lower, spec.get("boundary", "dirichlet_zero"))


@dataclass(frozen=True)
class WeightField:
    """Measure m = exp(-V) dx; ``measure`` holds the per-cell masses."""

    grid: Grid
    potential: np.ndarray
    measure: np.ndarray = dc_field(repr=False)

    @property
    def total_mass(self) -> float:
        return float(self.measure.sum())


def build_weight(grid: Grid, potential=None) -> WeightField:
    """``potential`` may be None (Lebesgue), an array, or a callable of the centres."""
    if potential is None:
        v = np.zeros(grid.shape)
    elif callable(potential):
        v = np.asarray(potential(grid.centres()), float)
    else:
        v = np.asarray(potential, float)
    v = np.broadcast_to(v, grid.shape).copy()
    if not np.all(np.isfinite(v)):
        raise GridError("weight potential must be finite on the grid")
    measure = np.exp(-v) * grid.cell_volume
    return WeightField(grid, v, measure)


def gaussian_potential(k: float) -> Callable[[np.ndarray], np.ndarray]:
    """V(x) = k |x|^2 / 2."""
    return lambda x: 0.5 * k * np.sum(x * x, axis=-1)


# ---------------------------------------------------------------------------
# Finsler structure


def _apply(mat, x):
    return np.einsum("...ij,...j->...i", mat, x)


class FinslerField:
    """Norm per cell: either one norm everywhere or F(c, xi) = F0(sigma(c) xi).

    Batched methods accept arrays whose trailing axes are ``grid.shape + (n,)``
    (any extra leading axes broadcast against the per-cell matrices).
    """

    def __init__(self, grid: Grid, norm: MinkowskiNorm, sigma: np.ndarray | None = None):
        if norm.dim != grid.dim:
            raise GridError(f"norm dimension {norm.dim} != grid dimension {grid.dim}")
        self.grid = grid
        self.norm = norm
        self.sigma = None
        self._constants: ConvexityConstants | None = None
        if sigma is not None:
            sigma = np.asarray(sigma, float)
            if sigma.shape != grid.shape + (grid.dim, grid.dim):
                raise GridError("sigma must have shape grid.shape + (n, n)")
            det = np.linalg.det(sigma)
            if np.any(np.abs(det) < 1e-12):
                raise GridError("sigma is not invertible at some cell")
            self.sigma = sigma
            self.sigma_inv = np.linalg.inv(sigma)

    @property
    def uniform(self) -> bool:
        return self.sigma is None

    # primal side
    def value(self, xi):
        if self.uniform:
            return self.norm.value(xi)
        return self.norm.value(_apply(self.sigma, xi))

    def covector(self, xi):
        if self.uniform:
            return self.norm.covector(xi)
        j0 = self.norm.covector(_apply(self.sigma, xi))
        return _apply(np.swapaxes(self.sigma, -1, -2), j0)

    def hessian(self, xi):
        if self.uniform:
            return self.norm.hessian(xi)
        g0 = self.norm.hessian(_apply(self.sigma, xi))
        return np.swapaxes(self.sigma, -1, -2) @ g0 @ self.sigma

    # dual side
    def dual_value(self, alpha):
        if self.uniform:
            return self.norm.dual_value(alpha)
        return self.norm.dual_value(_apply(np.swapaxes(self.sigma_inv, -1, -2), alpha))

    def dual_covector(self, alpha):
        if self.uniform:
            return self.norm.dual_covector(alpha)
        j0 = self.norm.dual_covector(_apply(np.swapaxes(self.sigma_inv, -1, -2), alpha))
        return _apply(self.sigma_inv, j0)

    def dual_hessian(self, alpha):
        if self.uniform:
            return self.norm.dual_hessian(alpha)
        g0 = self.norm.dual_hessian(_apply(np.swapaxes(self.sigma_inv, -1, -2), alpha))
        return self.sigma_inv @ g0 @ np.swapaxes(self.sigma_inv, -1, -2)

    def reversed(self) -> "FinslerField":
        return FinslerField(self.grid, norms.reverse(self.norm), self.sigma)

    def constants(self, sample_budget: int = 4096, seed: int = 0) -> ConvexityConstants:
        """Field-level constants: the minimum over cells of per-cell constants.

        kappa and kappa* are invariant under the linear change sigma, so they
        are those of the base norm; lambda and lambda* are scanned per cell.
        """
        if self._constants is not None and self._constants.seed == seed:
            return self._constants
        base = norms.convexity_constants(self.norm, sample_budget, seed)
        if self.uniform:
            c = base
        else:
            eta = norms.sphere_samples(self.grid.dim, 64, seed)
            gs = self.norm.hessian(eta)
            gs = np.where(np.isfinite(gs), gs, 1e300)
            # g(c, xi) = sigma^T g0(sigma xi) sigma; sigma xi ranges over all directions
            mats = np.einsum("...ki,skl,...lj->...sij", self.sigma, gs, self.sigma)
            eig = np.linalg.eigvalsh(mats)
            c = ConvexityConstants(
                kappa=base.kappa,
                kappa_star=base.kappa_star,
                lambda_=float(1.0 / eig.max()),
                lambda_star=float(max(eig.min(), 0.0)),
                sample_budget=base.sample_budget,
                seed=seed,
                kappa_degenerate=base.kappa_degenerate,
                kappa_star_degenerate=base.kappa_star_degenerate,
            )
        self._constants = c
        return c


def build_finsler(grid: Grid, spec) -> FinslerField:
    """FinslerField from a norm, a norm dict, or {"norm": ..., "sigma": callable|array}."""
    if isinstance(spec, MinkowskiNorm):
        return FinslerField(grid, spec)
    if isinstance(spec, dict) and "norm" in spec:
        base = spec["norm"]
        base = base if isinstance(base, MinkowskiNorm) else norms.norm_from_dict(base)
        sigma = spec.get("sigma")
        if callable(sigma):
            sigma = sigma(grid.centres())
        return FinslerField(grid, base, sigma)
    return FinslerField(grid, norms.norm_from_dict(spec))


# ---------------------------------------------------------------------------
# distances


def _lattice_shifts(grid: Grid, reach: int = 2) -> np.ndarray:
    if not grid.periodic:
        return np.zeros((1, grid.dim))
    rng = range(-reach, reach + 1)
    k = np.array(list(itertools.product(rng, repeat=grid.dim)), float)
    return k * np.array(grid.lengths)


def translate_distances(grid: Grid, norm: MinkowskiNorm, z: Sequence[int], direction: str) -> np.ndarray:
    """F(x - z + shift) (from_z) or F(z - x - shift) (to_z) for every lattice shift.

    Returns an array of shape ``(shifts,) + grid.shape``.
    """
    x = grid.centres()
    dz = x - grid.centre(z)
    shifts = _lattice_shifts(grid)
    disp = dz[None] + shifts.reshape((-1,) + (1,) * grid.dim + (grid.dim,))
    if direction == "to_z":
        disp = -disp
    elif direction != "from_z":
        raise ValueError("direction must be 'from_z' or 'to_z'")
    return norm.value(disp)


def stencil(dim: int, reach: int | None = None) -> np.ndarray:
    """Primitive integer offsets with entries bounded by ``reach``.

    Defaults: 2 neighbours in 1D, 32 in 2D (reach 3), 98 in 3D (reach 2).
    """
    if reach is None:
        reach = {1: 1, 2: 3, 3: 2}[dim]
    out = []
    for k in itertools.product(range(-reach, reach + 1), repeat=dim):
        if any(k) and math.gcd(*[abs(v) for v in k]) == 1:
            out.append(k)
    return np.array(out, int)


def graph_distance(field: FinslerField, z: Sequence[int], direction: str = "from_z", reach: int | None = None) -> np.ndarray:
    """Shortest paths on a wide stencil with trapezoid edge costs.

    Edge c -> c+k costs (F(c, k h) + F(c+k, k h)) / 2. ``to_z`` runs the same
    search on the transposed graph.
    """
    grid = field.grid
    offsets = stencil(grid.dim, reach)
    idx = np.arange(grid.size).reshape(grid.shape)
    rows, cols, costs = [], [], []
    coords = np.stack(np.meshgrid(*[np.arange(s) for s in grid.shape], indexing="ij"), -1)
    h = grid.spacing
    for k in offsets:
        step = np.broadcast_to(k * h, grid.shape + (grid.dim,))
        f_here = field.value(step)
        tgt = coords + k
        if grid.periodic:
            tgt = tgt % np.array(grid.shape)
            ok = np.ones(grid.shape, bool)
        else:
            ok = np.all((tgt >= 0) & (tgt < np.array(grid.shape)), axis=-1)
            tgt = np.clip(tgt, 0, np.array(grid.shape) - 1)
        t_idx = idx[tuple(np.moveaxis(tgt, -1, 0))]
        f_there = f_here[tuple(np.moveaxis(tgt, -1, 0))]
        w = 0.5 * (f_here + f_there)
        rows.append(idx[ok])
        cols.append(t_idx[ok])
        costs.append(w[ok])
    mat = coo_matrix(
        (np.concatenate(costs), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.size, grid.size),
    ).tocsr()
    src = int(np.ravel_multi_index(tuple(z), grid.shape))
    if direction == "to_z":
        mat = mat.T.tocsr()
    elif direction != "from_z":
        raise ValueError("direction must be 'from_z' or 'to_z'")
    d = dijkstra(mat, directed=True, indices=src)
    return d.reshape(grid.shape)


def distance_field(field: FinslerField, z: Sequence[int], direction: str = "from_z", method: str = "auto") -> np.ndarray:
    """x -> d(z, x) (from_z) or x -> d(x, z) (to_z).

    Uniform fields use the exact Minkowski distance (minimised over lattice
    translates on periodic grids); varying fields use ``graph_distance``.
    """
    z = tuple(int(i) for i in z)
    if any(not 0 <= i < s for i, s in zip(z, field.grid.shape)):
        raise GridError(f"cell {z} is outside the grid")
    if method == "auto":
        method = "exact" if field.uniform else "graph"
    if method == "exact":
        if not field.uniform:
            raise GridError("exact distances need a uniform field")
        return translate_distances(field.grid, field.norm, z, direction).min(axis=0)
    return graph_distance(field, z, direction)


def cut_locus_mask(field: FinslerField, z: Sequence[int], direction: str = "to_z", width: float = 1.0) -> np.ndarray:
    """Cells where two lattice translates give distances within ``width`` cells of each other."""
    grid = field.grid
    if not grid.periodic:
        return np.zeros(grid.shape, bool)
    d = np.sort(translate_distances(grid, field.norm, z, direction), axis=0)
    scale = float(np.max(field.norm.value(np.diag(grid.spacing))))
    return (d[1] - d[0]) < width * scale


# ---------------------------------------------------------------------------
# serialisation

_MAGIC = b"FHF1"


def _atomic_write(path: str, data: bytes, mode: str = "wb") -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def field_to_bytes(grid: Grid, values: np.ndarray) -> bytes:
    """Header (magic, ndim, counts, lengths, lower, spacing, boundary) + float64 data."""
    values = np.asarray(values, "<f8")
    if values.shape != grid.shape:
        raise GridError("values do not match grid")
    n = grid.dim
    head = _MAGIC + struct.pack("<i", n)
    head += struct.pack(f"<{n}i", *grid.shape)
    head += struct.pack(f"<{n}d", *grid.lengths)
    head += struct.pack(f"<{n}d", *grid.lower)
    head += struct.pack(f"<{n}d", *grid.spacing)
    head += struct.pack("<i", BOUNDARIES.index(grid.boundary))
    return head + np.ascontiguousarray(values).tobytes(order="C")


def field_from_bytes(data: bytes) -> tuple[Grid, np.ndarray]:
    if data[:4] != _MAGIC:
        raise GridError("not a field file")
    off = 4
    (n,) = struct.unpack_from("<i", data, off)
    off += 4
    shape = struct.unpack_from(f"<{n}i", data, off)
    off += 4 * n
    lengths = struct.unpack_from(f"<{n}d", data, off)
    off += 8 * n
    lower = struct.unpack_from(f"<{n}d", data, off)
    off += 16 * n  # lower + spacing (spacing is derived)
    (flag,) = struct.unpack_from("<i", data, off)
    off += 4
    grid = Grid(tuple(shape), tuple(lengths), tuple(lower), BOUNDARIES[flag])
    vals = np.frombuffer(data, "<f8", count=grid.size, offset=off).reshape(grid.shape).copy()
    return grid, vals


def save_field(path: str, grid: Grid, values: np.ndarray) -> None:
    _atomic_write(path, field_to_bytes(grid, values))


def load_field(path: str) -> tuple[Grid, np.ndarray]:
    with open(path, "rb") as fh:
        return field_from_bytes(fh.read())


def field_to_csv(grid: Grid, values: np.ndarray) -> str:
    """One row per cell: index columns, centre coordinates, value."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = grid.dim
    w.writerow([f"i{k}" for k in range(n)] + [f"x{k}" for k in range(n)] + ["value"])
    x = grid.centres()
    for idx in np.ndindex(*grid.shape):
        w.writerow(list(idx) + [repr(float(v)) for v in x[idx]] + [repr(float(values[idx]))])
    return buf.getvalue()
