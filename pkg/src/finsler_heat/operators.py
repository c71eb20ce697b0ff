"""Discrete derivative, gradient, energy and Laplacians on a cell grid.

Differences live on cell faces: along axis i the face between c and c+e_i
carries (u(c+e_i) - u(c)) / h_i. An anisotropic norm needs all n components
at once, so each cell is split into 2^n corner sub-cells ("quadrants"). The
quadrant of c with sign vector s collects the n face differences of c that
point towards s, and carries measure m_c / 2^n. Every face therefore enters
the energy through the two quadrants that touch it, and the energy

    E(u) = sum_quadrants  w_q * F*(c, Du_q)^2 / 2

is a convex function of the cell values. The Laplacian is defined as
-(dE/du_c) / m_c, so integration by parts holds exactly. On Dirichlet grids
the zero ring sits on the box boundary, half a cell from the outer centres.

Covector and vector fields are arrays of shape ``(2**n,) + grid.shape + (n,)``.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .field import FinslerField, Grid, WeightField


def quadrant_signs(dim: int) -> np.ndarray:
    """Sign vectors of the 2^n quadrants, shape (2^n, n)."""
    return np.array(list(itertools.product((1, -1), repeat=dim)), int)


def quadrant_weights(weight: WeightField) -> np.ndarray:
    n = weight.grid.dim
    return np.broadcast_to(weight.measure / 2**n, (2**n,) + weight.grid.shape)


def _shift(a, k, axis):
    return np.roll(a, k, axis=axis)


def face_differences(grid: Grid, u: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Forward and backward differences per axis, both of grid shape.

    ``fwd[i][c]`` is the difference across the face c + e_i/2 and
    ``bwd[i][c]`` across c - e_i/2.
    """
    u = np.asarray(u, float)
    out = []
    for i, h in enumerate(grid.spacing):
        if grid.periodic:
            fwd = (_shift(u, -1, i) - u) / h
            bwd = (u - _shift(u, 1, i)) / h
        else:
            fwd = np.empty_like(u)
            bwd = np.empty_like(u)
            lo = [slice(None)] * grid.dim
            hi = [slice(None)] * grid.dim
            lo[i] = slice(None, -1)
            hi[i] = slice(1, None)
            lo, hi = tuple(lo), tuple(hi)
            inner = (u[hi] - u[lo]) / h
            fwd[lo] = inner
            bwd[hi] = inner
            last = [slice(None)] * grid.dim
            first = [slice(None)] * grid.dim
            last[i] = -1
            first[i] = 0
            fwd[tuple(last)] = -u[tuple(last)] / (0.5 * h)
            bwd[tuple(first)] = u[tuple(first)] / (0.5 * h)
        out.append((fwd, bwd))
    return out


def derivative(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Quadrant covectors Du, shape (2^n,) + grid.shape + (n,). Linear in u."""
    diffs = face_differences(grid, u)
    signs = quadrant_signs(grid.dim)
    du = np.empty((len(signs),) + grid.shape + (grid.dim,))
    for q, s in enumerate(signs):
        for i in range(grid.dim):
            du[q, ..., i] = diffs[i][0] if s[i] > 0 else diffs[i][1]
    return du


@functools.lru_cache(maxsize=16)
def derivative_matrix(grid: Grid) -> sp.csr_matrix:
    """Sparse matrix of ``derivative``: rows ordered as the flattened
    ``(2^n,) + shape + (n,)`` covector array, columns as flattened cells."""
    n = grid.dim
    size = grid.size
    idx = np.arange(size).reshape(grid.shape)
    signs = quadrant_signs(n)
    rows, cols, vals = [], [], []
    row_base = np.arange(2**n * size * n).reshape((2**n,) + grid.shape + (n,))
    for i, h in enumerate(grid.spacing):
        for direction in (1, -1):
            nb = np.roll(idx, -direction, axis=i)
            hh = np.full(grid.shape, h)
            valid = np.ones(grid.shape, bool)
            if not grid.periodic:
                edge = [slice(None)] * n
                edge[i] = -1 if direction > 0 else 0
                hh[tuple(edge)] = 0.5 * h
                valid[tuple(edge)] = False
            for q, s in enumerate(signs):
                if s[i] != direction:
                    continue
                r = row_base[q, ..., i]
                # forward: (u_nb - u_c)/h, backward: (u_c - u_nb)/h
                rows += [r.ravel(), r[valid]]
                cols += [idx.ravel(), nb[valid]]
                vals += [(-direction / hh).ravel(), (direction / hh)[valid]]
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(2**n * size * n, size))


def energy_hessian_matrix(weight: WeightField, coeff: np.ndarray) -> sp.csr_matrix:
    """Sparse D^T (w coeff) D, i.e. -m * div(coeff D .) as a matrix."""
    grid = weight.grid
    n = grid.dim
    d = derivative_matrix(grid)
    w = quadrant_weights(weight)
    blocks = (w[..., None, None] * coeff).reshape(-1, n, n)
    nb = blocks.shape[0]
    b = sp.bsr_matrix((blocks, np.arange(nb), np.arange(nb + 1)), shape=(nb * n, nb * n))
    return (d.T @ b.tocsr() @ d).tocsr()


def derivative_adjoint(grid: Grid, g: np.ndarray) -> np.ndarray:
    """Transpose of ``derivative`` (plain Euclidean sums, no measure)."""
    signs = quadrant_signs(grid.dim)
    r = np.zeros(grid.shape)
    for i, h in enumerate(grid.spacing):
        gp = g[signs[:, i] > 0, ..., i].sum(axis=0)
        gm = g[signs[:, i] < 0, ..., i].sum(axis=0)
        if grid.periodic:
            r += (_shift(gp, 1, i) - gp) / h
            r += (gm - _shift(gm, -1, i)) / h
            continue
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[i] = slice(None, -1)
        hi[i] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        last = [slice(None)] * grid.dim
        first = [slice(None)] * grid.dim
        last[i] = -1
        first[i] = 0
        last, first = tuple(last), tuple(first)
        # forward faces
        r[lo] -= gp[lo] / h
        r[hi] += gp[lo] / h
        r[last] -= gp[last] / (0.5 * h)
        # backward faces
        r[hi] += gm[hi] / h
        r[lo] -= gm[hi] / h
        r[first] += gm[first] / (0.5 * h)
    return r


def divergence(weight: WeightField, psi: np.ndarray) -> np.ndarray:
    """div psi with <u, div psi>_m = -<Du, psi>_m for every u."""
    w = quadrant_weights(weight)
    return -derivative_adjoint(weight.grid, w[..., None] * psi) / weight.measure


def pairing(weight: WeightField, alpha: np.ndarray, v: np.ndarray) -> float:
    """<alpha, v>_m = sum over quadrants of w_q alpha_q . v_q."""
    w = quadrant_weights(weight)
    return float(np.sum(w * np.einsum("...i,...i->...", alpha, v)))


def inner(weight: WeightField, u: np.ndarray, v: np.ndarray) -> float:
    return float(np.sum(weight.measure * u * v))


def gradient(field: FinslerField, u: np.ndarray) -> np.ndarray:
    """Gradient vectors J*(c, Du) on every quadrant."""
    return field.dual_covector(derivative(field.grid, u))


@dataclass(frozen=True)
class EnergyReport:
    energy: float
    density: np.ndarray | None = None


def energy(field: FinslerField, weight: WeightField, u: np.ndarray, density: bool = False) -> EnergyReport:
    """E(u) = 1/2 sum_q w_q F*(Du_q)^2; ``density`` returns per-cell contributions."""
    du = derivative(field.grid, u)
    per_q = 0.5 * quadrant_weights(weight) * field.dual_value(du) ** 2
    per_cell = per_q.sum(axis=0)
    return EnergyReport(float(per_cell.sum()), per_cell if density else None)


def energy_and_gradient(field: FinslerField, weight: WeightField, u: np.ndarray) -> tuple[float, np.ndarray]:
    """E(u) and its Euclidean gradient dE/du (= -m * Laplacian)."""
    du = derivative(field.grid, u)
    w = quadrant_weights(weight)
    e = 0.5 * float(np.sum(w * field.dual_value(du) ** 2))
    grad = derivative_adjoint(field.grid, w[..., None] * field.dual_covector(du))
    return e, grad


def laplacian(field: FinslerField, weight: WeightField, u: np.ndarray) -> np.ndarray:
    """Finsler Laplacian div(grad u) = -(dE/du) / m."""
    return divergence(weight, gradient(field, u))


def frozen_coefficients(field: FinslerField, u: np.ndarray, cap: float = 1e12) -> np.ndarray:
    """g*(Du) per quadrant, with g*(1, ..., 1) where Du vanishes.

    Non-finite entries (l^p with p > 2 has an unbounded dual Hessian where a
    component of Du vanishes) are clipped to ``cap``.
    """
    grid = field.grid
    du = derivative(grid, u)
    n = grid.dim
    scale = np.max(np.abs(du)) if du.size else 0.0
    zero = np.linalg.norm(du, axis=-1) <= 1e-14 * max(scale, 1e-300)
    safe = np.where(zero[..., None], 1.0, du)
    g = field.dual_hessian(safe)
    g = np.clip(np.nan_to_num(g, nan=0.0, posinf=cap, neginf=-cap), -cap, cap)
    if np.any(zero):
        # g* is 0-homogeneous; a diagonal direction keeps every l^p component nonzero
        ones = np.ones(grid.shape + (n,))
        fallback = np.clip(np.nan_to_num(field.dual_hessian(ones), nan=0.0, posinf=cap), -cap, cap)
        g = np.where(zero[..., None, None], np.broadcast_to(fallback, g.shape), g)
    return g


def apply_weighted(weight: WeightField, coeff: np.ndarray, w: np.ndarray) -> np.ndarray:
    """div(coeff Dw) for precomputed quadrant matrices ``coeff``."""
    dw = derivative(weight.grid, w)
    return divergence(weight, np.einsum("...ij,...j->...i", coeff, dw))


def weighted_laplacian(field: FinslerField, weight: WeightField, u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Linear operator w -> div(g*(Du) Dw) with coefficients frozen at u."""
    return apply_weighted(weight, frozen_coefficients(field, u), w)


def weighted_diagonal(weight: WeightField, coeff: np.ndarray) -> np.ndarray:
    """Diagonal of w -> -div(coeff Dw) * m, used as a Jacobi preconditioner."""
    return energy_hessian_matrix(weight, coeff).diagonal().reshape(weight.grid.shape)
