"""Reference solutions and one-sided comparison certificates.

Radial model equations with curvature bound K and dimension bound N, exact
Gaussians of Minkowski norms, subsolution residuals, Laplacian comparison
for distance functions, Cheeger-Yau lower bounds and heat-kernel bounds.
Every certificate is a one-sided inequality with an explicit slack.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from . import operators as ops
from .field import FinslerField, Grid, WeightField, build_weight, cut_locus_mask, distance_field
from .flow import SolverConfig, evolve
from .norms import MinkowskiNorm, sphere_samples


class ResolutionError(ValueError):
    """Requested scale is not resolved by the grid."""


@dataclass(frozen=True)
class ModelParams:
    K: float = 0.0
    N: float = 2.0

    def __post_init__(self):
        if not self.N >= 1:
            raise ValueError("N must be >= 1")
        if self.N == 1 and self.K != 0:
            raise ValueError("N = 1 only allows K = 0")

    @property
    def L(self) -> float:
        if self.K > 0:
            return math.pi * math.sqrt((self.N - 1) / self.K)
        return math.inf

    def to_dict(self):
        return {"K": self.K, "N": "inf" if math.isinf(self.N) else self.N, "L": "inf" if math.isinf(self.L) else self.L}


def model_coefficient(params: ModelParams, r) -> np.ndarray:
    """Drift of the radial model operator d^2/dr^2 + c(r) d/dr."""
    r = np.asarray(r, float)
    if np.any(r <= 0) or np.any(r >= params.L):
        raise ValueError("r must lie in (0, L)")
    K, N = params.K, params.N
    if math.isinf(N):
        raise ValueError("the model coefficient needs a finite N")
    if K == 0:
        return (N - 1) / r
    if K < 0:
        s = math.sqrt(-K / (N - 1))
        return math.sqrt(-(N - 1) * K) / np.tanh(s * r)
    s = math.sqrt(K / (N - 1))
    return math.sqrt((N - 1) * K) / np.tan(s * r)


def model_density(params: ModelParams, r) -> np.ndarray:
    """omega(r) with omega'/omega = model_coefficient, normalised so omega ~ r^(N-1) at 0."""
    r = np.asarray(r, float)
    K, N = params.K, params.N
    if K == 0:
        return r ** (N - 1)
    s = math.sqrt(abs(K) / (N - 1))
    base = np.sinh(s * r) / s if K < 0 else np.sin(s * r) / s
    return np.maximum(base, 0.0) ** (N - 1)


# ---------------------------------------------------------------------------
# Minkowski Gaussians


def exact_gaussian(norm: MinkowskiNorm, y, t: float, x, profile: Callable | None = None, mirrored: bool = False) -> np.ndarray:
    """t^(-n/2) exp(-|y - x|^2 / 4t), or ``profile(t, |y - x|)``.

    ``mirrored`` uses |x - y| instead, the form that pairs with profiles
    increasing in r.
    """
    if not t > 0:
        raise ValueError("t must be > 0")
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    r = norm.value(x - y) if mirrored else norm.value(y - x)
    if profile is not None:
        return profile(t, r)
    return t ** (-norm.dim / 2) * np.exp(-(r**2) / (4 * t))


def interior_mask(grid: Grid, z, exclude: float, margin: int = 2) -> np.ndarray:
    """Cells at sup-distance >= ``exclude`` cells from z and ``margin`` cells from the walls."""
    idx = np.stack(np.meshgrid(*[np.arange(s) for s in grid.shape], indexing="ij"), -1)
    off = np.abs(idx - np.array(z))
    if grid.periodic:
        off = np.minimum(off, np.array(grid.shape) - off)
    mask = off.max(axis=-1) >= exclude
    if not grid.periodic and margin > 0:
        for i, s in enumerate(grid.shape):
            mask &= (idx[..., i] >= margin) & (idx[..., i] < s - margin)
    return mask


@dataclass
class Report:
    check: str
    params: dict
    slack: float
    certified: bool
    refinement: list = dc_field(default_factory=list)
    details: dict = dc_field(default_factory=dict)

    def to_dict(self):
        return {
            "check": self.check,
            "params": self.params,
            "slack": self.slack,
            "certified": self.certified,
            "refinement": self.refinement,
            "details": self.details,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def refine_check(run: Callable[[int], Report], levels, factor: float = 0.6) -> Report:
    """Run ``run(level)`` per level; certified iff every level certifies and
    each slack is at most ``factor`` times the previous one."""
    reps = [run(n) for n in levels]
    last = reps[-1]
    rows = [{"level": n, "slack": r.slack, "certified": r.certified} for n, r in zip(levels, reps)]
    shrink = [reps[i + 1].slack / reps[i].slack if reps[i].slack > 0 else 0.0 for i in range(len(reps) - 1)]
    ok = all(r.certified for r in reps) and all(s <= factor for s in shrink)
    details = dict(last.details)
    details["shrink"] = shrink
    return Report(last.check, last.params, last.slack, ok, rows, details)


def gaussian_residual(field: FinslerField, weight: WeightField, y_cell, t: float, mirrored: bool = False, exclude: float = 2.0, tau: float = 1e-4) -> dict:
    """Discrete (d/dt - Lap) applied to the exact Gaussian, relative to its peak.

    The time derivative is a central difference with step ``tau * t``.
    """
    grid = field.grid
    x = grid.centres()
    y = grid.centre(y_cell)
    dt = tau * t

    def u(s):
        return exact_gaussian(field.norm, y, s, x, mirrored=mirrored)

    res = (u(t + dt) - u(t - dt)) / (2 * dt) - ops.laplacian(field, weight, u(t))
    mask = interior_mask(grid, y_cell, exclude)
    peak = t ** (-grid.dim / 2)
    a = np.abs(res[mask]) / peak
    return {"max": float(a.max()), "mean": float(a.mean()), "residual": res, "mask": mask}


def gaussian_refinement(norm: MinkowskiNorm, levels=(64, 128), t: float = 0.02, half_width: float = 1.0, mirrored: bool = False, exclude_radius: float | None = None) -> Report:
    """Residual of the exact Gaussian on a sequence of square grids.

    The excluded ball around y has a fixed physical radius (two coarse cells
    by default) so every level is measured on the same region. Reports the
    observed orders of the max and mean residuals.
    """
    n = norm.dim
    L = 2 * half_width
    if exclude_radius is None:
        exclude_radius = 2 * L / levels[0]
    rows = []
    for N in levels:
        grid = Grid((N,) * n, (L,) * n, (-half_width,) * n)
        field = FinslerField(grid, norm)
        weight = build_weight(grid)
        yc = (N // 2,) * n
        h = L / N
        r = gaussian_residual(field, weight, yc, t, mirrored=mirrored, exclude=exclude_radius / h)
        rows.append({"level": N, "max": r["max"], "mean": r["mean"]})
    order = [math.log2(rows[i]["max"] / rows[i + 1]["max"]) for i in range(len(rows) - 1)]
    order_mean = [math.log2(rows[i]["mean"] / rows[i + 1]["mean"]) for i in range(len(rows) - 1)]
    ok = all(o >= 1.0 for o in order)
    return Report(
        "gaussian_residual",
        {"norm": norm.to_dict(), "t": t, "mirrored": mirrored, "levels": list(levels)},
        rows[-1]["max"],
        ok,
        rows,
        {"order_max": order, "order_mean": order_mean},
    )


def radial_identity(field: FinslerField, weight: WeightField, y_cell, exclude: float = 3.0) -> dict:
    """Relative error of Lap(|x - y|^2) against 2n away from y."""
    grid = field.grid
    x = grid.centres()
    u = field.norm.value(x - grid.centre(y_cell)) ** 2
    lap = ops.laplacian(field, weight, u)
    mask = interior_mask(grid, y_cell, exclude)
    err = np.abs(lap[mask] - 2 * grid.dim) / (2 * grid.dim)
    return {"max": float(err.max()), "mean": float(err.mean())}


# ---------------------------------------------------------------------------
# radial model


@dataclass
class RadialProfile:
    params: ModelParams
    r: np.ndarray
    times: np.ndarray
    values: np.ndarray  # (len(times), len(r))
    radius: float

    def at(self, t: float, d) -> np.ndarray:
        """h(t, d) by linear interpolation; zero beyond the absorbing radius."""
        k = int(np.argmin(np.abs(self.times - t)))
        v = self.values[k]
        d = np.asarray(d, float)
        out = np.interp(d, self.r, v, left=v[0], right=0.0)
        return np.where(d >= self.radius, 0.0, out)

    def derivative_sign_ok(self, tol: float = 1e-12) -> bool:
        scale = np.abs(self.values).max() or 1.0
        return bool(np.all(np.diff(self.values, axis=1) <= tol * scale))

    def to_csv(self) -> str:
        head = "r," + ",".join(f"t={float(t)!r}" for t in self.times)
        rows = [head]
        for i, r in enumerate(self.r):
            rows.append(",".join([repr(float(r))] + [repr(float(v)) for v in self.values[:, i]]))
        return "\n".join(rows) + "\n"


def _radial_operator(params: ModelParams, radius: float, nr: int):
    """Finite-volume (1/omega)(omega h')' on cells of [0, R], zero at R.

    Returns (centres, lower, diag, upper) of the tridiagonal matrix.
    """
    hr = radius / nr
    faces = np.linspace(0.0, radius, nr + 1)
    r = 0.5 * (faces[:-1] + faces[1:])
    wf = model_density(params, faces)
    if params.K == 0:
        vol = (faces[1:] ** params.N - faces[:-1] ** params.N) / params.N
    else:
        # Simpson on each cell
        vol = hr / 6 * (model_density(params, faces[:-1]) + 4 * model_density(params, r) + model_density(params, faces[1:]))
    flux = wf / hr
    lower = np.zeros(nr)
    upper = np.zeros(nr)
    diag = np.zeros(nr)
    # face i+1 couples cells i and i+1; face 0 (r = 0) carries no flux
    diag[:-1] -= flux[1:-1]
    upper[:-1] += flux[1:-1]
    diag[1:] -= flux[1:-1]
    lower[1:] += flux[1:-1]
    # absorbing wall at R, half a cell from the last centre
    diag[-1] -= wf[-1] / (0.5 * hr)
    return r, lower / vol, diag / vol, upper / vol


def solve_radial(params: ModelParams, h0, T: float, radius: float, nr: int = 2000, dt: float | None = None, record_times=None, theta: float = 0.5) -> RadialProfile:
    """Radial model equation d_t h = h'' + c(r) h' on [0, R].

    Neumann at r = 0 (no flux through the origin), h = 0 at r = R. Time
    stepping is the theta scheme (Crank-Nicolson by default) with two
    implicit start-up steps to damp rough data.
    """
    if radius >= params.L:
        raise ValueError("radius must be below the model diameter L")
    if not T > 0:
        raise ValueError("T must be > 0")
    r, lo, di, up = _radial_operator(params, radius, nr)
    hr = radius / nr
    if params.K > 0 and params.L - radius < 4 * hr:
        raise ResolutionError("coefficient blows up near L; refine or shrink the radius")
    h = np.asarray(h0(r) if callable(h0) else h0, float).copy()
    if dt is None:
        dt = min(hr, T / 50)
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    dt = T / n
    rec = [0.0, T] if record_times is None else sorted({0.0, T} | {float(t) for t in record_times})
    rec_steps = {int(round(t / dt)): t for t in rec}
    times, values = [], []
    if 0 in rec_steps:
        times.append(0.0)
        values.append(h.copy())

    def banded(th):
        ab = np.zeros((3, len(r)))
        ab[0, 1:] = -th * dt * up[:-1]
        ab[1] = 1 - th * dt * di
        ab[2, :-1] = -th * dt * lo[1:]
        return ab

    def apply(v):
        out = di * v
        out[:-1] += up[:-1] * v[1:]
        out[1:] += lo[1:] * v[:-1]
        return out

    ab_theta = banded(theta)
    ab_impl = banded(1.0)
    for k in range(1, n + 1):
        if k <= 2 or theta == 1.0:
            h = solve_banded((1, 1), ab_impl, h)
        else:
            h = solve_banded((1, 1), ab_theta, h + (1 - theta) * dt * apply(h))
        if k in rec_steps:
            times.append(rec_steps[k])
            values.append(h.copy())
    return RadialProfile(params, r, np.array(times), np.array(values), radius)


def model_kernel(params: ModelParams, t: float, r, n: int | None = None, nr: int = 4000) -> np.ndarray:
    """p^{K,n}_t(r), normalised so that int p n c_n omega(r) dr = 1."""
    if not t > 0:
        raise ValueError("t must be > 0")
    n = int(params.N) if n is None else n
    r = np.asarray(r, float)
    if params.K == 0:
        return (4 * math.pi * t) ** (-n / 2) * np.exp(-(r**2) / (4 * t))
    # start from the flat kernel at a small time and run the model equation
    t0 = min(t / 20, 1e-3)
    radius = min(params.L * 0.999, 12 * math.sqrt(t) + 1.0)
    prof = solve_radial(params, lambda s: (4 * math.pi * t0) ** (-n / 2) * np.exp(-(s**2) / (4 * t0)), t - t0, radius, nr=nr, dt=(t - t0) / 400)
    rr = prof.r
    mass = np.sum(prof.values[-1] * n * unit_ball_volume(n) * model_density(params, rr)) * (rr[1] - rr[0])
    return prof.at(t - t0, r) / mass


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def backward_ball_ratio(norm: MinkowskiNorm, count: int = 20000, seed: int = 0) -> float:
    """rho = vol{x : F(-x) < 1} / c_n for a Minkowski norm with Lebesgue measure."""
    n = norm.dim
    if n == 1:
        return float((1 / norm.value(np.array([[-1.0]]))[0] + 1 / norm.value(np.array([[1.0]]))[0]) / 2)
    theta = sphere_samples(n, count, seed)
    # vol = (1/n) * int_{S} F(-theta)^(-n) dtheta
    area = n * unit_ball_volume(n)
    vol = area / n * float(np.mean(norm.value(-theta) ** (-n)))
    return vol / unit_ball_volume(n)


# ---------------------------------------------------------------------------
# subsolutions and comparison


def example_flat(N: float) -> Callable:
    """u(t, d) = t^(-N/2) exp(-d^2 / 4t); a subsolution when N-Ric >= 0."""
    return lambda t, d: t ** (-N / 2) * np.exp(-(d**2) / (4 * t))


def example_hyperbolic() -> Callable:
    """u(t, d) = t^(-3/2) d / sinh(d) exp(-t - d^2/4t); a subsolution when 3-Ric >= -2."""

    def f(t, d):
        d = np.asarray(d, float)
        ratio = np.where(d > 1e-8, d / np.sinh(np.maximum(d, 1e-8)), 1.0)
        return t ** (-1.5) * ratio * np.exp(-t - d**2 / (4 * t))

    return f


def subsolution_residual(field: FinslerField, weight: WeightField, candidate: Callable, params: ModelParams, z, times, tolerance: float = 1e-3, exclude: float = 2.0, tau: float = 1e-4) -> Report:
    """max of (d/dt - Lap) u over interior cells, u(t, x) = candidate(t, d(x, z)),
    relative to the peak of u at each time. Certified if <= ``tolerance``."""
    grid = field.grid
    d = distance_field(field, z, "to_z")
    mask = interior_mask(grid, z, exclude)
    if grid.periodic:
        mask &= ~cut_locus_mask(field, z, "to_z", width=2.0)
    worst = -np.inf
    per_time = []
    for t in times:
        dt = tau * t
        u = candidate(t, d)
        res = (candidate(t + dt, d) - candidate(t - dt, d)) / (2 * dt) - ops.laplacian(field, weight, u)
        peak = float(np.abs(u).max())
        val = float(res[mask].max()) / peak
        per_time.append({"t": t, "max_residual": val})
        worst = max(worst, val)
    return Report(
        "subsolution",
        {"params": params.to_dict(), "times": list(times), "tolerance": tolerance, "norm": field.norm.to_dict()},
        max(worst, 0.0),
        worst <= tolerance,
        [],
        {"per_time": per_time, "max_residual": worst},
    )


def laplacian_comparison_check(field: FinslerField, weight: WeightField, z, params: ModelParams, exclude: float = 3.0, tolerance: float = 0.05) -> Report:
    """Lap d(z, .) <= (N - 1)/d away from z.

    The slack is max over cells of d * (Lap d - (N-1)/d), i.e. the excess in
    units of the model value at distance d (scale-free).
    """
    grid = field.grid
    d = distance_field(field, z, "from_z")
    lap = ops.laplacian(field, weight, d)
    mask = interior_mask(grid, z, exclude)
    if grid.periodic:
        mask &= ~cut_locus_mask(field, z, "from_z", width=2.0)
    excess = d[mask] * lap[mask] - (params.N - 1)
    slack = max(float(excess.max()), 0.0)
    return Report(
        "laplacian_comparison",
        {"params": params.to_dict(), "norm": field.norm.to_dict(), "shape": list(grid.shape)},
        slack,
        slack <= tolerance,
        [],
        {"max_excess": float(excess.max())},
    )


def cheeger_yau_check(field: FinslerField, weight: WeightField, z, params: ModelParams, h0: Callable, T: float, config: SolverConfig, record_times=None, tolerance: float = 0.02, radial_cells: int = 4000) -> Report:
    """u(t, x) >= h(t, d(x, z)) - slack with u0 = h0(d(., z)).

    Slack is the largest shortfall relative to the peak of h0, over the
    recorded times and all cells off the cut locus.
    """
    grid = field.grid
    if record_times is None:
        record_times = list(np.linspace(T / 5, T, 5))
    d = distance_field(field, z, "to_z")
    u0 = h0(d)
    traj = evolve(field, weight, u0, T, config, record_times=record_times)
    radius = 2.0 * float(d.max()) + 1.0
    if params.K > 0:
        radius = min(radius, 0.99 * params.L)
    prof = solve_radial(params, h0, T, radius, nr=radial_cells, record_times=[traj.state_times[traj.state_times.searchsorted(t - 1e-12)] for t in record_times])
    mask = np.ones(grid.shape, bool)
    if grid.periodic:
        mask &= ~cut_locus_mask(field, z, "to_z", width=2.0)
    peak = float(np.abs(h0(np.zeros(1))).max())
    rows = []
    worst = 0.0
    for t in record_times:
        u = traj.state_at(t)
        ts = float(traj.state_times[np.argmin(np.abs(traj.state_times - t))])
        model = prof.at(ts, d)
        short = float(np.max((model - u)[mask])) / peak
        rows.append({"t": ts, "shortfall": short})
        worst = max(worst, short)
    return Report(
        "cheeger_yau",
        {"params": params.to_dict(), "T": T, "norm": field.norm.to_dict(), "shape": list(grid.shape), "delta": traj.delta, "tolerance": tolerance},
        worst,
        worst <= tolerance,
        [],
        {"per_time": rows, "monotone_profile": prof.derivative_sign_ok()},
    )


def kernel_lower_bound_check(field: FinslerField, weight: WeightField, z, params: ModelParams, times, eps_list, config: SolverConfig, tolerance: float = 1e-2) -> Report:
    """Monotone-in-eps approximation of p_t(., z) and the lower bound by the model kernel.

    For each eps, u_eps = p^{K,n}_eps(d(., z)) is evolved for t - eps. The
    values must increase as eps decreases (up to slack) and, divided by rho,
    stay above p^{K,n}_t(d(., z)) / rho. Slacks are relative to the peak of
    the model kernel at t.
    """
    grid = field.grid
    if not grid.periodic:
        raise ValueError("kernel_lower_bound_check needs a periodic (compact) grid")
    n = grid.dim
    h = float(grid.spacing.max())
    eps_list = sorted(float(e) for e in eps_list)
    if eps_list[0] < (2 * h) ** 2:
        raise ResolutionError(f"eps = {eps_list[0]:g} is below the grid resolution (2h)^2 = {(2 * h) ** 2:g}")
    if max(eps_list) >= min(times):
        raise ValueError("every eps must be smaller than every time")
    if np.any(weight.potential != 0):
        raise ValueError("kernel_lower_bound_check expects Lebesgue measure")
    rho = backward_ball_ratio(field.norm)
    d = distance_field(field, z, "to_z")
    sols = {}
    masses = {}
    for eps in eps_list:
        u_eps = model_kernel(params, eps, d, n=n)
        masses[eps] = float(np.sum(weight.measure * u_eps) / rho)
        traj = evolve(field, weight, u_eps, max(times) - eps, config, record_times=[t - eps for t in times])
        out = {t: traj.state_at(t - eps) for t in times}
        sols[eps] = out
    mono, bound, rows = 0.0, 0.0, []
    for t in times:
        ref = model_kernel(params, t, d, n=n)
        peak = float(ref.max())
        for a, b in zip(eps_list[:-1], eps_list[1:]):
            # smaller eps must give the larger value
            mono = max(mono, float(np.max(sols[b][t] - sols[a][t])) / peak)
        short = float(np.max(ref - sols[eps_list[0]][t])) / peak
        bound = max(bound, short)
        rows.append({"t": t, "bound_shortfall": short, "mass": float(np.sum(weight.measure * sols[eps_list[0]][t]) / rho)})
    mono = max(mono, 0.0)
    bound = max(bound, 0.0)
    slack = max(mono, bound)
    return Report(
        "kernel_lower_bound",
        {"params": params.to_dict(), "times": list(times), "eps": eps_list, "rho": rho, "tolerance": tolerance},
        slack,
        slack <= tolerance,
        [],
        {"monotone_slack": mono, "bound_slack": bound, "per_time": rows, "initial_mass": masses},
    )
