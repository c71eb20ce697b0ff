"""Heat flow as the gradient flow of the energy, spectral constants, and
the decay / contraction / Gaussian-bound diagnostics built on top of it."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
from scipy.optimize import minimize
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, spsolve

from . import operators as ops
from .field import FinslerField, WeightField, distance_field
from .norms import norm_scale_bounds

SCHEMES = ("minimizing_movement", "semi_implicit")


class NonConvergenceError(RuntimeError):
    """Inner solver ran out of iterations; carries the last iterate."""

    def __init__(self, message, last=None, residual=float("nan")):
        super().__init__(message)
        self.last = last
        self.residual = residual


@dataclass(frozen=True)
class SolverConfig:
    delta: float
    scheme: str = "minimizing_movement"
    inner_tol: float = 1e-3
    inner_max_iter: int = 200
    regularization_eps: float = 0.0
    inner_method: str = "newton"
    hessian_cap: float = 1e4
    linear_rtol: float = 1e-2
    linear_max_iter: int = 200
    memory: int = 12

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be > 0")
        if not self.inner_tol > 0:
            raise ValueError("inner_tol must be > 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.regularization_eps < 0:
            raise ValueError("regularization_eps must be >= 0")
        if self.inner_method not in ("newton", "lbfgs"):
            raise ValueError("inner_method must be newton or lbfgs")


def default_delta(field: FinslerField) -> float:
    """h^2/4 divided by the largest F*^2/|.|^2 stiffness of the field."""
    h = float(field.grid.spacing.min())
    lo, _ = norm_scale_bounds(field.norm)
    stiff = 1.0 / lo
    if not field.uniform:
        smin = np.linalg.svd(field.sigma, compute_uv=False).min()
        stiff /= smin**2
    return 0.25 * h * h / stiff


# ---------------------------------------------------------------------------
# norms on the weighted grid


def lp_norm(weight: WeightField, u: np.ndarray, p: float) -> float:
    if np.isinf(p):
        return float(np.max(np.abs(u)))
    return float(np.sum(weight.measure * np.abs(u) ** p) ** (1.0 / p))


def l2(weight: WeightField, u: np.ndarray) -> float:
    return lp_norm(weight, u, 2.0)


def mass(weight: WeightField, u: np.ndarray) -> float:
    return float(np.sum(weight.measure * u))


# ---------------------------------------------------------------------------
# one step


@dataclass
class StepInfo:
    iterations: int = 0
    residual: float = 0.0


def _capped_hessian(field, u, cap_ratio, eps):
    """Dual Hessians on every quadrant, eigenvalues capped for the Newton model.

    l^p duals with p > 2 have unbounded g* where a component of Du vanishes;
    the cap is relative to the median trace so it follows the data scale.
    """
    g = ops.frozen_coefficients(field, u, cap=np.inf)
    tr = np.trace(g, axis1=-2, axis2=-1)
    fin = np.isfinite(tr)
    ref = float(np.median(tr[fin])) if np.any(fin) else 1.0
    cap = cap_ratio * max(ref, 1e-300)
    g = np.clip(np.nan_to_num(g, nan=0.0, posinf=cap, neginf=-cap), -cap, cap)
    if eps > 0:
        from .norms import Regularized

        g = Regularized(field.norm, eps, "full").full_matrix(g)
    return g


def _line_search(phi, x, d, f0, g0, max_eval=50):
    """Step along a descent direction of a convex function.

    Brackets the zero of the directional derivative by doubling/bisection
    and accepts once the slope has dropped by half, provided the value did
    not go up. Returns (t, f, g).
    """
    slope0 = float(np.vdot(g0, d))
    t, lo, hi = 1.0, 0.0, None
    best = (0.0, f0, g0)
    for _ in range(max_eval):
        f, g = phi(x + t * d)
        slope = float(np.vdot(g, d))
        if f <= f0 and abs(slope) <= 0.5 * abs(slope0):
            return t, f, g
        if f <= best[1]:
            best = (t, f, g)
        if slope < 0 and f <= f0:
            lo = t
            t = 2.0 * t if hi is None else 0.5 * (lo + hi)
        else:
            hi = t
            t = 0.5 * (lo + hi)
    return best


def _newton(phi, hess_solve, x0, converged, max_iter, project):
    x = x0.copy()
    f, g = phi(x)
    for it in range(max_iter):
        if converged(x, g):
            return x, g, it, True
        d = project(hess_solve(x, -g))
        if not np.vdot(d, g) < 0:
            d = project(-g)
        t, f_new, g_new = _line_search(phi, x, d, f, g)
        if t == 0.0:
            # no decrease along the Newton direction: fall back to steepest descent
            d = project(-g)
            t, f_new, g_new = _line_search(phi, x, d * (1.0 / max(np.abs(d).max(), 1e-300)), f, g)
            if t == 0.0:
                return x, g, it, converged(x, g)
            d = d * (1.0 / max(np.abs(d).max(), 1e-300))
        x = x + t * d
        f, g = f_new, g_new
    return x, g, max_iter, converged(x, g)


def _lbfgs(phi, x0, precond, converged, max_iter, memory, project):
    """Limited-memory BFGS in the metric diag(1/precond), Barzilai-Borwein restart."""
    x = x0.copy()
    f, g = phi(x)
    s_hist, y_hist = [], []
    bb = 1.0
    for it in range(max_iter):
        if converged(x, g):
            return x, g, it, True
        q = g.copy()
        alphas = []
        for s, y in reversed(list(zip(s_hist, y_hist))):
            a = np.vdot(s, q) / np.vdot(y, s)
            alphas.append(a)
            q -= a * y
        gamma = bb
        if s_hist:
            s, y = s_hist[-1], y_hist[-1]
            gamma = np.vdot(s, y) / np.vdot(y, precond * y)
        r = gamma * precond * q
        for (s, y), a in zip(zip(s_hist, y_hist), reversed(alphas)):
            r += (a - np.vdot(y, r) / np.vdot(y, s)) * s
        d = project(-r)
        if not np.vdot(g, d) < 0:
            s_hist, y_hist = [], []
            d = project(-bb * precond * g)
        t, f_new, g_new = _line_search(phi, x, d, f, g)
        if t == 0.0:
            return x, g, it, converged(x, g)
        s = t * d
        y = g_new - g
        x, f, g = x + s, f_new, g_new
        sy = np.vdot(s, y)
        if sy > 1e-300:
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
            bb = sy / np.vdot(y, precond * y)
    return x, g, max_iter, converged(x, g)


def step_residual(field: FinslerField, weight: WeightField, u0: np.ndarray, u: np.ndarray, delta: float) -> float:
    """|(u - u0) - delta * Lap u|_m, the optimality defect of a step."""
    return l2(weight, (u - u0) - delta * ops.laplacian(field, weight, u))


def mm_step(field: FinslerField, weight: WeightField, u0: np.ndarray, config: SolverConfig, info: StepInfo | None = None, guess: np.ndarray | None = None) -> np.ndarray:
    """Minimiser of E(u) + |u - u0|_m^2 / (2 delta).

    Stops once |(u - u0) - delta Lap u|_m <= inner_tol * delta |Lap u0|_m,
    i.e. relative to the size of an explicit step (the defect at u = u0).
    On periodic grids search directions are kept m-mean-free, so the mass
    of u0 is carried over up to round-off.
    """
    grid = field.grid
    m = weight.measure
    delta = config.delta
    u0 = np.asarray(u0, float)
    tol = config.inner_tol * delta * l2(weight, ops.laplacian(field, weight, u0))
    # near equilibrium the relative target sinks below round-off
    tol = max(tol, 1e-13 * l2(weight, u0))
    total = m.sum()

    def phi(u):
        e, ge = ops.energy_and_gradient(field, weight, u)
        du = u - u0
        return e + 0.5 * float(np.sum(m * du * du)) / delta, ge + m * du / delta

    def converged(u, g):
        r = g * delta / m
        return math.sqrt(float(np.sum(m * r * r))) <= tol

    if grid.periodic:
        def project(d):
            return d - np.sum(m * d) / total
    else:
        def project(d):
            return d

    x0 = u0
    if guess is not None:
        x0 = project(np.asarray(guess, float) - u0) + u0

    if config.inner_method == "lbfgs":
        x, g, iters, ok = _lbfgs(phi, x0, delta / m, converged, config.inner_max_iter, config.memory, project)
    else:
        mdiag = sp.diags((m / delta).ravel())

        def hess_solve(u, rhs):
            coeff = _capped_hessian(field, u, config.hessian_cap, config.regularization_eps)
            h = (mdiag + ops.energy_hessian_matrix(weight, coeff)).tocsr()
            pre = sp.diags(1.0 / h.diagonal())
            s, _ = cg(h, rhs.ravel(), rtol=config.linear_rtol, atol=0.0, maxiter=config.linear_max_iter, M=pre)
            return s.reshape(grid.shape)

        x, g, iters, ok = _newton(phi, hess_solve, x0, converged, config.inner_max_iter, project)
    res = math.sqrt(float(np.sum(m * (g * delta / m) ** 2)))
    if info is not None:
        info.iterations = iters
        info.residual = res
    if not ok:
        raise NonConvergenceError(f"mm_step: residual {res:.3e} after {iters} iterations", x, res)
    return x


def semi_implicit_step(field: FinslerField, weight: WeightField, u0: np.ndarray, config: SolverConfig, info: StepInfo | None = None) -> np.ndarray:
    """Solve (I - delta * Lap^(u0)) u = u0 with coefficients frozen at u0."""
    grid = field.grid
    m = weight.measure.ravel()
    coeff = ops.frozen_coefficients(field, u0)
    if config.regularization_eps > 0:
        from .norms import Regularized

        coeff = Regularized(field.norm, config.regularization_eps, "full").full_matrix(coeff)
    delta = config.delta

    def matvec(v):
        v = v.reshape(grid.shape)
        lap = ops.apply_weighted(weight, coeff, v)
        return (weight.measure * (v - delta * lap)).ravel()

    n = grid.size
    diag = m + delta * ops.weighted_diagonal(weight, coeff).ravel()
    a = LinearOperator((n, n), matvec=matvec, dtype=float)
    pre = LinearOperator((n, n), matvec=lambda v: v / diag, dtype=float)
    b = (weight.measure * u0).ravel()
    count = [0]

    def cb(_):
        count[0] += 1

    sol, flag = cg(a, b, x0=np.asarray(u0, float).ravel(), rtol=config.inner_tol, atol=0.0, maxiter=config.inner_max_iter, M=pre, callback=cb)
    sol = sol.reshape(grid.shape)
    res = l2(weight, sol - delta * ops.apply_weighted(weight, coeff, sol) - u0)
    if info is not None:
        info.iterations = count[0]
        info.residual = res
    if flag != 0:
        raise NonConvergenceError(f"semi_implicit_step: CG flag {flag}", sol, res)
    return sol


def step(field, weight, u0, config, info=None, guess=None):
    if config.scheme == "semi_implicit":
        return semi_implicit_step(field, weight, u0, config, info)
    return mm_step(field, weight, u0, config, info, guess)


# ---------------------------------------------------------------------------
# trajectories

SERIES_HEADER = ("t", "mass", "energy", "l2", "laplacian_l2", "inner_iters", "residual")


@dataclass
class FlowTrajectory:
    times: np.ndarray
    states: list
    state_times: np.ndarray
    diagnostics: dict = dc_field(default_factory=dict)
    delta: float = 0.0

    def state_at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.state_times - t)))
        return self.states[k]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SERIES_HEADER)
        for k in range(len(self.times)):
            row = [repr(float(self.times[k]))]
            for c in SERIES_HEADER[1:]:
                v = self.diagnostics[c][k]
                row.append(int(v) if c == "inner_iters" else repr(float(v)))
            w.writerow(row)
        return buf.getvalue()


def step_plan(T: float, delta: float, record_times=None) -> tuple[int, float, list[int]]:
    """Number of steps, effective step and the step indices to record."""
    if not T > 0:
        raise ValueError("T must be > 0")
    n = max(1, int(math.ceil(T / delta - 1e-9)))
    d = T / n
    if record_times is None:
        idx = list(range(n + 1))
    else:
        idx = sorted({0, n} | {int(round(t / d)) for t in record_times})
    return n, d, idx


def evolve(field: FinslerField, weight: WeightField, u0: np.ndarray, T: float, config: SolverConfig, record_times=None) -> FlowTrajectory:
    """Step from u0 to time T, logging diagnostics at every step.

    States are stored at every step, or only at the steps nearest to
    ``record_times`` (plus the first and last) when those are given.
    """
    n, d, keep = step_plan(T, config.delta, record_times)
    cfg = replace(config, delta=d)
    keep = set(keep)
    u = np.asarray(u0, float).copy()
    diag = {c: np.zeros(n + 1) for c in SERIES_HEADER[1:]}

    def log(k, u, info):
        diag["mass"][k] = mass(weight, u)
        diag["energy"][k] = ops.energy(field, weight, u).energy
        diag["l2"][k] = l2(weight, u)
        diag["laplacian_l2"][k] = l2(weight, ops.laplacian(field, weight, u))
        diag["inner_iters"][k] = info.iterations
        diag["residual"][k] = info.residual

    log(0, u, StepInfo())
    states, stimes = [u.copy()], [0.0]
    prev = None
    for k in range(1, n + 1):
        info = StepInfo()
        # linear extrapolation of the previous increment as a warm start
        guess = None if prev is None else 2 * u - prev
        new = step(field, weight, u, cfg, info, guess)
        prev, u = u, new
        log(k, u, info)
        if k in keep:
            states.append(u.copy())
            stimes.append(k * d)
    return FlowTrajectory(np.arange(n + 1) * d, states, np.array(stimes), diag, d)


# ---------------------------------------------------------------------------
# spectral constants


@dataclass
class SpectralReport:
    value: float
    mode: str
    minimizer: np.ndarray
    history: list
    converged: bool

    def to_dict(self):
        key = "chi" if self.mode == "dirichlet_chi" else "chi_bar"
        return {key: self.value, "mode": self.mode, "iterations": len(self.history), "converged": self.converged}


def rayleigh(field, weight, u) -> float:
    return 2.0 * ops.energy(field, weight, u).energy / l2(weight, u) ** 2


def _starts(grid, mode, seed):
    x = grid.centres()
    rng = np.random.default_rng(seed)
    out = []
    lo = np.array(grid.lower)
    L = np.array(grid.lengths)
    y = (x - lo) / L
    if mode == "dirichlet_chi":
        out.append(np.prod(np.sin(np.pi * y), axis=-1))
    else:
        for i in range(grid.dim):
            out.append(np.cos(2 * np.pi * y[..., i]) if grid.periodic else y[..., i] - 0.5)
            out.append(np.sin(2 * np.pi * y[..., i]) if grid.periodic else np.cos(np.pi * y[..., i]))
        if grid.dim > 1:
            out.append(np.sin(2 * np.pi * (y.sum(-1))) if grid.periodic else y.sum(-1) - y.sum(-1).mean())
    out.append(out[0] + 0.1 * rng.standard_normal(grid.shape) * np.abs(out[0]).max())
    return out


def ground_state(field: FinslerField, weight: WeightField, mode: str = "dirichlet_chi", tol: float = 1e-10, max_iter: int = 1000, seed: int = 0) -> SpectralReport:
    """Minimise 2E(u)/|u|_m^2, over all u (Dirichlet) or over m-mean-zero u.

    The projected, normalised descent is driven by L-BFGS on the projected
    Rayleigh quotient, restarted from a few smooth initial fields.
    """
    if mode not in ("dirichlet_chi", "mean_zero_chi_bar"):
        raise ValueError("mode must be dirichlet_chi or mean_zero_chi_bar")
    grid = field.grid
    m = weight.measure
    total = m.sum()
    if mode == "mean_zero_chi_bar" and not grid.periodic and not np.any(weight.potential != 0):
        raise ValueError("mean-zero mode needs a periodic grid or an explicit weight")

    def project(v):
        if mode == "mean_zero_chi_bar":
            return v - np.sum(m * v) / total
        return v

    def project_t(g):
        if mode == "mean_zero_chi_bar":
            return g - m * g.sum() / total
        return g

    best = None
    for start in _starts(grid, mode, seed):
        history = []

        def fun(vflat):
            v = vflat.reshape(grid.shape)
            u = project(v)
            nrm2 = float(np.sum(m * u * u))
            e, ge = ops.energy_and_gradient(field, weight, u)
            r = 2 * e / nrm2
            gu = (2.0 / nrm2) * (ge - r * m * u)
            history.append(r)
            return r, project_t(gu).ravel()

        u0 = project(start)
        u0 = u0 / math.sqrt(float(np.sum(m * u0 * u0)))
        res = minimize(fun, u0.ravel(), jac=True, method="L-BFGS-B",
                       options={"maxiter": max_iter, "maxcor": 30, "ftol": tol * 1e-3, "gtol": 1e-14})
        u = project(res.x.reshape(grid.shape))
        u /= math.sqrt(float(np.sum(m * u * u)))
        val = rayleigh(field, weight, u)
        rep = SpectralReport(val, mode, u, history, bool(res.success) or res.status == 0)
        if best is None or val < best.value:
            best = rep
    return best


# ---------------------------------------------------------------------------
# contraction and Gaussian bounds


@dataclass
class ContractionReport:
    p: float
    kappa: float
    chi: float
    rate: float
    ratio: float
    times: list
    ratios: list
    coincident: bool

    def certified(self, tolerance: float) -> bool:
        return self.ratio <= 1.0 + tolerance

    def to_dict(self):
        return {
            "p": "inf" if np.isinf(self.p) else self.p,
            "kappa": self.kappa,
            "chi": self.chi,
            "rate": self.rate,
            "ratio": self.ratio,
            "coincident": self.coincident,
        }


def contraction_rate(p: float, kappa: float, chi: float) -> float:
    if np.isinf(p) or p == 1:
        return 0.0
    return 4.0 * (p - 1.0) / p**2 * kappa * chi


def contraction_report(traj_u: FlowTrajectory, traj_v: FlowTrajectory, weight: WeightField, p: float, kappa: float, chi: float) -> ContractionReport:
    """max_t |u_t - v_t|_p / (exp(-rate t) |u_0 - v_0|_p)."""
    if len(traj_u.states) != len(traj_v.states) or not np.allclose(traj_u.state_times, traj_v.state_times):
        raise ValueError("trajectories must share their recorded times")
    rate = contraction_rate(p, kappa, chi)
    d0 = lp_norm(weight, traj_u.states[0] - traj_v.states[0], p)
    ratios = []
    if d0 == 0.0:
        return ContractionReport(p, kappa, chi, rate, 0.0, list(traj_u.state_times), [0.0] * len(traj_u.states), True)
    for t, a, b in zip(traj_u.state_times, traj_u.states, traj_v.states):
        ratios.append(lp_norm(weight, a - b, p) / (math.exp(-rate * t) * d0))
    return ContractionReport(p, kappa, chi, rate, float(max(ratios)), list(map(float, traj_u.state_times)), ratios, False)


def support_distance(field: FinslerField, source: np.ndarray, target: np.ndarray) -> float:
    """inf { d(y, x) : y in source, x in target } for boolean cell masks."""
    src = np.argwhere(source)
    tgt = np.asarray(target, bool)
    if np.any(np.asarray(source, bool) & tgt):
        return 0.0
    best = np.inf
    for y in src:
        d = distance_field(field, tuple(y), "from_z")
        best = min(best, float(d[tgt].min()))
    return best


@dataclass
class DaviesReport:
    """Pairings <u0, P_t v0>_m against exp(-d^2/4t)|u0||v0| for two distances.

    ``distance`` is inf d(y, x) over y in supp v0, x in supp u0 (from the
    support of v0 to that of u0); ``distance_reverse`` swaps the roles,
    inf d(x, y). ``ratios`` use the former, ``ratios_reverse`` the latter.
    """

    distance: float
    distance_reverse: float
    times: list
    pairings: list
    bounds: list
    ratios: list
    bounds_reverse: list
    ratios_reverse: list

    @property
    def max_ratio(self) -> float:
        return float(max(self.ratios))

    @property
    def max_ratio_reverse(self) -> float:
        return float(max(self.ratios_reverse))

    def certified(self, tolerance: float = 1e-6, reverse: bool = False) -> bool:
        r = self.max_ratio_reverse if reverse else self.max_ratio
        return r <= 1.0 + tolerance

    def to_dict(self):
        return {
            "distance": self.distance,
            "distance_reverse": self.distance_reverse,
            "times": self.times,
            "pairings": self.pairings,
            "bounds": self.bounds,
            "ratios": self.ratios,
            "max_ratio": self.max_ratio,
            "bounds_reverse": self.bounds_reverse,
            "ratios_reverse": self.ratios_reverse,
            "max_ratio_reverse": self.max_ratio_reverse,
        }


def _ratio(s, b):
    if b > 0:
        return s / b
    return 0.0 if s <= 0 else float("inf")


def davies_check(field: FinslerField, weight: WeightField, u0: np.ndarray, v0: np.ndarray, times, config: SolverConfig) -> DaviesReport:
    """Evolve v0 and compare <u0, P_t v0>_m with the Gaussian factor at each time."""
    times = sorted(float(t) for t in times)
    if not times or times[0] <= 0:
        raise ValueError("times must be positive")
    d = support_distance(field, v0 != 0, u0 != 0)
    d_rev = support_distance(field, u0 != 0, v0 != 0)
    traj = evolve(field, weight, v0, times[-1], config, record_times=times)
    nu, nv = l2(weight, u0), l2(weight, v0)
    pair, bnd, rat, bnd_r, rat_r = [], [], [], [], []
    for t in times:
        s = float(np.sum(weight.measure * u0 * traj.state_at(t)))
        b = math.exp(-d * d / (4 * t)) * nu * nv
        br = math.exp(-d_rev * d_rev / (4 * t)) * nu * nv
        pair.append(s)
        bnd.append(b)
        rat.append(_ratio(s, b))
        bnd_r.append(br)
        rat_r.append(_ratio(s, br))
    return DaviesReport(d, d_rev, times, pair, bnd, rat, bnd_r, rat_r)
