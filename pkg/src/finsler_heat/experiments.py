"""Experiment runners behind the command line.

Each runner takes a validated config dict and returns an ``Outcome``: a
summary (plain JSON data), a diagnostic table with a fixed header, named
field dumps and an overall pass flag. Runners only call library functions;
they do no numerics of their own beyond bookkeeping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Any, Callable

import numpy as np

from . import comparison as cmp
from . import flow
from . import norms
from . import wasserstein as ot
from .field import FinslerField, Grid, build_grid, build_weight, gaussian_potential

SCHEMA_VERSION = 1

EXPERIMENTS = (
    "heat",
    "gaussian-check",
    "contraction",
    "davies",
    "cheeger-yau",
    "kernel-bound",
    "laplacian-compare",
    "subsolution",
    "jko",
    "jko-equivalence",
    "spectral",
    "norm-info",
    "cconcavity",
)

_positive = {"type": "number", "exclusiveMinimum": 0}
_pos_list = {"type": "array", "items": _positive, "minItems": 1}

CONFIG_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "experiment"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "experiment": {"enum": list(EXPERIMENTS)},
        "norm": {
            "type": "object",
            "required": ["variant"],
            "properties": {
                "variant": {"enum": ["quadratic", "lp", "two_slope_1d", "randers", "deformed", "regularized"]},
                "p": {"type": "number", "exclusiveMinimum": 1},
                "dim": {"type": "integer", "minimum": 1, "maximum": 3},
                "a": _positive,
                "b": {},
                "A": {"type": "array"},
                "eps": _positive,
                "sigma": {},
                "base": {"type": "object"},
                "mode": {"enum": ["lower", "full"]},
            },
        },
        "grid": {
            "type": "object",
            "required": ["shape"],
            "additionalProperties": False,
            "properties": {
                "shape": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1, "maxItems": 3},
                "lengths": {"oneOf": [_positive, _pos_list]},
                "lower": {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}}]},
                "boundary": {"enum": ["dirichlet_zero", "periodic"]},
            },
        },
        "weight": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"kind": {"enum": ["lebesgue", "gaussian"]}, "k": _positive},
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delta": _positive,
                "delta_factor": _positive,
                "scheme": {"enum": list(flow.SCHEMES)},
                "inner_tol": _positive,
                "inner_max_iter": {"type": "integer", "minimum": 1},
                "regularization_eps": {"type": "number", "minimum": 0},
                "inner_method": {"enum": ["newton", "lbfgs"]},
            },
        },
        "params": {"type": "object"},
        "output_dir": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
    },
}

SWEEP_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["schema_version", "base", "parameters"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "base": {"type": "object"},
        "parameters": {"type": "object", "additionalProperties": {"type": "array"}},
        "output_dir": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
    },
}


@dataclass
class Outcome:
    summary: dict
    header: list
    rows: list
    fields: dict = dc_field(default_factory=dict)
    passed: bool = True


# ---------------------------------------------------------------------------
# config helpers


def _norm(cfg) -> norms.MinkowskiNorm:
    if "norm" not in cfg:
        raise KeyError("norm")
    return norms.norm_from_dict(cfg["norm"])


def _grid(cfg) -> Grid:
    if "grid" not in cfg:
        raise KeyError("grid")
    return build_grid(cfg["grid"])


def _weight(cfg, grid):
    w = cfg.get("weight", {})
    if w.get("kind", "lebesgue") == "gaussian":
        return build_weight(grid, gaussian_potential(w.get("k", 1.0)))
    return build_weight(grid)


def _solver(cfg, field) -> flow.SolverConfig:
    s = dict(cfg.get("solver", {}))
    factor = s.pop("delta_factor", 1.0)
    if "delta" not in s:
        s["delta"] = factor * flow.default_delta(field)
    return flow.SolverConfig(**s)


def _params(cfg) -> dict:
    return cfg.get("params", {})


def _bump(grid: Grid, centre, width, amplitude=1.0, background=0.0) -> np.ndarray:
    x = grid.centres()
    r2 = np.sum((grid.wrap(x - np.asarray(centre, float)) / width) ** 2, axis=-1)
    return background + amplitude * np.exp(-r2)


def _indicator(grid: Grid, lo, hi) -> np.ndarray:
    x = grid.centres()[..., 0]
    return ((x >= lo) & (x <= hi)).astype(float)


def _centre_cell(grid: Grid, p) -> tuple:
    return tuple(int(c) for c in p.get("z", [s // 2 for s in grid.shape]))


def _model(p) -> cmp.ModelParams:
    return cmp.ModelParams(K=float(p.get("K", 0.0)), N=float(p.get("N", 2.0)))


# ---------------------------------------------------------------------------
# runners


def run_heat(cfg, seed) -> Outcome:
    grid, norm = _grid(cfg), _norm(cfg)
    field = FinslerField(grid, norm)
    weight = _weight(cfg, grid)
    p = _params(cfg)
    config = _solver(cfg, field)
    if p.get("initial", "bump") == "random":
        u0 = np.random.default_rng(seed).normal(size=grid.shape)
    else:
        centre = p.get("centre", [lo + 0.5 * L for lo, L in zip(grid.lower, grid.lengths)])
        u0 = _bump(grid, centre, p.get("width", 0.1 * min(grid.lengths)))
    T = float(p.get("T", 20 * config.delta))
    traj = flow.evolve(field, weight, u0, T, config)
    mass = traj.diagnostics["mass"]
    energy = traj.diagnostics["energy"]
    drift = float(np.max(np.abs(np.diff(mass)))) if len(mass) > 1 else 0.0
    nonincreasing = bool(np.all(np.diff(energy) <= 1e-14 * max(energy[0], 1e-300)))
    checks = {"energy_nonincreasing": nonincreasing}
    if grid.periodic:
        checks["mass_drift_per_step"] = drift <= 1e-8
    rows = [[traj.times[k]] + [traj.diagnostics[c][k] for c in flow.SERIES_HEADER[1:]] for k in range(len(traj.times))]
    return Outcome(
        {"T": T, "delta": traj.delta, "steps": len(traj.times) - 1, "mass_drift_per_step": drift, "final_energy": float(energy[-1]), "checks": checks},
        list(flow.SERIES_HEADER),
        rows,
        {"initial": (grid, u0), "final": (grid, traj.states[-1])},
        all(checks.values()),
    )


def run_gaussian_check(cfg, seed) -> Outcome:
    norm = _norm(cfg)
    p = _params(cfg)
    rep = cmp.gaussian_refinement(
        norm,
        levels=tuple(p.get("levels", [64, 128])),
        t=float(p.get("t", 0.02)),
        half_width=float(p.get("half_width", 1.0)),
        mirrored=bool(p.get("mirrored", False)),
    )
    rows = [[r["level"], r["max"], r["mean"]] for r in rep.refinement]
    ratios = [rows[i + 1][1] / rows[i][1] for i in range(len(rows) - 1)]
    d = rep.to_dict()
    d["error_ratios"] = ratios
    return Outcome(d, ["level", "max_residual", "mean_residual"], rows, {}, rep.certified)


def run_contraction(cfg, seed) -> Outcome:
    grid, norm = _grid(cfg), _norm(cfg)
    field = FinslerField(grid, norm)
    weight = _weight(cfg, grid)
    p = _params(cfg)
    config = _solver(cfg, field)
    mode = "mean_zero_chi_bar" if grid.periodic else "dirichlet_chi"
    spec = flow.ground_state(field, weight, mode, seed=seed)
    kappa = field.constants().kappa
    rng = np.random.default_rng(seed)
    x = grid.centres()
    u0 = np.ones(grid.shape)
    v0 = np.ones(grid.shape)
    for k in range(1, 4):
        for i in range(grid.dim):
            arg = 2 * np.pi * k * (x[..., i] - grid.lower[i]) / grid.lengths[i]
            u0 = u0 + rng.normal() / k**2 * np.sin(arg + rng.uniform(0, 2 * np.pi))
            v0 = v0 + rng.normal() / k**2 * np.sin(arg + rng.uniform(0, 2 * np.pi))
    T = float(p.get("T", 20 * config.delta))
    ta = flow.evolve(field, weight, u0, T, config)
    tb = flow.evolve(field, weight, v0, T, config)
    ps = [float(q) for q in p.get("p", [1, 2, "inf"]) if q != "inf"] + ([math.inf] if "inf" in p.get("p", [1, 2, "inf"]) else [])
    gated = set(float(q) if q != "inf" else math.inf for q in p.get("gated", [1, 2, "inf"]))
    tol = {2.0: 0.02}
    reports, ok, rows = [], True, []
    for q in ps:
        r = flow.contraction_report(ta, tb, weight, q, kappa, spec.value)
        passed = r.certified(tol.get(q, 0.05))
        if q in gated:
            ok &= passed
        reports.append({**r.to_dict(), "passed": passed, "gated": q in gated})
        for t, val in zip(r.times, r.ratios):
            rows.append(["inf" if math.isinf(q) else q, t, val])
    return Outcome({"chi": spec.to_dict(), "kappa": kappa, "T": T, "delta": ta.delta, "reports": reports}, ["p", "t", "ratio"], rows, {}, ok)


def run_davies(cfg, seed) -> Outcome:
    grid, norm = _grid(cfg), _norm(cfg)
    field = FinslerField(grid, norm)
    weight = _weight(cfg, grid)
    p = _params(cfg)
    config = _solver(cfg, field)
    u0 = _indicator(grid, *p.get("u_support", [0.2, 0.3]))
    v0 = _indicator(grid, *p.get("v_support", [0.5, 0.6]))
    rep = flow.davies_check(field, weight, u0, v0, p.get("times", [0.005, 0.01, 0.02]), config)
    rows = [[t, s, b, r, br, rr] for t, s, b, r, br, rr in zip(rep.times, rep.pairings, rep.bounds, rep.ratios, rep.bounds_reverse, rep.ratios_reverse)]
    d = rep.to_dict()
    d["certified"] = rep.certified()
    d["certified_reverse"] = rep.certified(reverse=True)
    return Outcome(d, ["t", "pairing", "bound", "ratio", "bound_reverse", "ratio_reverse"], rows, {}, rep.certified())


def run_cheeger_yau(cfg, seed) -> Outcome:
    grid, norm = _grid(cfg), _norm(cfg)
    field = FinslerField(grid, norm)
    weight = _weight(cfg, grid)
    p = _params(cfg)
    config = _solver(cfg, field)
    params = _model(p)
    t0 = float(p.get("t0", 0.005))
    n = grid.dim

    def h0(r):
        return (4 * np.pi * t0) ** (-n / 2) * np.exp(-np.asarray(r) ** 2 / (4 * t0))

    rep = cmp.cheeger_yau_check(field, weight, _centre_cell(grid, p), params, h0, float(p.get("T", 0.01)), config, tolerance=float(p.get("tolerance", 0.02)))
    rows = [[r["t"], r["shortfall"]] for r in rep.details["per_time"]]
    return Outcome(rep.to_dict(), ["t", "shortfall"], rows, {}, rep.certified)


def run_kernel_bound(cfg, seed) -> Outcome:
    grid, norm = _grid(cfg), _norm(cfg)
    field = FinslerField(grid, norm)
    weight = _weight(cfg, grid)
    p = _params(cfg)
    config = _solver(cfg, field)
    h = float(grid.spacing.max())
    e0 = (2 * h) ** 2
    eps = p.get("eps", [e0, 2 * e0, 4 * e0])
    rep = cmp.kernel_lower_bound_check(field, weight, _centre_cell(grid, p), _model({"K": 0, "N": grid.dim, **p}), p.get("times", [0.01, 0.05]), eps, config, tolerance=float(p.get("tolerance", 1e-2)))
    rows = [[r["t"], r["bound_shortfall"], r["mass"]] for r in rep.details["per_time"]]
    return Outcome(rep.to_dict(), ["t", "bound_shortfall", "mass"], rows, {}, rep.certified)


def run_laplacian_compare(cfg, seed) -> Outcome:
    grid, norm = _grid(cfg), _norm(cfg)
    field = FinslerField(grid, norm)
    weight = _weight(cfg, grid)
    p = _params(cfg)
    rep = cmp.laplacian_comparison_check(field, weight, _centre_cell(grid, p), _model({"N": grid.dim, **p}), tolerance=float(p.get("tolerance", 0.05)))
    return Outcome(rep.to_dict(), ["slack"], [[rep.slack]], {}, rep.certified)


def run_subsolution(cfg, seed) -> Outcome:
    grid, norm = _grid(cfg), _norm(cfg)
    field = FinslerField(grid, norm)
    weight = _weight(cfg, grid)
    p = _params(cfg)
    example = p.get("example", "flat")
    if example == "flat":
        N = float(p.get("N", grid.dim + 1))
        cand, params = cmp.example_flat(N), cmp.ModelParams(0.0, N)
    elif example == "hyperbolic":
        cand, params = cmp.example_hyperbolic(), cmp.ModelParams(-2.0, 3.0)
    else:
        raise ValueError(f"params.example must be 'flat' or 'hyperbolic', got {example!r}")
    rep = cmp.subsolution_residual(field, weight, cand, params, _centre_cell(grid, p), p.get("times", [0.05, 0.1, 0.2]), tolerance=float(p.get("tolerance", 1e-3)))
    rows = [[r["t"], r["max_residual"]] for r in rep.details["per_time"]]
    return Outcome(rep.to_dict(), ["t", "max_residual"], rows, {}, rep.certified)


def _jko_initial(grid, p):
    x = grid.centres()[..., 0]
    c, w = p.get("centre", 0.4), p.get("width", 0.06)
    rho = p.get("background", 1.0) + 2 * np.exp(-((x - c) / w) ** 2) * (1 + np.tanh((x - c) / (0.5 * w)))
    return ot.Density1D.normalized(grid, rho)


def run_jko(cfg, seed) -> Outcome:
    grid, norm = _grid(cfg), _norm(cfg)
    weight = _weight(cfg, grid)
    p = _params(cfg)
    mu0 = _jko_initial(grid, p)
    mu0 = ot.Density1D(grid, mu0.rho / np.sum(mu0.rho * weight.measure), weight)
    delta = float(p.get("delta", 1e-3 * grid.lengths[0] ** 2))
    traj = ot.jko_trajectory(mu0, norm, float(p.get("T", 0.01)), delta, int(p.get("S", 128)))
    ent = [ot.entropy(r, weight) for r in traj.densities]
    ok = bool(np.all(np.diff(ent) <= 1e-12))
    rows = [[t, e] for t, e in zip(traj.times, ent)]
    return Outcome({"delta": traj.delta, "steps": len(traj.times) - 1, "entropy": ent, "entropy_nonincreasing": ok}, ["t", "entropy"], rows, {"final": (grid, traj.densities[-1])}, ok)


def run_jko_equivalence(cfg, seed) -> Outcome:
    grid, norm = _grid(cfg), _norm(cfg)
    p = _params(cfg)
    mu0 = _jko_initial(grid, p)
    L2 = grid.lengths[0] ** 2
    deltas = p.get("deltas", [1e-3 * L2, 5e-4 * L2])
    rep = ot.jko_equivalence_check(mu0, norm, float(p.get("T", 0.01)), deltas, int(p.get("S", 128)))
    ok = rep.certified(float(p.get("max_error", 0.05)), float(p.get("max_ratio", 0.7)))
    rows = [[d, e, s] for d, e, s in zip(rep.deltas, rep.errors, rep.errors_same_norm)]
    return Outcome({**rep.to_dict(), "certified": ok}, ["delta", "error_reverse", "error_same"], rows, {}, ok)


def run_spectral(cfg, seed) -> Outcome:
    grid, norm = _grid(cfg), _norm(cfg)
    field = FinslerField(grid, norm)
    weight = _weight(cfg, grid)
    p = _params(cfg)
    mode = p.get("mode", "mean_zero_chi_bar" if grid.periodic or cfg.get("weight", {}).get("kind") == "gaussian" else "dirichlet_chi")
    rep = flow.ground_state(field, weight, mode, seed=seed)
    out = rep.to_dict()
    ok = rep.converged
    if "lower_bound" in p:
        out["lower_bound"] = p["lower_bound"]
        ok &= rep.value >= p["lower_bound"] * (1 - float(p.get("tolerance", 0.01)))
    rows = [[k, v] for k, v in enumerate(rep.history)]
    return Outcome(out, ["iteration", "rayleigh"], rows, {"minimizer": (grid, rep.minimizer)}, bool(ok))


def run_norm_info(cfg, seed) -> Outcome:
    norm = _norm(cfg)
    c = norms.convexity_constants(norm, seed=seed)
    lo, hi = norms.norm_scale_bounds(norm, seed=seed)
    d = {"norm": norm.to_dict(), "constants": c.to_dict(), "scale_bounds": [lo, hi], "symmetric": norm.symmetric}
    return Outcome(d, ["kappa", "kappa_star"], [[c.kappa, c.kappa_star]], {}, True)


def run_cconcavity(cfg, seed) -> Outcome:
    grid, norm = _grid(cfg), _norm(cfg)
    p = _params(cfg)
    eps = float(p.get("eps", 0.5))
    rng = np.random.default_rng(seed)
    x = grid.centres()
    rows, results = [], []
    ok = True
    for amp in p.get("amplitudes", [0.1, 0.03, 0.01, 0.003]):
        phi = amp * np.prod([np.sin(2 * np.pi * (x[..., i] - grid.lower[i]) / grid.lengths[i] + rng.uniform(0, 2 * np.pi)) for i in range(grid.dim)], axis=0)
        r = ot.cconcavity_check(phi, grid, norm)
        small = r.sup_abs < eps and r.sup_gradient < eps and r.sup_second < eps
        ok &= r.min_gap >= -1e-12 and (r.concave or not small)
        results.append({"amplitude": amp, "small": small, **r.to_dict()})
        rows.append([amp, r.sup_abs, r.sup_gradient, r.sup_second, r.gap, small])
    return Outcome({"eps": eps, "results": results}, ["amplitude", "sup_abs", "sup_gradient", "sup_second", "gap", "small"], rows, {}, bool(ok))


RUNNERS: dict[str, Callable[[dict, int], Outcome]] = {
    "heat": run_heat,
    "gaussian-check": run_gaussian_check,
    "contraction": run_contraction,
    "davies": run_davies,
    "cheeger-yau": run_cheeger_yau,
    "kernel-bound": run_kernel_bound,
    "laplacian-compare": run_laplacian_compare,
    "subsolution": run_subsolution,
    "jko": run_jko,
    "jko-equivalence": run_jko_equivalence,
    "spectral": run_spectral,
    "norm-info": run_norm_info,
    "cconcavity": run_cconcavity,
}
