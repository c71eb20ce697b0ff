"""Minkowski norms on R^n: evaluation, duality and Legendre maps.

Every norm class works on batches: arguments have shape ``(..., n)`` and
results carry the leading shape. ``covector`` is the Legendre map
J = d(F^2/2), ``hessian`` is g = d^2(F^2/2); the ``dual_*`` methods are the
same objects for the dual norm F*.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.stats import qmc

ZERO_CUTOFF = 1e-14
NEWTON_TOL = 1e-13
MODES = ("lower", "upper", "full")


class InvalidNormError(ValueError):
    """Raised when norm parameters do not define a Minkowski norm."""


class DegeneratePointError(ValueError):
    """Raised when a second derivative is requested at the origin."""


def _as_batch(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (dim,):
        raise ValueError(f"expected trailing dimension {dim}, got shape {x.shape}")
    return x


def _mv(mat: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply a (possibly batched) matrix to a batch of vectors."""
    return np.einsum("...ij,...j->...i", mat, x)


def _quad(x: np.ndarray, mat: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...ij,...j->...", x, mat, x)


def _check_spd(a: np.ndarray, what: str) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidNormError(f"{what} must be a square matrix")
    if not np.allclose(a, a.T, rtol=1e-12, atol=1e-14):
        raise InvalidNormError(f"{what} must be symmetric")
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise InvalidNormError(f"{what} is not positive definite") from None
    return 0.5 * (a + a.T)


class MinkowskiNorm:
    """Common interface. Subclasses implement the six batched maps."""

    variant: str = ""
    dim: int = 0

    def value(self, xi):
        raise NotImplementedError

    def covector(self, xi):
        raise NotImplementedError

    def hessian(self, xi):
        raise NotImplementedError

    def dual_value(self, alpha):
        raise NotImplementedError

    def dual_covector(self, alpha):
        raise NotImplementedError

    def dual_hessian(self, alpha):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    @property
    def symmetric(self) -> bool:
        """True when F(-xi) = F(xi) by construction."""
        return False

    def __eq__(self, other):
        return isinstance(other, MinkowskiNorm) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(repr(self.to_dict()))

    def __repr__(self):
        return f"{type(self).__name__}({self.to_dict()})"


class Quadratic(MinkowskiNorm):
    """Hilbert norm F(xi) = sqrt(xi . A xi)."""

    variant = "quadratic"

    def __init__(self, a):
        self.a = _check_spd(a, "A")
        self.a_inv = np.linalg.inv(self.a)
        self.dim = self.a.shape[0]

    @property
    def symmetric(self):
        return True

    def value(self, xi):
        xi = _as_batch(xi, self.dim)
        return np.sqrt(np.maximum(_quad(xi, self.a), 0.0))

    def covector(self, xi):
        return _mv(self.a, _as_batch(xi, self.dim))

    def hessian(self, xi):
        xi = _as_batch(xi, self.dim)
        return np.broadcast_to(self.a, xi.shape + (self.dim,)).copy()

    def dual_value(self, alpha):
        alpha = _as_batch(alpha, self.dim)
        return np.sqrt(np.maximum(_quad(alpha, self.a_inv), 0.0))

    def dual_covector(self, alpha):
        return _mv(self.a_inv, _as_batch(alpha, self.dim))

    def dual_hessian(self, alpha):
        alpha = _as_batch(alpha, self.dim)
        return np.broadcast_to(self.a_inv, alpha.shape + (self.dim,)).copy()

    def to_dict(self):
        return {"variant": self.variant, "dim": self.dim, "A": self.a.tolist()}


def _lp_value(x, p):
    ax = np.abs(x)
    if np.isinf(p):
        return ax.max(axis=-1)
    scale = ax.max(axis=-1, keepdims=True)
    safe = np.where(scale > 0, scale, 1.0)
    return scale[..., 0] * ((ax / safe) ** p).sum(axis=-1) ** (1.0 / p)


def _lp_covector(x, p):
    # J_i = N^{2-p} |x_i|^{p-1} sign(x_i), evaluated on x / N for stability
    n = _lp_value(x, p)[..., None]
    safe = np.where(n > 0, n, 1.0)
    y = x / safe
    return np.where(n > 0, n * np.sign(y) * np.abs(y) ** (p - 1), 0.0)


def _lp_hessian(x, p):
    # g = (2-p) N^{2-2p} s s^T + (p-1) N^{2-p} diag|x|^{p-2},  s = sign(x)|x|^{p-1}
    n = _lp_value(x, p)[..., None]
    safe = np.where(n > 0, n, 1.0)
    y = x / safe
    ay = np.abs(y)
    s = np.sign(y) * ay ** (p - 1)
    with np.errstate(divide="ignore"):
        diag = np.where(ay > 0, ay ** (p - 2), np.inf if p < 2 else 0.0)
    dim = x.shape[-1]
    g = (2 - p) * s[..., :, None] * s[..., None, :]
    with np.errstate(invalid="ignore"):
        g = g + (p - 1) * diag[..., None] * np.eye(dim)
    # off-diagonal entries must not pick up inf * 0
    return np.where(np.eye(dim, dtype=bool), g, np.nan_to_num(g, posinf=0.0))


class Lp(MinkowskiNorm):
    """The l^p norm, 1 < p < infinity."""

    variant = "lp"

    def __init__(self, p: float, dim: int):
        p = float(p)
        if not (p > 1.0 and np.isfinite(p)):
            raise InvalidNormError("lp requires 1 < p < inf")
        if int(dim) < 1:
            raise InvalidNormError("dim must be >= 1")
        self.p = p
        self.q = p / (p - 1.0)
        self.dim = int(dim)

    @property
    def symmetric(self):
        return True

    def value(self, xi):
        return _lp_value(_as_batch(xi, self.dim), self.p)

    def covector(self, xi):
        return _lp_covector(_as_batch(xi, self.dim), self.p)

    def hessian(self, xi):
        return _lp_hessian(_as_batch(xi, self.dim), self.p)

    def dual_value(self, alpha):
        return _lp_value(_as_batch(alpha, self.dim), self.q)

    def dual_covector(self, alpha):
        return _lp_covector(_as_batch(alpha, self.dim), self.q)

    def dual_hessian(self, alpha):
        return _lp_hessian(_as_batch(alpha, self.dim), self.q)

    def to_dict(self):
        return {"variant": self.variant, "dim": self.dim, "p": self.p}


class TwoSlope1D(MinkowskiNorm):
    """F(xi) = a*xi for xi >= 0 and b*(-xi) for xi < 0."""

    variant = "two_slope_1d"
    dim = 1

    def __init__(self, a: float, b: float):
        if not (a > 0 and b > 0):
            raise InvalidNormError("two_slope_1d requires a, b > 0")
        self.a = float(a)
        self.b = float(b)

    @property
    def symmetric(self):
        return self.a == self.b

    def _slope(self, x, a, b):
        return np.where(x >= 0, a, b)

    def value(self, xi):
        x = _as_batch(xi, 1)[..., 0]
        return np.where(x >= 0, self.a * x, -self.b * x)

    def covector(self, xi):
        x = _as_batch(xi, 1)
        return self._slope(x, self.a, self.b) ** 2 * x

    def hessian(self, xi):
        x = _as_batch(xi, 1)
        return (self._slope(x, self.a, self.b) ** 2)[..., None]

    def dual_value(self, alpha):
        x = _as_batch(alpha, 1)[..., 0]
        return np.where(x >= 0, x / self.a, -x / self.b)

    def dual_covector(self, alpha):
        x = _as_batch(alpha, 1)
        return x / self._slope(x, self.a, self.b) ** 2

    def dual_hessian(self, alpha):
        x = _as_batch(alpha, 1)
        return (1.0 / self._slope(x, self.a, self.b) ** 2)[..., None]

    def to_dict(self):
        return {"variant": self.variant, "dim": 1, "a": self.a, "b": self.b}


def _randers_parts(x, a, b):
    ax = _mv(a, x)
    s = np.sqrt(np.maximum(np.einsum("...i,...i->...", x, ax), 0.0))
    f = s + x @ b
    return ax, s, f


def _randers_value(x, a, b):
    return _randers_parts(x, a, b)[2]


def _randers_covector(x, a, b):
    ax, s, f = _randers_parts(x, a, b)
    safe = np.where(s > 0, s, 1.0)[..., None]
    w = ax / safe + b
    return np.where(s[..., None] > 0, f[..., None] * w, 0.0)


def _randers_hessian(x, a, b):
    ax, s, f = _randers_parts(x, a, b)
    safe = np.where(s > 0, s, 1.0)[..., None, None]
    w = ax / safe[..., 0] + b
    outer = ax[..., :, None] * ax[..., None, :]
    return w[..., :, None] * w[..., None, :] + f[..., None, None] * (a / safe - outer / safe**3)


class Randers(MinkowskiNorm):
    """Nonsymmetric norm F(xi) = sqrt(xi . A xi) + b . xi with |b|_{A^-1} < 1.

    Its unit ball is an off-centre ellipsoid, so the dual norm has the same
    form with parameters (Q, c) computed in closed form.
    """

    variant = "randers"

    def __init__(self, a, b):
        self.a = _check_spd(a, "A")
        self.b = np.array(b, dtype=float).reshape(-1)
        self.dim = self.a.shape[0]
        if self.b.shape != (self.dim,):
            raise InvalidNormError("b must have length dim")
        a_inv = np.linalg.inv(self.a)
        if self.b @ a_inv @ self.b >= 1.0:
            raise InvalidNormError("randers drift must satisfy b.A^-1.b < 1")
        m = self.a - np.outer(self.b, self.b)
        m_inv = np.linalg.inv(m)
        self.dual_a = (1.0 + self.b @ m_inv @ self.b) * m_inv
        self.dual_a = 0.5 * (self.dual_a + self.dual_a.T)
        self.dual_b = -m_inv @ self.b

    @property
    def symmetric(self):
        return not np.any(self.b)

    def value(self, xi):
        return _randers_value(_as_batch(xi, self.dim), self.a, self.b)

    def covector(self, xi):
        return _randers_covector(_as_batch(xi, self.dim), self.a, self.b)

    def hessian(self, xi):
        return _randers_hessian(_as_batch(xi, self.dim), self.a, self.b)

    def dual_value(self, alpha):
        return _randers_value(_as_batch(alpha, self.dim), self.dual_a, self.dual_b)

    def dual_covector(self, alpha):
        return _randers_covector(_as_batch(alpha, self.dim), self.dual_a, self.dual_b)

    def dual_hessian(self, alpha):
        return _randers_hessian(_as_batch(alpha, self.dim), self.dual_a, self.dual_b)

    def to_dict(self):
        return {"variant": self.variant, "dim": self.dim, "A": self.a.tolist(), "b": self.b.tolist()}


class Deformed(MinkowskiNorm):
    """F(xi) = F0(sigma xi) for an invertible matrix sigma.

    The dual is F0*(sigma^{-T} alpha), so both sides stay closed form.
    """

    variant = "deformed"

    def __init__(self, base: MinkowskiNorm, sigma):
        sigma = np.array(sigma, dtype=float)
        if sigma.ndim == 0:
            sigma = sigma.reshape(1, 1)
        if sigma.shape != (base.dim, base.dim):
            raise InvalidNormError("sigma must be dim x dim")
        if abs(np.linalg.det(sigma)) < 1e-14 * max(1.0, np.abs(sigma).max()) ** base.dim:
            raise InvalidNormError("sigma is not invertible")
        self.base = base
        self.sigma = sigma
        self.sigma_inv = np.linalg.inv(sigma)
        self.dim = base.dim

    @property
    def symmetric(self):
        return self.base.symmetric

    def value(self, xi):
        return self.base.value(_mv(self.sigma, _as_batch(xi, self.dim)))

    def covector(self, xi):
        j0 = self.base.covector(_mv(self.sigma, _as_batch(xi, self.dim)))
        return _mv(self.sigma.T, j0)

    def hessian(self, xi):
        g0 = self.base.hessian(_mv(self.sigma, _as_batch(xi, self.dim)))
        return self.sigma.T @ g0 @ self.sigma

    def dual_value(self, alpha):
        return self.base.dual_value(_mv(self.sigma_inv.T, _as_batch(alpha, self.dim)))

    def dual_covector(self, alpha):
        j0 = self.base.dual_covector(_mv(self.sigma_inv.T, _as_batch(alpha, self.dim)))
        return _mv(self.sigma_inv, j0)

    def dual_hessian(self, alpha):
        g0 = self.base.dual_hessian(_mv(self.sigma_inv.T, _as_batch(alpha, self.dim)))
        return self.sigma_inv @ g0 @ self.sigma_inv.T

    def to_dict(self):
        return {
            "variant": self.variant,
            "dim": self.dim,
            "base": self.base.to_dict(),
            "sigma": self.sigma.tolist(),
        }


def _invert_map(fwd, jac, target, guess, max_iter=60):
    """Damped Newton for fwd(x) = target on a batch of n-vectors.

    ``fwd`` is 1-homogeneous, so each target is normalised to unit length,
    solved, and scaled back.
    """
    target = np.asarray(target, dtype=float)
    scale = np.linalg.norm(target, axis=-1, keepdims=True)
    live = scale[..., 0] > ZERO_CUTOFF
    out = np.zeros_like(target)
    if not np.any(live):
        return out
    t = target[live] / scale[live]
    x = guess(t)
    r = fwd(x) - t
    res = np.linalg.norm(r, axis=-1)
    for _ in range(max_iter):
        active = res > NEWTON_TOL
        if not np.any(active):
            break
        step = np.zeros_like(x)
        step[active] = np.linalg.solve(jac(x[active]), r[active][..., None])[..., 0]
        lam = np.ones(len(x))
        for _ in range(30):
            trial = x - lam[:, None] * step
            rt = fwd(trial) - t
            rn = np.linalg.norm(rt, axis=-1)
            bad = active & ~(rn < (1 - 1e-4 * lam) * res) & (lam > 1e-8)
            if not np.any(bad):
                break
            lam[bad] *= 0.5
        x, r, res = trial, rt, rn
    out[live] = x * scale[live]
    return out


class Regularized(MinkowskiNorm):
    """Epsilon-regularisation of a base norm.

    lower: F^2 + eps|xi|^2 on the primal side.
    upper: F*^2 + eps|alpha|^2 on the dual side.
    full:  Hessian (g + eps)(1 + eps g)^{-1}, bounded between eps and 1/eps.

    The side without a closed form is obtained by inverting the Legendre map.
    """

    variant = "regularized"

    def __init__(self, base: MinkowskiNorm, eps: float, mode: str):
        if not eps > 0:
            raise InvalidNormError("eps must be > 0")
        if mode not in MODES:
            raise InvalidNormError(f"mode must be one of {MODES}")
        self.base = base
        self.eps = float(eps)
        self.mode = mode
        self.dim = base.dim
        self._eye = np.eye(self.dim)

    @property
    def symmetric(self):
        return self.base.symmetric

    # full mode helpers
    def full_matrix(self, g):
        """(g + eps)(1 + eps g)^{-1}, evaluated through the spectrum of g."""
        g = np.where(np.isfinite(g), g, 1e150)
        w, v = np.linalg.eigh(g)
        w = (w + self.eps) / (1.0 + self.eps * w)
        return (v * w[..., None, :]) @ np.swapaxes(v, -1, -2)

    def _full_cov(self, x):
        return _mv(self.full_matrix(self.base.hessian(x)), x)

    def _full_jac(self, x, h=1e-6):
        cols = []
        for i in range(self.dim):
            e = h * self._eye[i]
            cols.append((self._full_cov(x + e) - self._full_cov(x - e)) / (2 * h))
        return np.stack(cols, axis=-1)

    def _primal_parts(self, xi):
        if self.mode == "lower":
            f2 = self.base.value(xi) ** 2 + self.eps * np.einsum("...i,...i->...", xi, xi)
            return np.sqrt(f2)
        if self.mode == "full":
            return np.sqrt(np.maximum(np.einsum("...i,...i->...", xi, self._full_cov(xi)), 0.0))
        return None

    def value(self, xi):
        xi = _as_batch(xi, self.dim)
        if self.mode == "upper":
            return self.dual_value(self.covector(xi))
        return self._primal_parts(xi)

    def covector(self, xi):
        xi = _as_batch(xi, self.dim)
        if self.mode == "lower":
            return self.base.covector(xi) + self.eps * xi
        if self.mode == "full":
            return self._full_cov(xi)
        flat = xi.reshape(-1, self.dim)
        out = _invert_map(
            self.dual_covector,
            lambda a: self.base.dual_hessian(a) + self.eps * self._eye,
            flat,
            lambda t: self.base.covector(t),
        )
        return out.reshape(xi.shape)

    def hessian(self, xi):
        xi = _as_batch(xi, self.dim)
        if self.mode == "lower":
            return self.base.hessian(xi) + self.eps * self._eye
        if self.mode == "full":
            return self.full_matrix(self.base.hessian(xi))
        return np.linalg.inv(self.dual_hessian(self.covector(xi)))

    def dual_value(self, alpha):
        alpha = _as_batch(alpha, self.dim)
        if self.mode == "upper":
            a2 = np.einsum("...i,...i->...", alpha, alpha)
            return np.sqrt(self.base.dual_value(alpha) ** 2 + self.eps * a2)
        return self.value(self.dual_covector(alpha))

    def dual_covector(self, alpha):
        alpha = _as_batch(alpha, self.dim)
        if self.mode == "upper":
            return self.base.dual_covector(alpha) + self.eps * alpha
        flat = alpha.reshape(-1, self.dim)
        if self.mode == "lower":
            jac = lambda x: self.base.hessian(x) + self.eps * self._eye  # noqa: E731
            fwd = self.covector
        else:
            jac, fwd = self._full_jac, self._full_cov
        out = _invert_map(fwd, jac, flat, lambda t: self.base.dual_covector(t))
        return out.reshape(alpha.shape)

    def dual_hessian(self, alpha):
        alpha = _as_batch(alpha, self.dim)
        if self.mode == "upper":
            return self.base.dual_hessian(alpha) + self.eps * self._eye
        return np.linalg.inv(self.hessian(self.dual_covector(alpha)))

    def full_dual_matrix(self, alpha):
        """Dual-side full regularisation (g* + eps)(1 + eps g*)^{-1} of the base."""
        return self.full_matrix(self.base.dual_hessian(_as_batch(alpha, self.dim)))

    def to_dict(self):
        return {
            "variant": self.variant,
            "dim": self.dim,
            "base": self.base.to_dict(),
            "eps": self.eps,
            "mode": self.mode,
        }


# ---------------------------------------------------------------------------
# construction and serialisation


def quadratic(a) -> Quadratic:
    return Quadratic(a)


def lp(p: float, dim: int = 2) -> Lp:
    return Lp(p, dim)


def euclidean(dim: int) -> Quadratic:
    return Quadratic(np.eye(dim))


def two_slope_1d(a: float, b: float) -> TwoSlope1D:
    return TwoSlope1D(a, b)


def randers(a, b) -> Randers:
    return Randers(a, b)


def deformed(base: MinkowskiNorm, sigma) -> Deformed:
    return Deformed(base, sigma)


def regularize(norm: MinkowskiNorm, eps: float, mode: str = "lower") -> Regularized:
    return Regularized(norm, eps, mode)


def reverse(norm: MinkowskiNorm) -> MinkowskiNorm:
    """The norm xi -> F(-xi)."""
    if norm.symmetric:
        return norm
    if isinstance(norm, TwoSlope1D):
        return TwoSlope1D(norm.b, norm.a)
    if isinstance(norm, Randers):
        return Randers(norm.a, -norm.b)
    if isinstance(norm, Deformed):
        return Deformed(reverse(norm.base), norm.sigma)
    if isinstance(norm, Regularized):
        return Regularized(reverse(norm.base), norm.eps, norm.mode)
    raise InvalidNormError(f"cannot reverse {norm!r}")


def norm_from_dict(d: dict[str, Any]) -> MinkowskiNorm:
    """Inverse of ``MinkowskiNorm.to_dict``."""
    try:
        variant = d["variant"]
        if variant == "quadratic":
            norm = Quadratic(d["A"])
        elif variant == "lp":
            norm = Lp(d["p"], d["dim"])
        elif variant == "two_slope_1d":
            norm = TwoSlope1D(d["a"], d["b"])
        elif variant == "randers":
            norm = Randers(d["A"], d["b"])
        elif variant == "deformed":
            norm = Deformed(norm_from_dict(d["base"]), d["sigma"])
        elif variant == "regularized":
            norm = Regularized(norm_from_dict(d["base"]), d["eps"], d.get("mode", "lower"))
        else:
            raise InvalidNormError(f"unknown variant {variant!r}")
    except KeyError as exc:
        raise InvalidNormError(f"missing norm parameter {exc.args[0]!r}") from None
    if "dim" in d and int(d["dim"]) != norm.dim:
        raise InvalidNormError(f"dim {d['dim']} does not match parameters ({norm.dim})")
    return norm


# ---------------------------------------------------------------------------
# single-point API


@dataclass(frozen=True)
class NormEval:
    value: float
    covector: np.ndarray
    hessian: np.ndarray | None


def _point_eval(xi, dim, val, cov, hess, want_hessian):
    xi = np.asarray(xi, dtype=float).reshape(dim)
    small = np.linalg.norm(xi) <= ZERO_CUTOFF
    if small:
        if want_hessian:
            raise DegeneratePointError("second derivative requested at the origin")
        return NormEval(0.0, np.zeros(dim), None)
    h = np.array(hess(xi)) if want_hessian else None
    return NormEval(float(val(xi)), np.array(cov(xi)), h)


def eval_norm(norm: MinkowskiNorm, xi, hessian: bool = True) -> NormEval:
    """F(xi), J(xi) and g(xi) at one vector."""
    return _point_eval(xi, norm.dim, norm.value, norm.covector, norm.hessian, hessian)


def dual_eval(norm: MinkowskiNorm, alpha, hessian: bool = True) -> NormEval:
    """F*(alpha), J*(alpha) and g*(alpha) at one covector."""
    return _point_eval(
        alpha, norm.dim, norm.dual_value, norm.dual_covector, norm.dual_hessian, hessian
    )


def legendre(norm: MinkowskiNorm, xi) -> np.ndarray:
    """J(xi); zero at the origin."""
    xi = np.asarray(xi, dtype=float)
    out = norm.covector(xi)
    tiny = np.linalg.norm(xi, axis=-1, keepdims=True) <= ZERO_CUTOFF
    return np.where(tiny, 0.0, out)


def legendre_inv(norm: MinkowskiNorm, alpha) -> np.ndarray:
    """J*(alpha) = J^{-1}(alpha); zero at the origin."""
    alpha = np.asarray(alpha, dtype=float)
    out = norm.dual_covector(alpha)
    tiny = np.linalg.norm(alpha, axis=-1, keepdims=True) <= ZERO_CUTOFF
    return np.where(tiny, 0.0, out)


# ---------------------------------------------------------------------------
# uniform convexity / smoothness constants


@dataclass(frozen=True)
class ConvexityConstants:
    kappa: float
    kappa_star: float
    lambda_: float
    lambda_star: float
    sample_budget: int
    seed: int
    kappa_degenerate: bool
    kappa_star_degenerate: bool

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "kappa_star": self.kappa_star,
            "lambda": self.lambda_,
            "lambda_star": self.lambda_star,
            "sample_budget": self.sample_budget,
            "seed": self.seed,
            "kappa_degenerate": self.kappa_degenerate,
            "kappa_star_degenerate": self.kappa_star_degenerate,
        }


DEGENERACY_THRESHOLD = 1e-2


def sphere_samples(dim: int, count: int, seed: int) -> np.ndarray:
    """Low-discrepancy points on the unit sphere, plus near-axis stress points."""
    if dim == 1:
        pts = np.array([[1.0], [-1.0]])
    elif dim == 2:
        k = max(count, 8)
        ang = (np.arange(k) + 0.5) * 2 * np.pi / k
        pts = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    else:
        sob = qmc.Sobol(d=dim, scramble=True, seed=seed)
        m = int(np.ceil(np.log2(max(count, 2))))
        u = np.clip(sob.random_base2(m)[:count], 1e-12, 1 - 1e-12)
        from scipy.special import ndtri

        pts = ndtri(u)
    if dim > 1:
        # points just off the coordinate axes and diagonals, where l^p-type
        # norms attain their extreme curvature
        extra = []
        for i in range(dim):
            for sgn in (1.0, -1.0):
                for off in 10.0 ** -np.arange(1, 9):
                    v = np.full(dim, off)
                    v[i] = sgn
                    extra.append(v)
        for signs in np.array(np.meshgrid(*[[1.0, -1.0]] * dim)).reshape(dim, -1).T:
            extra.append(signs)
        pts = np.vstack([pts, np.array(extra)])
    return pts / np.linalg.norm(pts, axis=-1, keepdims=True)


def convexity_constants(norm: MinkowskiNorm, sample_budget: int = 4096, seed: int = 0) -> ConvexityConstants:
    """Sampled estimates of kappa, kappa*, lambda, lambda*.

    kappa* is the infimum and 1/kappa the supremum of eta.g(xi).eta / F(eta)^2
    over sampled pairs; lambda* and 1/lambda are the extreme eigenvalues of
    g(xi). Sampling can only overestimate the true constants. Constants that
    collapse below ``DEGENERACY_THRESHOLD`` are flagged instead of raised.
    """
    if sample_budget < 1:
        raise ValueError("sample_budget must be >= 1")
    per_side = max(int(np.sqrt(sample_budget)), 8)
    xi = sphere_samples(norm.dim, per_side, seed)
    eta = sphere_samples(norm.dim, per_side, seed + 1)
    g = norm.hessian(xi)
    g = np.where(np.isfinite(g), g, 1e300)
    f2 = norm.value(eta) ** 2
    ratio = np.einsum("bi,aij,bj->ab", eta, g, eta) / f2[None, :]
    kappa_star = float(min(ratio.min(), 1.0))
    kappa = float(min(1.0 / ratio.max(), 1.0))
    eig = np.linalg.eigvalsh(g)
    lam_star = float(max(eig.min(), 0.0))
    lam = float(1.0 / eig.max())
    return ConvexityConstants(
        kappa=kappa,
        kappa_star=kappa_star,
        lambda_=lam,
        lambda_star=lam_star,
        sample_budget=int(ratio.size),
        seed=int(seed),
        kappa_degenerate=kappa < DEGENERACY_THRESHOLD,
        kappa_star_degenerate=kappa_star < DEGENERACY_THRESHOLD,
    )


class DualNorm(MinkowskiNorm):
    """View of F* as a norm in its own right (F** = F)."""

    variant = "dual"

    def __init__(self, norm: MinkowskiNorm):
        self.norm = norm
        self.dim = norm.dim

    @property
    def symmetric(self):
        return self.norm.symmetric

    def value(self, xi):
        return self.norm.dual_value(xi)

    def covector(self, xi):
        return self.norm.dual_covector(xi)

    def hessian(self, xi):
        return self.norm.dual_hessian(xi)

    def dual_value(self, alpha):
        return self.norm.value(alpha)

    def dual_covector(self, alpha):
        return self.norm.covector(alpha)

    def dual_hessian(self, alpha):
        return self.norm.hessian(alpha)

    def to_dict(self):
        return {"variant": "dual", "dim": self.dim, "of": self.norm.to_dict()}


def dual_norm(norm: MinkowskiNorm) -> MinkowskiNorm:
    if isinstance(norm, DualNorm):
        return norm.norm
    return DualNorm(norm)


def norm_scale_bounds(norm: MinkowskiNorm, count: int = 512, seed: int = 0) -> tuple[float, float]:
    """min and max of F(eta)^2/|eta|^2 over sampled unit vectors."""
    eta = sphere_samples(norm.dim, count, seed)
    f2 = norm.value(eta) ** 2
    return float(f2.min()), float(f2.max())
