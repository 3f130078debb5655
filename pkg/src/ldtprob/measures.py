"""Finite-dimensional probability measures and their large-deviation rates.

Gaussian measures carry everything the estimators need (rate, cumulant
generating function, symmetric covariance square root, whitening).  The
exponential measure and :func:`legendre_numeric` cover non-Gaussian inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import optimize

from .errors import ConfigError, ConvergenceError, DegenerateDirectionError

INFINITE_RATE = float("inf")
"""Rate assigned to points outside the support of a measure."""


def is_infinite_rate(value: float) -> bool:
    return value == INFINITE_RATE


def _vec(x, n: int, name: str = "theta") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape != (n,):
        raise ValueError(f"{name} has shape {x.shape}, expected ({n},)")
    return x


@dataclass(frozen=True, eq=False)
class GaussianMeasure:
    """Gaussian measure N(mean, cov) on R^n.

    The covariance square root is the symmetric one, computed from an
    eigendecomposition, so ``sqrt_cov @ sqrt_cov.T == cov``.
    """

    mean: np.ndarray
    cov: np.ndarray
    sqrt_cov: np.ndarray = field(init=False, repr=False)
    _inv_sqrt: np.ndarray = field(init=False, repr=False)
    _prec: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float)).copy()
        n = mean.size
        if mean.ndim != 1 or cov.shape != (n, n):
            raise ValueError(f"mean has shape {mean.shape} but cov has shape {cov.shape}")
        scale = max(np.max(np.abs(cov)), np.finfo(float).tiny)
        if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
            raise ValueError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        w, V = np.linalg.eigh(cov)
        if np.any(w <= 0.0):
            raise ValueError(f"covariance is not positive definite (min eigenvalue {w.min():.3g})")
        sq = np.sqrt(w)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "sqrt_cov", (V * sq) @ V.T)
        object.__setattr__(self, "_inv_sqrt", (V / sq) @ V.T)
        object.__setattr__(self, "_prec", (V / w) @ V.T)

    @classmethod
    def isotropic(cls, n: int, std: float = 1.0, mean=None) -> "GaussianMeasure":
        m = np.zeros(n) if mean is None else mean
        return cls(m, std**2 * np.eye(n))

    @classmethod
    def from_config(cls, block: Mapping) -> "GaussianMeasure":
        """Build from a mapping with ``mean`` and either ``cov`` or ``diag``."""
        unknown = set(block) - {"mean", "cov", "diag"}
        if unknown:
            raise ConfigError(f"unknown measure keys: {sorted(unknown)}")
        if "mean" not in block:
            raise ConfigError("measure block needs 'mean'")
        mean = np.atleast_1d(np.asarray(block["mean"], dtype=float))
        n = mean.size
        if ("cov" in block) == ("diag" in block):
            raise ConfigError("measure block needs exactly one of 'cov' or 'diag'")
        if "diag" in block:
            cov = np.diag(np.broadcast_to(np.asarray(block["diag"], dtype=float), (n,)))
        else:
            flat = np.asarray(block["cov"], dtype=float).ravel()
            if flat.size != n * n:
                raise ConfigError(f"'cov' has {flat.size} entries, expected {n * n}")
            cov = flat.reshape(n, n)
        try:
            return cls(mean, cov)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_config(self) -> dict:
        return {"mean": self.mean.tolist(), "cov": self.cov.ravel().tolist()}

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def precision(self) -> np.ndarray:
        return self._prec

    @property
    def inv_sqrt_cov(self) -> np.ndarray:
        return self._inv_sqrt

    def rate(self, theta) -> float:
        return gaussian_rate(self, theta)

    def rate_grad(self, theta) -> np.ndarray:
        return gaussian_rate_grad(self, theta)

    def cgf(self, eta) -> float:
        return gaussian_cgf(self, eta)

    def cgf_grad(self, eta) -> np.ndarray:
        eta = _vec(eta, self.dim, "eta")
        return self.mean + self.cov @ eta

    def sample(self, seed, count: int) -> np.ndarray:
        return sample(self, seed, count)

    def c_norm(self, g) -> float:
        """C-weighted norm sqrt(g^T C g), the dual norm of the rate."""
        g = np.asarray(g, dtype=float)
        return float(np.sqrt(max(g @ self.cov @ g, 0.0)))


@dataclass(frozen=True, eq=False)
class ExponentialMeasure:
    """Product of exponential distributions with rates ``alpha`` on theta >= 0."""

    rates: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.rates, dtype=float)).copy()
        if a.ndim != 1 or np.any(~(a > 0.0)):
            raise ValueError("exponential rates must be strictly positive")
        a.setflags(write=False)
        object.__setattr__(self, "rates", a)

    @classmethod
    def from_config(cls, block: Mapping) -> "ExponentialMeasure":
        unknown = set(block) - {"rates"}
        if unknown or "rates" not in block:
            raise ConfigError("exponential measure block takes exactly the key 'rates'")
        try:
            return cls(block["rates"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def dim(self) -> int:
        return self.rates.size

    def rate(self, theta) -> float:
        return exponential_rate(self, theta)

    def cgf(self, eta) -> float:
        eta = _vec(eta, self.dim, "eta")
        r = eta / self.rates
        if np.any(r >= 1.0):
            return INFINITE_RATE
        return float(-np.sum(np.log1p(-r)))

    def cgf_grad(self, eta) -> np.ndarray:
        eta = _vec(eta, self.dim, "eta")
        return 1.0 / (self.rates - eta)


def gaussian_rate(m: GaussianMeasure, theta) -> float:
    """Rate 1/2 (theta - mean)^T C^{-1} (theta - mean)."""
    d = _vec(theta, m.dim) - m.mean
    y = m.inv_sqrt_cov @ d
    return 0.5 * float(y @ y)


def gaussian_rate_grad(m: GaussianMeasure, theta) -> np.ndarray:
    """Gradient C^{-1} (theta - mean)."""
    return m.precision @ (_vec(theta, m.dim) - m.mean)


def gaussian_cgf(m: GaussianMeasure, eta) -> float:
    """Cumulant generating function eta^T mean + 1/2 eta^T C eta."""
    eta = _vec(eta, m.dim, "eta")
    return float(eta @ m.mean + 0.5 * eta @ m.cov @ eta)


def exponential_rate(m: ExponentialMeasure, theta) -> float:
    """Rate sum_k (alpha_k theta_k - 1 - log(alpha_k theta_k)) on theta > 0.

    Returns :data:`INFINITE_RATE` outside the support.
    """
    theta = _vec(theta, m.dim)
    if np.any(theta <= 0.0):
        return INFINITE_RATE
    x = m.rates * theta
    return float(np.sum(x - 1.0 - np.log(x)))


def exponential_rate_grad(m: ExponentialMeasure, theta) -> np.ndarray:
    theta = _vec(theta, m.dim)
    return m.rates - 1.0 / theta


def legendre_numeric(
    cgf: Callable[[np.ndarray], float],
    cgf_grad: Callable[[np.ndarray], np.ndarray],
    theta,
    *,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    eta0=None,
) -> float:
    """Numerical Legendre transform ``max_eta <eta, theta> - S(eta)``.

    BFGS ascent on the concave objective; points where ``S`` is infinite are
    treated as infeasible by the line search.  Convergence requires
    ``|theta - grad S(eta)| <= tol * max(1, |theta|)``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    eta = np.zeros_like(theta) if eta0 is None else np.array(eta0, dtype=float)
    scale = max(1.0, float(np.linalg.norm(theta)))

    def neg(e):
        s = cgf(e)
        if s == INFINITE_RATE:
            return np.inf, np.full_like(e, np.nan)
        return float(s - e @ theta), cgf_grad(e) - theta

    if not np.isfinite(neg(eta)[0]):
        raise ValueError("starting point outside the domain of the cgf")
    res = optimize.minimize(
        neg, eta, jac=True, method="BFGS",
        options={"gtol": tol * scale, "maxiter": max_iter},
    )
    eta = res.x
    # Newton polish with a finite-difference Jacobian of grad S; BFGS line
    # searches lose precision well before the 1e-10 gradient target
    val, g = neg(eta)
    for _ in range(50):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol * scale:
            return -val
        n = eta.size
        Hs = np.empty((n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1e-6 * max(1.0, abs(eta[i]))
            Hs[:, i] = (cgf_grad(eta + e) - cgf_grad(eta - e)) / (2.0 * e[i])
        step = np.linalg.solve(0.5 * (Hs + Hs.T), -g)
        t = 1.0
        while t > 1e-12:
            cv, cg = neg(eta + t * step)
            if np.isfinite(cv) and np.linalg.norm(cg) < gnorm:
                break
            t *= 0.5
        else:
            break
        eta, val, g = eta + t * step, cv, cg
    raise ConvergenceError(
        f"Legendre ascent stopped at gradient norm {np.linalg.norm(g):.3g}", last=eta
    )


def sample(m: GaussianMeasure, seed, count: int) -> np.ndarray:
    """``count`` draws ``mean + sqrt_cov @ zeta``, returned with shape ``(count, n)``."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    rng = np.random.default_rng(seed)
    zeta = rng.standard_normal((count, m.dim))
    return m.mean + zeta @ m.sqrt_cov.T


@dataclass(frozen=True, eq=False)
class WhiteningMap:
    """Affine map ``theta = A xi + mean`` with ``A = C^{1/2} R``.

    ``xi_star = (|xi*|, 0, ..., 0)`` is the image of the optimizer.
    """

    A: np.ndarray
    R: np.ndarray
    mean: np.ndarray
    xi_star: np.ndarray
    sqrt_cov: np.ndarray

    @property
    def beta(self) -> float:
        """Distance ``|xi*|`` of the optimizer from the origin."""
        return float(self.xi_star[0])

    def to_xi(self, theta) -> np.ndarray:
        return np.linalg.solve(self.A, np.asarray(theta, dtype=float) - self.mean)

    def to_theta(self, xi) -> np.ndarray:
        return self.A @ np.asarray(xi, dtype=float) + self.mean


def householder_to_e1(u: np.ndarray) -> np.ndarray:
    """Orthogonal ``R`` with ``R.T @ u = |u| e1`` (reflection plus sign fix)."""
    u = np.asarray(u, dtype=float)
    n = u.size
    nu = np.linalg.norm(u)
    if nu == 0.0:
        raise DegenerateDirectionError("cannot align a zero vector")
    e = u / nu
    # reflect e to -sign(e1) e1 for stability, then flip the first axis
    s = 1.0 if e[0] >= 0 else -1.0
    w = e.copy()
    w[0] += s
    Hh = np.eye(n) - 2.0 * np.outer(w, w) / (w @ w)
    # Hh e = -s e1, so with D = diag(-s, 1, ..., 1): (Hh^T D)^T e = D Hh e = e1
    D = np.ones(n)
    D[0] = -s
    return Hh.T * D  # R = Hh^T D, i.e. columns scaled


def build_whitening(m: GaussianMeasure, theta_star) -> WhiteningMap:
    """Whitening that puts the optimizer on the positive first axis."""
    theta_star = _vec(theta_star, m.dim, "theta_star")
    u = m.inv_sqrt_cov @ (theta_star - m.mean)
    if np.linalg.norm(u) == 0.0:
        raise DegenerateDirectionError("optimizer coincides with the mean; no normal direction")
    R = householder_to_e1(u)
    xi = np.zeros(m.dim)
    xi[0] = np.linalg.norm(u)
    return WhiteningMap(A=m.sqrt_cov @ R, R=R, mean=m.mean, xi_star=xi, sqrt_cov=m.sqrt_cov)
