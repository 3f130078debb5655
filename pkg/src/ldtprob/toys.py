"""Small Gaussian problems with known tail probabilities, used as oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import log_ndtr, ndtr

from .measures import GaussianMeasure
from .optimize import OptimumRecord, Problem


@dataclass(frozen=True)
class LinearToy:
    """``F(theta) = a^T theta`` with ``theta ~ N(mean, C)``.

    The optimizer is ``mean + lambda C a`` and ``P(z)`` is a normal tail.
    """

    a: np.ndarray
    measure: GaussianMeasure

    @classmethod
    def standard(cls, n: int = 1, a=None) -> "LinearToy":
        a = np.ones(n) if a is None else np.asarray(a, dtype=float)
        return cls(a, GaussianMeasure.isotropic(a.size))

    @property
    def sigma(self) -> float:
        return self.measure.c_norm(self.a)

    def F(self, theta) -> float:
        return float(np.asarray(theta, dtype=float) @ self.a)

    __call__ = F

    def vectorized(self, thetas) -> np.ndarray:
        return np.asarray(thetas, dtype=float) @ self.a

    def problem(self) -> Problem:
        a = self.a
        return Problem.from_functions(self.measure, self.F, lambda th: a.copy(),
                                      lambda th: np.zeros((a.size, a.size)))

    def optimizer(self, z: float) -> np.ndarray:
        s2 = self.sigma**2
        return self.measure.mean + (z - self.F(self.measure.mean)) / s2 * (self.measure.cov @ self.a)

    def rate(self, z: float) -> float:
        return 0.5 * ((z - self.F(self.measure.mean)) / self.sigma) ** 2

    def probability(self, z: float) -> float:
        return float(ndtr(-(z - self.F(self.measure.mean)) / self.sigma))

    def log_probability(self, z: float) -> float:
        return float(log_ndtr(-(z - self.F(self.measure.mean)) / self.sigma))


@dataclass(frozen=True)
class ParabolicToy:
    """``F(theta) = theta_1 + c theta_2^2`` with ``theta ~ N(0, I_2)``.

    For ``z <= 1/(2c)`` the optimizer is ``(z, 0)``; beyond, two symmetric
    optimizers ``(1/(2c), +-sqrt((z - 1/(2c))/c))`` share the rate
    ``z/(2c) - 1/(8c^2)``.
    """

    c: float = 0.1

    @property
    def measure(self) -> GaussianMeasure:
        return GaussianMeasure.isotropic(2)

    @property
    def z_split(self) -> float:
        return 0.5 / self.c

    def F(self, theta) -> float:
        t = np.asarray(theta, dtype=float)
        return float(t[0] + self.c * t[1] ** 2)

    __call__ = F

    def vectorized(self, thetas) -> np.ndarray:
        t = np.asarray(thetas, dtype=float)
        return t[:, 0] + self.c * t[:, 1] ** 2

    def grad(self, theta) -> np.ndarray:
        t = np.asarray(theta, dtype=float)
        return np.array([1.0, 2.0 * self.c * t[1]])

    def hess(self, theta) -> np.ndarray:
        return np.array([[0.0, 0.0], [0.0, 2.0 * self.c]])

    def problem(self) -> Problem:
        return Problem.from_functions(self.measure, self.F, self.grad, self.hess)

    def optimizers(self, z: float) -> list[np.ndarray]:
        if z <= self.z_split:
            return [np.array([z, 0.0])]
        t1 = self.z_split
        t2 = math.sqrt((z - t1) / self.c)
        return [np.array([t1, t2]), np.array([t1, -t2])]

    def rate(self, z: float) -> float:
        if z <= self.z_split:
            return 0.5 * z * z
        return z / (2.0 * self.c) - 1.0 / (8.0 * self.c**2)

    def lam(self, z: float) -> float:
        """Multiplier with ``grad I = lambda grad F`` at the optimizers."""
        return z if z <= self.z_split else self.z_split

    def records(self, z: float) -> list[OptimumRecord]:
        return [
            OptimumRecord(lam=self.lam(z), theta=th, z=z, I=self.rate(z), kkt=0.0, iterations=0, converged=True)
            for th in self.optimizers(z)
        ]

    def probability(self, z: float) -> float:
        """``2 int_0^inf phi(t) Phi(-(z - c t^2)) dt`` by adaptive quadrature."""
        c = self.c

        def f(t):
            return math.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi) * ndtr(-(z - c * t * t))

        # the integrand peaks near the optimizer's second coordinate
        pts = [o[1] for o in self.optimizers(z) if o[1] > 0]
        val, _ = integrate.quad(f, 0.0, np.inf, epsabs=0.0, epsrel=1e-11, limit=400)
        if pts:
            t2 = pts[0]
            lo = integrate.quad(f, 0.0, t2, epsabs=0.0, epsrel=1e-11, limit=400)[0]
            hi = integrate.quad(f, t2, np.inf, epsabs=0.0, epsrel=1e-11, limit=400)[0]
            val = lo + hi
        return 2.0 * val


def paraboloid_measure(beta: float, curvatures) -> float:
    """Standard normal measure of ``{xi_1 >= beta - 1/2 sum_i k_i xi_{i+1}^2}``.

    Exact up to quadrature error for one or two curvatures ``k_i``, which
    need ``beta * k_i < 1`` for the set to have finite measure.  This is
    ``E[Phi(-(beta - 1/2 sum_i k_i zeta_i^2))]`` over standard normal
    ``zeta``; the Gaussian factor is integrated in polar form for n = 3.
    """
    k = np.atleast_1d(np.asarray(curvatures, dtype=float))
    if np.any(beta * k >= 1.0):
        raise ValueError("need beta * k_i < 1 for every curvature")
    tail = lambda u: ndtr(-(beta - u))  # noqa: E731
    opts = dict(epsabs=0.0, epsrel=1e-11, limit=400)
    if k.size == 1:
        f = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi) * tail(0.5 * k[0] * t * t)  # noqa: E731
        return 2.0 * integrate.quad(f, 0.0, np.inf, **opts)[0]
    if k.size == 2:
        def radial(phi):
            q = k[0] * math.cos(phi) ** 2 + k[1] * math.sin(phi) ** 2
            g = lambda r: r * math.exp(-0.5 * r * r) * tail(0.5 * q * r * r)  # noqa: E731
            return integrate.quad(g, 0.0, np.inf, **opts)[0]

        # the integrand is pi-periodic and even in phi
        return 4.0 * integrate.quad(radial, 0.0, 0.5 * math.pi, **opts)[0] / (2.0 * math.pi)
    raise ValueError("paraboloid_measure supports one or two curvatures")
