"""Tail probability estimators built on LDT optimizers.

All estimators target ``P(z) = P(F(theta) >= z)`` for Gaussian ``theta``.
Sampling estimators return normal-approximation 95% intervals computed from
the empirical variance of the (weighted) summand.  Tail quantities are carried
in log space internally so values around 1e-15 and below stay accurate.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import logsumexp, ndtr

from .errors import CurvatureError, NumericalError
from .measures import GaussianMeasure, build_whitening, gaussian_rate

Z95 = 1.959963984540054
MAX_FAILURE_FRACTION = 0.01


@dataclass
class ProbabilityEstimate:
    """One tail probability estimate.

    ``log_p`` is the natural log of ``p_hat`` and stays finite when ``p_hat``
    underflows.  ``bound`` holds the first-order asymptotic value for the LDT
    based methods.
    """

    z: float
    p_hat: float
    method: str
    ci_low: float | None = None
    ci_high: float | None = None
    n_samples: int | None = None
    n_eigs: int | None = None
    I_star: float | None = None
    log_p: float | None = None
    bound: float | None = None
    failures: int = 0

    def __post_init__(self):
        if self.log_p is None:
            self.log_p = math.log(self.p_hat) if self.p_hat > 0 else -math.inf

    @property
    def log10_p(self) -> float:
        return self.log_p / math.log(10.0)

    def row(self) -> dict:
        nan = float("nan")
        return {
            "z": self.z,
            "p": self.p_hat,
            "ci_low": nan if self.ci_low is None else self.ci_low,
            "ci_high": nan if self.ci_high is None else self.ci_high,
            "method": self.method,
        }


@dataclass
class SormSpectrum:
    """Eigenvalues of the projected covariance-preconditioned Hessian of F."""

    eigenvalues: np.ndarray
    lam: float
    dense: bool = True

    @property
    def scaled(self) -> np.ndarray:
        return self.lam * self.eigenvalues

    def rows(self) -> list[tuple[int, float, float]]:
        return [(i + 1, float(e), float(self.lam * e)) for i, e in enumerate(self.eigenvalues)]


@dataclass
class OptimizerPoint:
    """Minimal optimizer description the LDT estimators need."""

    theta: np.ndarray
    lam: float
    z: float
    I: float = field(default=float("nan"))


def _as_point(rec, measure: GaussianMeasure | None = None) -> OptimizerPoint:
    if isinstance(rec, OptimizerPoint):
        pt = rec
    else:
        pt = OptimizerPoint(np.asarray(rec.theta, dtype=float), float(rec.lam), float(rec.z), float(rec.I))
    if measure is not None and not np.isfinite(pt.I):
        pt.I = gaussian_rate(measure, pt.theta)
    return pt


# ----------------------------------------------------------------------------
# sampling


def evaluate_many(F: Callable, thetas: np.ndarray, workers: int = 1, chunksize: int = 16):
    """Evaluate ``F`` on every row; failures become NaN.  Order is preserved.

    If ``F`` has a ``vectorized`` attribute it is called once on the whole
    ``(N, n)`` batch instead.
    """
    thetas = np.asarray(thetas, dtype=float)
    batch = getattr(F, "vectorized", None)
    if batch is not None:
        return np.asarray(batch(thetas), dtype=float).reshape(len(thetas))
    if workers > 1 and len(thetas) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            vals = list(pool.map(_safe_call, [F] * len(thetas), thetas, chunksize=chunksize))
    else:
        vals = [_safe_call(F, t) for t in thetas]
    return np.array(vals, dtype=float)


def _safe_call(F, theta):
    try:
        return float(F(theta))
    except NumericalError:
        return float("nan")


def _check_failures(values: np.ndarray) -> int:
    nfail = int(np.count_nonzero(np.isnan(values)))
    if nfail > MAX_FAILURE_FRACTION * values.size:
        raise NumericalError(f"{nfail} of {values.size} forward evaluations failed (> 1%)")
    return nfail


def _summand_estimate(y: np.ndarray, scale_log: float = 0.0):
    """Mean and normal 95% interval of ``exp(scale_log) * y``."""
    n = y.size
    m = float(np.mean(y))
    var = max(float(np.mean(y * y)) - m * m, 0.0)
    half = Z95 * math.sqrt(var / n)
    s = math.exp(scale_log)
    return s * m, s * (m - half), s * (m + half)


def standard_normal_draws(seed, N: int, n: int) -> np.ndarray:
    """The shared ``(N, n)`` standard normal batch used by MC and IS."""
    return np.random.default_rng(seed).standard_normal((N, n))


def mc_values(F: Callable, measure: GaussianMeasure, N: int, seed, workers: int = 1) -> np.ndarray:
    """Event values on ``N`` prior samples (NaN marks a failed solve)."""
    if N < 1:
        raise ValueError("N must be positive")
    theta = measure.mean + standard_normal_draws(seed, N, measure.dim) @ measure.sqrt_cov.T
    return evaluate_many(F, theta, workers)


def mc_from_values(values: np.ndarray, z) -> ProbabilityEstimate | list[ProbabilityEstimate]:
    """MC estimates at one or several thresholds from a shared sample batch."""
    nfail = _check_failures(values)
    ok = values[~np.isnan(values)]
    zs = np.atleast_1d(z)
    out = []
    for zi in zs:
        y = (ok >= zi).astype(float)
        p, lo, hi = _summand_estimate(y)
        out.append(ProbabilityEstimate(float(zi), p, "mc", lo, hi, n_samples=ok.size, failures=nfail))
    return out[0] if np.ndim(z) == 0 else out


def mc_estimate(F: Callable, measure: GaussianMeasure, z, N: int, seed, workers: int = 1):
    """Plain Monte Carlo ``(1/N) sum 1{F(theta_k) >= z}``."""
    return mc_from_values(mc_values(F, measure, N, seed, workers), z)


@dataclass
class ISBatch:
    """Event values and log likelihood ratios for one IS sample batch."""

    values: np.ndarray
    log_w: np.ndarray
    centers: np.ndarray


def is_batch(
    F: Callable, measure: GaussianMeasure, centers, N: int, seed, workers: int = 1
) -> ISBatch:
    """Draw ``N`` samples per center from ``N(center, C)`` and weight them.

    With several centers the proposal is the equal-weight mixture and the
    weights use the balance heuristic ``phi / ((1/J) sum_j phi_j)``; samples
    are allocated round-robin so the mixture is stratified.  A single center
    equal to the mean gives weights that are exactly one.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    J = centers.shape[0]
    zeta = standard_normal_draws(seed, N * J, measure.dim)
    comp = np.arange(N * J) % J
    theta = centers[comp] + zeta @ measure.sqrt_cov.T
    Pd = (centers - measure.mean) @ measure.precision
    Istar = 0.5 * np.sum((centers - measure.mean) * Pd, axis=1)
    # log(phi_j / phi_0) at every sample: I_j + (theta - c_j)^T P (c_j - mean)
    lr = Istar[None, :] + theta @ Pd.T - np.sum(centers * Pd, axis=1)[None, :]
    if J == 1:
        log_w = -lr[:, 0]
    else:
        log_w = -(logsumexp(lr, axis=1) - math.log(J))
    values = evaluate_many(F, theta, workers)
    return ISBatch(values=values, log_w=log_w, centers=centers)


def is_from_batch(batch: ISBatch, z, method: str = "is"):
    nfail = _check_failures(batch.values)
    ok = ~np.isnan(batch.values)
    v = batch.values[ok]
    lw = batch.log_w[ok]
    shift = float(np.max(lw)) if lw.size else 0.0
    w = np.exp(lw - shift)
    zs = np.atleast_1d(z)
    out = []
    for zi in zs:
        y = np.where(v >= zi, w, 0.0)
        p, lo, hi = _summand_estimate(y, shift)
        m = float(np.mean(y))
        log_p = math.log(m) + shift if m > 0 else -math.inf
        out.append(ProbabilityEstimate(float(zi), p, method, lo, hi, n_samples=v.size, log_p=log_p, failures=nfail))
    return out[0] if np.ndim(z) == 0 else out


def is_estimate(
    F: Callable, measure: GaussianMeasure, optimum, z, N: int, seed, workers: int = 1
):
    """Mean-shifted importance sampling around one optimizer (or several).

    ``optimum`` is an optimizer record, a point, or an array of centers.
    """
    if hasattr(optimum, "theta"):
        centers = np.asarray(optimum.theta, dtype=float)
    else:
        centers = np.asarray(optimum, dtype=float)
    batch = is_batch(F, measure, centers, N, seed, workers)
    out = is_from_batch(batch, z)
    for est in np.atleast_1d(out):
        if centers.ndim == 1:
            est.I_star = gaussian_rate(measure, centers)
    return out


def is_curve(
    F: Callable, measure: GaussianMeasure, optima: Sequence, zs, N: int, seed, workers: int = 1
) -> list[ProbabilityEstimate]:
    """IS curve where each threshold uses the batch of the nearest optimizer in z."""
    zs = np.asarray(zs, dtype=float)
    zopt = np.array([o.z for o in optima])
    nearest = np.argmin(np.abs(zs[:, None] - zopt[None, :]), axis=1)
    out: list[ProbabilityEstimate | None] = [None] * zs.size
    for j, opt in enumerate(optima):
        idx = np.flatnonzero(nearest == j)
        if idx.size == 0:
            continue
        batch = is_batch(F, measure, np.asarray(opt.theta, dtype=float), N, _child_seed(seed, j), workers)
        for i, est in zip(idx, is_from_batch(batch, zs[idx])):
            est.I_star = float(opt.I) if np.isfinite(getattr(opt, "I", np.nan)) else gaussian_rate(measure, opt.theta)
            out[i] = est
    return out


def _child_seed(seed, j: int) -> int:
    return int(np.random.SeedSequence([0 if seed is None else int(seed), j]).generate_state(1)[0])


# ----------------------------------------------------------------------------
# first and second order approximations


def log_form_bound(I_star: float) -> float:
    """Log of the asymptotic half-space value ``(2 pi)^{-1/2} e^{-I} / sqrt(2 I)``."""
    return -0.5 * math.log(2.0 * math.pi) - I_star - 0.5 * math.log(2.0 * I_star)


def form_estimate(optimum, measure: GaussianMeasure | None = None) -> ProbabilityEstimate:
    """Half-space probability ``Phi(-sqrt(2 I*))``."""
    pt = _as_point(optimum, measure)
    I = pt.I
    beta = math.sqrt(2.0 * I)
    p = float(ndtr(-beta))
    log_p = math.log(p) if p > 0 else _log_ndtr_neg(beta)
    bound = math.exp(log_form_bound(I)) if I > 0 else float("inf")
    return ProbabilityEstimate(pt.z, p, "form", I_star=I, log_p=log_p, bound=bound)


def _log_ndtr_neg(beta: float) -> float:
    from scipy.special import log_ndtr

    return float(log_ndtr(-beta))


def _sorm_from_eigs(pt: OptimizerPoint, eigs: np.ndarray, method: str, dense: bool, n_eigs=None):
    lam = pt.lam
    x = lam * eigs
    for i, xi in enumerate(x):
        if not 1.0 - xi > 0.0:
            raise CurvatureError(i, float(xi))
    log_bound = log_form_bound(pt.I)
    log_p = log_bound - 0.5 * float(np.sum(np.log1p(-x)))
    est = ProbabilityEstimate(
        pt.z, math.exp(log_p), method, I_star=pt.I, log_p=log_p, bound=math.exp(log_bound),
        n_eigs=len(eigs) if n_eigs is None else n_eigs,
    )
    return est, SormSpectrum(np.asarray(eigs, dtype=float), lam, dense)


def projected_hessian(measure: GaussianMeasure, theta_star, hess: np.ndarray) -> np.ndarray:
    """``P_n A^T hess A P_n^T`` with ``A = C^{1/2} R`` from the whitening map."""
    W = build_whitening(measure, theta_star)
    M = W.A.T @ hess @ W.A
    return 0.5 * (M + M.T)[1:, 1:]


def sorm_estimate_dense(optimum, measure: GaussianMeasure, hessian: np.ndarray):
    """Second-order estimate from the full Hessian of F at the optimizer."""
    pt = _as_point(optimum, measure)
    H = np.asarray(hessian, dtype=float)
    scale = max(np.max(np.abs(H)), 1e-300)
    if np.max(np.abs(H - H.T)) > 1e-8 * scale:
        raise ValueError("Hessian is not symmetric")
    M = projected_hessian(measure, pt.theta, 0.5 * (H + H.T))
    eigs = np.linalg.eigvalsh(M)
    eigs = eigs[np.argsort(-np.abs(eigs), kind="stable")]
    return _sorm_from_eigs(pt, eigs, "sorm", True)


def randomized_eigs(
    apply: Callable[[np.ndarray], np.ndarray],
    n: int,
    k: int,
    seed=None,
    power_iters: int = 2,
    oversample: int = 5,
) -> np.ndarray:
    """Top-|magnitude| eigenvalues of a symmetric operator by subspace iteration."""
    if k <= 0 or n == 0:
        return np.zeros(0)
    rng = np.random.default_rng(seed)
    m = min(k + oversample, n)

    def block(X):
        return np.column_stack([apply(X[:, j]) for j in range(X.shape[1])])

    Q, _ = np.linalg.qr(block(rng.standard_normal((n, m))))
    for _ in range(power_iters):
        Q, _ = np.linalg.qr(block(Q))
    T = Q.T @ block(Q)
    ev = np.linalg.eigvalsh(0.5 * (T + T.T))
    ev = ev[np.argsort(-np.abs(ev), kind="stable")]
    return ev[:k]


def sorm_estimate_lowrank(
    optimum,
    measure: GaussianMeasure,
    hvp: Callable[[np.ndarray], np.ndarray],
    r: int,
    tol: float = 1e-3,
    seed=None,
):
    """Second-order estimate from the leading eigenvalues of the projected Hessian.

    ``hvp(v)`` applies the Hessian of F at the optimizer.  Eigenvalues with
    ``|lambda * lambda_i| < tol`` are dropped (their factors are set to one).
    """
    pt = _as_point(optimum, measure)
    n = measure.dim
    r = int(min(max(r, 0), n - 1))
    W = build_whitening(measure, pt.theta)

    def apply(x):
        u = np.concatenate([[0.0], x])
        return (W.A.T @ hvp(W.A @ u))[1:]

    eigs = randomized_eigs(apply, n - 1, r, seed=seed)
    keep = eigs[np.abs(pt.lam * eigs) >= tol]
    est, spec = _sorm_from_eigs(pt, keep, "sorm-lowrank", False)
    spec.eigenvalues = eigs
    return est, spec


def sorm_from_eigenvalues(optimum, eigenvalues, measure: GaussianMeasure | None = None, tol: float = 1e-3):
    """Second-order estimate from precomputed projected-Hessian eigenvalues.

    Eigenvalues with ``|lambda * lambda_i| < tol`` are dropped.
    """
    pt = _as_point(optimum, measure)
    eigs = np.asarray(eigenvalues, dtype=float)
    keep = eigs[np.abs(pt.lam * eigs) >= tol]
    est, _ = _sorm_from_eigs(pt, keep, "sorm", False, n_eigs=eigs.size)
    return est


def combine_estimates(parts: Sequence[ProbabilityEstimate], z: float | None = None) -> ProbabilityEstimate:
    """Sum asymptotic contributions of separate optimizers at one threshold.

    The neighborhoods of distinct optimizers are asymptotically disjoint, so
    their contributions add.  ``I_star`` is the smallest rate.
    """
    if not parts:
        raise ValueError("no estimates to combine")
    first = parts[0]
    bounds = [e.bound for e in parts]
    return ProbabilityEstimate(
        first.z if z is None else float(z),
        float(sum(e.p_hat for e in parts)),
        first.method,
        n_eigs=first.n_eigs,
        I_star=min(e.I_star for e in parts),
        log_p=float(logsumexp([e.log_p for e in parts])),
        bound=None if any(b is None for b in bounds) else float(sum(bounds)),
    )


# ----------------------------------------------------------------------------
# prefactors


def _interp_rate(sweep_z, sweep_I):
    z = np.asarray(sweep_z, dtype=float)
    I = np.asarray(sweep_I, dtype=float)
    order = np.argsort(z)
    z, I = z[order], I[order]
    return lambda q: np.interp(q, z, I)


def fit_constant_prefactor(
    mc_z, mc_p, sweep_z, sweep_I, fit_window: tuple[float, float] = (0.2, 0.4)
):
    """Fit ``P(z) ~ C0 exp(-I*(z))`` to an MC curve over ``fit_window``.

    Returns ``(C0, z_curve, p_curve)`` with the curve on the sweep's z values.
    """
    mc_z = np.asarray(mc_z, dtype=float)
    mc_p = np.asarray(mc_p, dtype=float)
    sz = np.asarray(sweep_z, dtype=float)
    lo, hi = fit_window
    sel = (mc_z >= lo) & (mc_z <= hi) & (mc_p > 0) & (mc_z >= sz.min()) & (mc_z <= sz.max())
    if not np.any(sel):
        raise ValueError(f"no MC points with p > 0 inside fit window [{lo}, {hi}] and the sweep range")
    Ifun = _interp_rate(sz, sweep_I)
    C0 = float(np.exp(np.mean(np.log(mc_p[sel]) + Ifun(mc_z[sel]))))
    zc = np.sort(sz)
    return C0, zc, C0 * np.exp(-Ifun(zc))


def prefactor_extract(z, p, sweep_z, sweep_I) -> np.ndarray:
    """``C0(z) = p(z) exp(I*(z))`` with I* interpolated from the sweep."""
    z = np.asarray(z, dtype=float)
    Ifun = _interp_rate(sweep_z, sweep_I)
    return np.asarray(p, dtype=float) * np.exp(Ifun(z))


def curve_rows(estimates: Iterable[ProbabilityEstimate]) -> list[dict]:
    return [e.row() for e in estimates]
