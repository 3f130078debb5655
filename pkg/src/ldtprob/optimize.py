"""LDT optimization: minimize ``H(theta) = I(theta) - lambda F(theta)``.

The solver is steepest descent preconditioned with the prior covariance C
(the direction ``-C grad H`` is the gradient in the C^{-1} inner product)
with Armijo backtracking.  Constants: ``c1 = 1e-4``, backtracking factor
0.5, initial step 1 carried between iterations and doubled after a
first-try acceptance, never beyond the initial step.  (Uncapped doubling
settles at step 2, which reflects every direction the event map does not
curve and stalls the iteration.)

Convergence means the C-weighted gradient norm of H has dropped by ``tol``
(default 1e-5) relative to ``max(|grad H(theta_0)|_C, |grad I(theta_k)|_C)``.
The second term matters when starting at the mean, where the event gradient
can nearly vanish and a purely relative target would sit below rounding.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError
from .measures import GaussianMeasure, INFINITE_RATE

log = logging.getLogger(__name__)

C1 = 1e-4
BACKTRACK = 0.5
MAX_ITER = 500
MAX_BACKTRACKS = 60


@dataclass
class Problem:
    """LDT problem: Gaussian parameter and event map ``F`` with gradient.

    ``value_grad(theta)`` returns ``(F, grad F)``; ``value`` defaults to its
    first component.  ``hvp(theta, v)`` defaults to central differences of
    gradients.  ``rate``/``rate_grad`` default to the Gaussian rate.
    """

    measure: GaussianMeasure
    value_grad: Callable[[np.ndarray], tuple[float, np.ndarray]]
    value: Callable[[np.ndarray], float] | None = None
    hvp: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    rate: Callable[[np.ndarray], float] | None = None
    rate_grad: Callable[[np.ndarray], np.ndarray] | None = None
    hvp_step: float = 1e-4

    def __post_init__(self):
        if self.value is None:
            self.value = lambda th: self.value_grad(th)[0]
        if self.rate is None:
            self.rate = self.measure.rate
        if self.rate_grad is None:
            self.rate_grad = self.measure.rate_grad

    @property
    def dim(self) -> int:
        return self.measure.dim

    def event_hvp(self, theta, v) -> np.ndarray:
        if self.hvp is not None:
            return self.hvp(theta, v)
        theta = np.asarray(theta, dtype=float)
        v = np.asarray(v, dtype=float)
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return np.zeros_like(v)
        e = self.hvp_step * max(1.0, float(np.linalg.norm(theta))) / nv
        gp = self.value_grad(theta + e * v)[1]
        gm = self.value_grad(theta - e * v)[1]
        return (gp - gm) / (2.0 * e)

    @classmethod
    def from_functions(cls, measure, F, grad, hess=None) -> "Problem":
        hvp = None if hess is None else (lambda th, v: np.asarray(hess(th)) @ v)
        return cls(measure=measure, value_grad=lambda th: (float(F(th)), np.asarray(grad(th), dtype=float)),
                   value=lambda th: float(F(th)), hvp=hvp)


@dataclass
class OptimumRecord:
    """Result of one LDT minimization."""

    lam: float
    theta: np.ndarray
    z: float
    I: float
    kkt: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    kind: str = "regularized"
    t_star: float | None = None
    level: int | None = None
    grad_F: np.ndarray | None = field(default=None, repr=False)
    evaluations: int = 0

    @property
    def H(self) -> float:
        return self.I - self.lam * self.z

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "z": self.z,
            "I": self.I,
            "kkt": self.kkt,
            "iterations": self.iterations,
            "converged": self.converged,
            "kind": self.kind,
            "t_star": self.t_star,
            "theta": [float(t) for t in self.theta],
        }


@dataclass
class SweepResult:
    records: list
    warm: bool
    monotone: bool = True

    @property
    def lams(self) -> np.ndarray:
        return np.array([r.lam for r in self.records])

    @property
    def z(self) -> np.ndarray:
        return np.array([r.z for r in self.records])

    @property
    def I(self) -> np.ndarray:
        return np.array([r.I for r in self.records])


def _cnorm(measure: GaussianMeasure, g: np.ndarray) -> float:
    return measure.c_norm(g)


def kkt_residual(problem: Problem, theta, lam: float, grad_F=None) -> float:
    """``|grad I - lambda grad F|_C / max(|grad I|_C, |lambda grad F|_C)``."""
    theta = np.asarray(theta, dtype=float)
    gI = problem.rate_grad(theta)
    gF = problem.value_grad(theta)[1] if grad_F is None else grad_F
    m = problem.measure
    den = max(_cnorm(m, gI), _cnorm(m, lam * gF))
    if den == 0.0:
        return 0.0
    return _cnorm(m, gI - lam * gF) / den


def _descent(
    problem: Problem,
    lam: float,
    theta: np.ndarray,
    value_grad: Callable,
    value: Callable,
    tol: float,
    max_iter: int,
    alpha0: float,
    kind: str,
) -> OptimumRecord:
    m = problem.measure
    C = m.cov
    F, gF = value_grad(theta)
    I = problem.rate(theta)
    if I == INFINITE_RATE:
        raise ValueError("starting point outside the support of the measure")
    H = I - lam * F
    gH = problem.rate_grad(theta) - lam * gF
    d = C @ gH
    gnorm0 = float(np.sqrt(max(gH @ d, 0.0)))
    gnorm = gnorm0
    alpha = alpha0
    history = [(H, gnorm, 0.0)]
    nev = 1
    converged = gnorm0 == 0.0
    it = 0
    while not converged and it < max_iter:
        slope = float(gH @ d)
        a = alpha
        accepted = False
        for j in range(MAX_BACKTRACKS):
            cand = theta - a * d
            Ic = problem.rate(cand)
            if Ic != INFINITE_RATE:
                try:
                    Fc = value(cand)
                    nev += 1
                except NumericalError:
                    Fc = None
                if Fc is not None and np.isfinite(Fc):
                    Hc = Ic - lam * Fc
                    if Hc <= H - C1 * a * slope:
                        accepted = True
                        break
            a *= BACKTRACK
        if not accepted:
            log.warning("line search failed at iteration %d (lambda=%g)", it, lam)
            break
        alpha = min(2.0 * a, alpha0) if j == 0 else a
        theta = cand
        F, gF = value_grad(theta)
        nev += 1
        I = problem.rate(theta)
        H = I - lam * F
        gH = problem.rate_grad(theta) - lam * gF
        d = C @ gH
        gnorm = float(np.sqrt(max(gH @ d, 0.0)))
        it += 1
        history.append((H, gnorm, a))
        converged = gnorm <= tol * max(gnorm0, _cnorm(m, problem.rate_grad(theta)))
    rec = OptimumRecord(
        lam=lam, theta=theta, z=float(F), I=float(I),
        kkt=kkt_residual(problem, theta, lam, gF), iterations=it, converged=converged,
        history=history, kind=kind, grad_F=gF, evaluations=nev,
    )
    if not converged:
        log.warning("LDT minimization not converged after %d iterations (lambda=%g)", it, lam)
    return rec


def minimize_hamiltonian(
    problem: Problem,
    lam: float,
    start=None,
    tol: float = 1e-5,
    max_iter: int = MAX_ITER,
    alpha0: float = 1.0,
) -> OptimumRecord:
    """Minimize ``I - lambda F`` from ``start`` (default: the mean)."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    theta = problem.measure.mean.copy() if start is None else np.array(start, dtype=float)
    return _descent(problem, lam, theta, problem.value_grad, problem.value, tol, max_iter, alpha0, "regularized")


def sweep_lambda(
    problem: Problem,
    lams: Sequence[float],
    warm: bool = True,
    tol: float = 1e-5,
    max_iter: int = MAX_ITER,
    minimize: Callable | None = None,
) -> SweepResult:
    """Solve for every lambda in ascending order, optionally warm-starting."""
    lams = [float(x) for x in lams]
    if any(l <= 0 for l in lams) or any(b <= a for a, b in zip(lams, lams[1:])):
        raise ValueError("lambda grid must be positive and strictly ascending")
    minimize = minimize or (lambda p, lam, start: minimize_hamiltonian(p, lam, start, tol=tol, max_iter=max_iter))
    records = []
    start = None
    for lam in lams:
        try:
            rec = minimize(problem, lam, start)
        except NumericalError as exc:
            log.error("lambda=%g failed: %s", lam, exc)
            rec = OptimumRecord(lam=lam, theta=np.full(problem.dim, np.nan), z=float("nan"), I=float("nan"),
                                kkt=float("nan"), iterations=0, converged=False)
        records.append(rec)
        if warm and np.all(np.isfinite(rec.theta)):
            start = rec.theta
    z = np.array([r.z for r in records])
    monotone = bool(np.all(np.diff(z[np.isfinite(z)]) >= 0))
    if warm and not monotone:
        log.warning("z(lambda) not nondecreasing along the warm-started sweep")
    return SweepResult(records=records, warm=warm, monotone=monotone)


@dataclass
class SecondOrderReport:
    min_value: float
    values: np.ndarray
    ok: bool
    threshold: float


def second_order_check(problem: Problem, record: OptimumRecord, probe_count: int = 10, seed=0) -> SecondOrderReport:
    """Curvature of ``H`` along random directions tangent to the level set of I.

    Reports ``min <v, (C^{-1} - lambda hess F) v> / |v|^2`` over probes ``v``
    orthogonal to ``grad I(theta*)`` (all of R^n if that gradient vanishes).
    """
    rng = np.random.default_rng(seed)
    theta = np.asarray(record.theta, dtype=float)
    nrm = problem.rate_grad(theta)
    P = problem.measure.precision
    vals = []
    for _ in range(probe_count):
        v = rng.standard_normal(problem.dim)
        if np.linalg.norm(nrm) > 0:
            v -= (v @ nrm) / (nrm @ nrm) * nrm
        v /= np.linalg.norm(v)
        hv = P @ v - record.lam * problem.event_hvp(theta, v)
        vals.append(float(v @ hv))
    vals = np.array(vals)
    thr = -1e-6 * float(np.linalg.norm(P, 2))
    return SecondOrderReport(min_value=float(vals.min()), values=vals, ok=bool(vals.min() >= thr), threshold=thr)


@dataclass
class TimeProblem:
    """Event map evaluated at a single time level, for the time-optimal form.

    ``series(theta)`` returns the observable at all levels; ``level_value_grad``
    returns ``(f_m, grad f_m)`` at level ``m``; ``dfdt(theta, m)`` is
    ``dJ/dt`` per unit lambda at level ``m`` (only its magnitude is used).
    """

    measure: GaussianMeasure
    series: Callable[[np.ndarray], np.ndarray]
    level_value_grad: Callable[[np.ndarray, int], tuple[float, np.ndarray]]
    dfdt: Callable[[np.ndarray, int], float]
    dt: float


def most_variable_level(problem: TimeProblem, theta, step: float = 1e-3) -> int:
    """Level maximizing ``sum_i (d f_m / d xi_i)^2`` for whitened directions ``xi``.

    Derivatives are central differences of the whole series along the
    columns of ``C^{1/2}`` scaled by ``step``.
    """
    theta = np.asarray(theta, dtype=float)
    R = problem.measure.sqrt_cov
    var = 0.0
    for i in range(R.shape[1]):
        e = step * R[:, i]
        d = (problem.series(theta + e) - problem.series(theta - e)) / (2.0 * step)
        var = var + d * d
    return int(np.argmax(var))


def minimize_timeopt(
    problem: TimeProblem,
    lam: float,
    start=None,
    tol: float = 1e-5,
    max_iter: int = MAX_ITER,
    alpha0: float = 1.0,
) -> OptimumRecord:
    """Alternate between the argmax time level and one descent step in theta.

    If the observable is constant in time at the start (e.g. the unperturbed
    state), the first level is the one with the largest linearized prior
    variance, see :func:`most_variable_level`.
    """
    m = problem.measure
    C = m.cov
    theta = m.mean.copy() if start is None else np.array(start, dtype=float)
    alpha = alpha0
    history = []
    gnorm0 = None
    nev = 0
    converged = False
    it = 0
    while True:
        f = problem.series(theta)
        if it == 0 and np.ptp(f) == 0.0:
            level = most_variable_level(problem, theta)
            nev += 2 * problem.measure.dim
        else:
            level = int(np.argmax(f))
        F, gF = problem.level_value_grad(theta, level)
        nev += 2
        I = m.rate(theta)
        H = I - lam * F
        gH = m.rate_grad(theta) - lam * gF
        d = C @ gH
        gnorm = float(np.sqrt(max(gH @ d, 0.0)))
        if gnorm0 is None:
            gnorm0 = gnorm
        history.append((H, gnorm, alpha, level))
        fdot = np.diff(f) / problem.dt
        tbound = lam * float(np.max(np.abs(fdot))) * problem.dt if fdot.size else 0.0
        dJdt = lam * problem.dfdt(theta, level)
        if gnorm <= tol * max(gnorm0, m.c_norm(m.rate_grad(theta))) and abs(dJdt) <= tbound:
            converged = True
            break
        if it >= max_iter:
            break
        slope = float(gH @ d)
        a = alpha
        accepted = False
        for j in range(MAX_BACKTRACKS):
            cand = theta - a * d
            try:
                fc = problem.series(cand)[level]
                nev += 1
            except NumericalError:
                fc = None
            if fc is not None and m.rate(cand) - lam * fc <= H - C1 * a * slope:
                accepted = True
                break
            a *= BACKTRACK
        if not accepted:
            log.warning("time-optimal line search failed at iteration %d (lambda=%g)", it, lam)
            break
        alpha = min(2.0 * a, alpha0) if j == 0 else a
        theta = cand
        it += 1
    f = problem.series(theta)
    level = int(np.argmax(f))
    F, gF = problem.level_value_grad(theta, level)
    I = m.rate(theta)
    gI = m.rate_grad(theta)
    den = max(m.c_norm(gI), m.c_norm(lam * gF))
    kkt = m.c_norm(gI - lam * gF) / den if den > 0 else 0.0
    return OptimumRecord(
        lam=lam, theta=theta, z=float(F), I=float(I), kkt=kkt, iterations=it,
        converged=converged, history=history, kind="timeopt", t_star=level * problem.dt,
        level=level, grad_F=gF, evaluations=nev,
    )


# ----------------------------------------------------------------------------
# several local optimizers

Minimizer = Callable[[float, "np.ndarray | None"], OptimumRecord]


def whitened_distance(measure: GaussianMeasure, a, b) -> float:
    """``|a - b|`` in the Cameron-Martin norm ``|.|_{C^{-1}}``."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(np.sqrt(max(d @ measure.precision @ d, 0.0)))


def is_distinct(measure: GaussianMeasure, theta, others, rtol: float = 0.1) -> bool:
    """True when ``theta`` is farther than ``rtol * |theta - mean|`` from all ``others``."""
    scale = whitened_distance(measure, theta, measure.mean)
    return all(whitened_distance(measure, theta, o) > rtol * scale for o in others)


def find_local_optima(
    minimize: Minimizer, measure: GaussianMeasure, lam: float, known, starts, rtol: float = 0.1
) -> list[OptimumRecord]:
    """Minimize from every start and keep converged optima not already in ``known``.

    Returns the new optima in order of increasing ``H``.
    """
    seen = [np.asarray(k, dtype=float) for k in known]
    found = []
    for s in starts:
        try:
            rec = minimize(lam, np.asarray(s, dtype=float))
        except NumericalError as exc:
            log.warning("multi-start minimization failed: %s", exc)
            continue
        if rec.converged and rec.I > 0 and np.isfinite(rec.z) and is_distinct(measure, rec.theta, seen, rtol):
            seen.append(rec.theta)
            found.append(rec)
    return sorted(found, key=lambda r: r.H)


def solve_at_level(
    minimize: Minimizer, z: float, lam: float, start, rtol: float = 1e-4, max_solves: int = 12
) -> OptimumRecord:
    """Optimizer with ``F = z`` on the branch that contains ``start``.

    Secant iteration on ``z(lambda)`` with warm starts.  The first step uses
    the linear scaling ``lambda ~ z``.
    """
    if not z > 0:
        raise ValueError("target level must be positive")
    rec = minimize(lam, start)
    pts = [(lam, rec.z)]
    for _ in range(max_solves - 1):
        if abs(rec.z - z) <= rtol * abs(z):
            return rec
        if len(pts) == 1 or pts[-1][1] == pts[-2][1]:
            new = pts[-1][0] * z / rec.z if rec.z > 0 else 2.0 * pts[-1][0]
        else:
            (l0, z0), (l1, z1) = pts[-2], pts[-1]
            new = l1 + (z - z1) * (l1 - l0) / (z1 - z0)
        new = float(np.clip(new, 0.5 * pts[-1][0], 2.0 * pts[-1][0]))
        rec = minimize(new, rec.theta)
        pts.append((new, rec.z))
    if abs(rec.z - z) > rtol * abs(z):
        raise NumericalError(f"no optimizer with F = {z:g} found on this branch (last z = {rec.z:g})")
    return rec
