"""Linear DG discretization of the viscous 1D shallow water equations.

Unknowns per element are the nodal values of h (water column height) and
v = h u (momentum) at the two element endpoints.  An auxiliary variable
phi = u_x is eliminated per stage with a central flux; the momentum flux
is v^2/h + g h^2/2 - eps h phi, the source is -g h B_x, the interface flux
is global Lax-Friedrichs and the walls are reflective (mirror ghost states).
Time stepping is SSP-RK2 with a uniform step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ..errors import CFLError, ConfigError, PositivityError
from .backend import get_kernels

G = 9.81
H_MIN = 1e-3
CFL_MAX = 1.0 / 3.0  # linear stability limit of P1 DG with SSP-RK2


@dataclass(frozen=True)
class Mesh:
    """Uniform mesh of ``K`` elements on ``[a, b]``."""

    a: float
    b: float
    K: int

    def __post_init__(self):
        if not self.a < self.b:
            raise ConfigError(f"mesh requires a < b, got a={self.a}, b={self.b}")
        if int(self.K) != self.K or self.K < 2:
            raise ConfigError(f"mesh requires integer K >= 2, got {self.K}")

    @property
    def hbar(self) -> float:
        return (self.b - self.a) / self.K

    @property
    def nodes(self) -> np.ndarray:
        """Element endpoints, shape ``(K + 1,)``."""
        return np.linspace(self.a, self.b, self.K + 1)

    @property
    def dg_nodes(self) -> np.ndarray:
        """Nodal coordinates of the DG unknowns, shape ``(K, 2)``."""
        x = self.nodes
        return np.column_stack([x[:-1], x[1:]])

    def to_dg(self, q: np.ndarray) -> np.ndarray:
        """Copy continuous nodal values into the discontinuous layout."""
        q = np.asarray(q, dtype=float)
        return np.ascontiguousarray(np.column_stack([q[:-1], q[1:]]))

    def integrate(self, q: np.ndarray) -> float:
        """Exact integral of a DG P1 field ``q`` (shape ``(K, 2)``)."""
        return 0.5 * self.hbar * float(np.sum(q))


# Reference profile read off the tsunami setup figure: (x [km], B [km]).
TOHOKU_PROFILE_KM = np.array(
    [
        [0.0, -0.05],
        [45.0, -0.05],
        [155.0, -4.0],
        [200.0, -8.0],
        [300.0, -4.0],
        [400.0, -4.0],
    ]
)

BUILTIN_PROFILES = {"tohoku": TOHOKU_PROFILE_KM}


def builtin_profile(name: str, x: np.ndarray) -> np.ndarray:
    """Evaluate a named reference bathymetry (meters) at ``x`` (meters)."""
    try:
        table = BUILTIN_PROFILES[name]
    except KeyError:
        raise ConfigError(f"unknown bathymetry profile {name!r}; known: {sorted(BUILTIN_PROFILES)}") from None
    return 1e3 * np.interp(np.asarray(x) / 1e3, table[:, 0], table[:, 1])


def load_bathymetry_csv(path: str | Path, x: np.ndarray) -> np.ndarray:
    """Read a two-column ``x,B`` CSV (meters) and interpolate onto ``x``."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        for need in ("x", "B"):
            if need not in cols:
                raise ConfigError(f"{path}: missing column {need!r}")
        rows = [(float(r["x"]), float(r["B"])) for r in reader]
    if len(rows) < 2:
        raise ConfigError(f"{path}: need at least two rows")
    data = np.array(rows)
    if np.any(np.diff(data[:, 0]) <= 0):
        raise ConfigError(f"{path}: x must be strictly increasing")
    if data[0, 0] > x[0] or data[-1, 0] < x[-1]:
        raise ConfigError(f"{path}: profile does not cover [{x[0]}, {x[-1]}]")
    return np.interp(x, data[:, 0], data[:, 1])


@dataclass(frozen=True)
class Bathymetry:
    """Continuous piecewise-linear bathymetry ``B`` and its reference ``B0``."""

    B: np.ndarray
    B0: np.ndarray

    def __post_init__(self):
        B = np.ascontiguousarray(self.B, dtype=float)
        B0 = np.ascontiguousarray(self.B0, dtype=float)
        if B.shape != B0.shape or B.ndim != 1:
            raise ConfigError("B and B0 must be 1D arrays of equal length")
        if np.any(B0 >= 0.0):
            raise ConfigError("reference bathymetry must be strictly negative (no dry states)")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "B0", B0)

    @classmethod
    def at_rest(cls, B0: np.ndarray) -> "Bathymetry":
        return cls(np.array(B0, dtype=float), np.array(B0, dtype=float))

    def slope(self, mesh: Mesh) -> np.ndarray:
        return np.diff(self.B) / mesh.hbar


@dataclass(frozen=True)
class ObservationWindow:
    """Averaging interval ``[c, d]`` for the shore observable."""

    c: float
    d: float

    def check(self, mesh: Mesh) -> None:
        if not mesh.a < self.c < self.d < mesh.b:
            raise ConfigError(
                f"observation window [{self.c}, {self.d}] must lie strictly inside [{mesh.a}, {mesh.b}]"
            )

    def weights(self, mesh: Mesh) -> np.ndarray:
        """DG weights ``W`` with ``sum(W * q) = (1/(d-c)) int_c^d q dx`` for P1 ``q``."""
        self.check(mesh)
        hbar = mesh.hbar
        W = np.zeros((mesh.K, 2))
        x = mesh.nodes
        k0 = max(int(np.floor((self.c - mesh.a) / hbar)), 0)
        k1 = min(int(np.ceil((self.d - mesh.a) / hbar)), mesh.K)
        for k in range(k0, k1):
            xl, xr = x[k], x[k + 1]
            s, e = max(self.c, xl), min(self.d, xr)
            if e <= s:
                continue
            W[k, 0] = ((xr - s) ** 2 - (xr - e) ** 2) / (2.0 * hbar)
            W[k, 1] = ((e - xl) ** 2 - (s - xl) ** 2) / (2.0 * hbar)
        return W / (self.d - self.c)


@dataclass
class StateTrajectory:
    """Stored forward solution on all time levels.

    ``H``, ``V``, ``PHI`` have shape ``(M + 1, K, 2)``; ``H1``, ``V1`` hold the
    first SSP-RK2 stage of each step (shape ``(M, K, 2)``) so the adjoint can
    transpose both stages without recomputation.  ``fobs`` is the observable at
    every level when a window was supplied.
    """

    mesh: Mesh
    bathymetry: Bathymetry
    dt: float
    eps: float
    H: np.ndarray
    V: np.ndarray
    PHI: np.ndarray
    H1: np.ndarray
    V1: np.ndarray
    fobs: np.ndarray | None = None
    window: ObservationWindow | None = None
    cmax: float = float("nan")
    g: float = G

    @property
    def nsteps(self) -> int:
        return self.H.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nsteps + 1)

    @property
    def T_F(self) -> float:
        return self.dt * self.nsteps

    def mass(self, level: int) -> float:
        return self.mesh.integrate(self.H[level])

    def surface(self, level: int) -> np.ndarray:
        """Free-surface elevation ``h + B0`` in DG layout."""
        return self.H[level] + self.mesh.to_dg(self.bathymetry.B0)

    def to_csv(self, path: str | Path, every: int = 1) -> None:
        """Write ``t,x,h,v`` rows for every ``every``-th level."""
        x = self.mesh.dg_nodes.ravel()
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "h", "v"])
            for m in range(0, self.nsteps + 1, every):
                t = m * self.dt
                for xi, hi, vi in zip(x, self.H[m].ravel(), self.V[m].ravel()):
                    w.writerow([repr(t), repr(float(xi)), repr(float(hi)), repr(float(vi))])


def lax_friedrichs_constant(h: np.ndarray, v: np.ndarray, g: float = G, time: float = float("nan")) -> float:
    """Global LF constant ``max |v/h| + sqrt(g h)`` over all nodes."""
    h = np.asarray(h, dtype=float)
    v = np.asarray(v, dtype=float)
    bad = np.flatnonzero(h.ravel() <= 0.0)
    if bad.size:
        k = int(bad[0]) // (2 if h.ndim == 2 else 1)
        raise PositivityError(k, time, float(h.ravel()[bad[0]]))
    return float(np.max(np.abs(v / h) + np.sqrt(g * h)))


def numerical_flux(q_minus, q_plus, f_minus, f_plus, c_lf: float, n_minus: float = 1.0):
    """Lax-Friedrichs flux ``(f- + f+)/2 + (C/2) n- (q- - q+)``.

    With ``c_lf = 0`` this is the central flux used for the auxiliary variable.
    """
    return 0.5 * (f_minus + f_plus) + 0.5 * c_lf * n_minus * (q_minus - q_plus)


def viscosity(mesh: Mesh, c_visc: float = 1.0, u_ref: float = 1.0) -> float:
    """Artificial viscosity ``eps = c_visc * hbar * u_ref`` (m^2/s)."""
    return c_visc * mesh.hbar * u_ref


def semidiscrete_rhs(h, v, bathymetry: Bathymetry, mesh: Mesh, eps: float, g: float = G, backend=None):
    """Time derivative of the DG coefficients.  Returns ``(dh, dv, phi)``."""
    kern = get_kernels(backend)
    h = np.ascontiguousarray(h, dtype=float)
    v = np.ascontiguousarray(v, dtype=float)
    lax_friedrichs_constant(h, v, g)
    dh = np.empty_like(h)
    dv = np.empty_like(h)
    phi = np.empty_like(h)
    kern.rhs(h, v, bathymetry.B, mesh.hbar, eps, g, dh, dv, phi)
    return dh, dv, phi


def ssp_rk2_step(u, dt: float, rhs: Callable):
    """One SSP-RK2 step for a state ``u`` (array or tuple of arrays)."""
    if isinstance(u, tuple):
        L0 = rhs(u)
        u1 = tuple(a + dt * b for a, b in zip(u, L0))
        L1 = rhs(u1)
        return tuple(0.5 * a + 0.5 * (b + dt * c) for a, b, c in zip(u, u1, L1))
    u1 = u + dt * rhs(u)
    return 0.5 * u + 0.5 * (u1 + dt * rhs(u1))


def stable_dt(mesh: Mesh, B0: np.ndarray, cfl: float = 0.3, g: float = G) -> float:
    """``cfl * hbar / C_LF(t=0)`` for the lake at rest over ``B0``."""
    c0 = float(np.sqrt(g * np.max(-np.asarray(B0))))
    return cfl * mesh.hbar / c0


def time_grid(T_F: float, dt: float) -> tuple[int, float]:
    """Number of uniform steps covering ``[0, T_F]`` and the adjusted step."""
    if T_F <= 0 or dt <= 0:
        raise ConfigError(f"T_F and dt must be positive (T_F={T_F}, dt={dt})")
    n = int(np.ceil(T_F / dt - 1e-9))
    return n, T_F / n


def _prepare(bathymetry: Bathymetry, mesh: Mesh, T_F: float, dt: float, g: float, cfl_max: float):
    if bathymetry.B.shape != (mesh.K + 1,):
        raise ConfigError(f"bathymetry has {bathymetry.B.size} nodes, mesh needs {mesh.K + 1}")
    nsteps, dt = time_grid(T_F, dt)
    h0 = mesh.to_dg(-bathymetry.B0)
    v0 = np.zeros_like(h0)
    c0 = lax_friedrichs_constant(h0, v0, g, 0.0)
    if dt * c0 / mesh.hbar > cfl_max * (1 + 1e-12):
        raise ConfigError(
            f"time step {dt:.4g} s violates CFL: C*dt/hbar = {dt * c0 / mesh.hbar:.3f} > {cfl_max:.3f}"
        )
    return nsteps, dt, h0, v0, c0


def _raise_status(status, step, elem, dt, cmax, c0):
    if status == 1:
        raise PositivityError(elem, step * dt)
    if status == 2:
        raise CFLError(
            f"wave speed {cmax:.4g} m/s exceeded twice the initial estimate {c0:.4g} m/s at t={step * dt:.6g} s"
        )


def solve_forward(
    bathymetry: Bathymetry,
    mesh: Mesh,
    T_F: float,
    dt: float,
    eps: float,
    window: ObservationWindow | None = None,
    *,
    g: float = G,
    h_min: float = H_MIN,
    cfl_max: float = CFL_MAX,
    backend: str | None = None,
) -> StateTrajectory:
    """Run the forward model from the lake at rest over ``B0`` and store every level.

    The step is shrunk slightly if needed so that an integer number of uniform
    steps ends exactly at ``T_F``.
    """
    kern = get_kernels(backend)
    nsteps, dt, h0, v0, c0 = _prepare(bathymetry, mesh, T_F, dt, g, cfl_max)
    K = mesh.K
    H = np.empty((nsteps + 1, K, 2))
    V = np.empty_like(H)
    PHI = np.empty_like(H)
    H1 = np.empty((nsteps, K, 2))
    V1 = np.empty_like(H1)
    fobs = np.empty(nsteps + 1)
    if window is not None:
        W = window.weights(mesh)
        wc = float(np.sum(W * mesh.to_dg(bathymetry.B0)))
    else:
        W, wc = np.zeros((K, 2)), 0.0
    status, step, elem, cmax = kern.forward_run(
        h0, v0, bathymetry.B, mesh.hbar, eps, g, dt, nsteps, W, wc,
        H, V, PHI, H1, V1, fobs, h_min, 2.0 * c0, True,
    )
    _raise_status(status, step, elem, dt, cmax, c0)
    return StateTrajectory(
        mesh=mesh, bathymetry=bathymetry, dt=dt, eps=eps, H=H, V=V, PHI=PHI, H1=H1, V1=V1,
        fobs=fobs if window is not None else None, window=window, cmax=cmax, g=g,
    )


_EMPTY3 = np.empty((0, 0, 2))


def solve_observable(
    bathymetry: Bathymetry,
    mesh: Mesh,
    T_F: float,
    dt: float,
    eps: float,
    window: ObservationWindow,
    *,
    g: float = G,
    h_min: float = H_MIN,
    cfl_max: float = CFL_MAX,
    backend: str | None = None,
) -> np.ndarray:
    """Forward solve that keeps only the observable time series (for sampling)."""
    kern = get_kernels(backend)
    nsteps, dt, h0, v0, c0 = _prepare(bathymetry, mesh, T_F, dt, g, cfl_max)
    W = window.weights(mesh)
    wc = float(np.sum(W * mesh.to_dg(bathymetry.B0)))
    fobs = np.empty(nsteps + 1)
    status, step, elem, cmax = kern.forward_run(
        h0, v0, bathymetry.B, mesh.hbar, eps, g, dt, nsteps, W, wc,
        _EMPTY3, _EMPTY3, _EMPTY3, _EMPTY3, _EMPTY3, fobs, h_min, 2.0 * c0, False,
    )
    _raise_status(status, step, elem, dt, cmax, c0)
    return fobs


def observe(traj: StateTrajectory, window: ObservationWindow, level: int) -> float:
    """Window average of ``h + B0`` at one stored level (exact P1 quadrature)."""
    if not -traj.nsteps - 1 <= level <= traj.nsteps:
        raise IndexError(f"level {level} outside 0..{traj.nsteps}")
    W = window.weights(traj.mesh)
    return float(np.sum(W * traj.surface(level)))
