"""Built-in 1D tsunami model: slips -> bathymetry -> shallow water -> shore observable."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adjoint import (
    ObjectiveSpec,
    assemble_gradient,
    f_gamma,
    objective_value,
    solve_adjoint,
    time_derivative,
)
from .errors import ConfigError
from .measures import GaussianMeasure
from .optimize import Problem, TimeProblem
from .source import SlipBasis, SlipPrior, analytic_surrogate_basis, bathymetry_from_slips, load_basis_from_file
from .swe.solver import (
    Bathymetry,
    Mesh,
    ObservationWindow,
    StateTrajectory,
    builtin_profile,
    load_bathymetry_csv,
    solve_forward,
    solve_observable,
    stable_dt,
    viscosity,
)


@dataclass(frozen=True)
class TsunamiSetup:
    """Scalar description of the default experiment (SI units)."""

    a: float = 0.0
    b: float = 400e3
    K: int = 200
    T_F: float = 4000.0
    cfl: float = 0.3
    dt: float | None = None
    c_visc: float = 1.0
    profile: str = "tohoku"
    bathymetry_file: str | None = None
    window: tuple[float, float] = (40e3, 44e3)
    segment: tuple[float, float] = (178e3, 187e3)
    n_s: int = 20
    width: float | None = 5e3
    amplitude: float = 0.025
    basis_file: str | None = None
    std: float | tuple = 10.0
    gamma: float = 0.003


@dataclass(eq=False)
class TsunamiModel:
    """Everything needed to map a slip vector to the shore observable."""

    mesh: Mesh
    B0: np.ndarray
    basis: SlipBasis
    prior: SlipPrior
    window: ObservationWindow
    T_F: float
    dt: float
    eps: float
    gamma: float = 0.003
    backend: str | None = None
    _measure: GaussianMeasure | None = field(default=None, repr=False)

    @classmethod
    def from_setup(cls, s: TsunamiSetup = TsunamiSetup(), backend: str | None = None) -> "TsunamiModel":
        mesh = Mesh(s.a, s.b, s.K)
        x = mesh.nodes
        B0 = load_bathymetry_csv(s.bathymetry_file, x) if s.bathymetry_file else builtin_profile(s.profile, x)
        if s.basis_file:
            basis = load_basis_from_file(s.basis_file, mesh)
        else:
            basis = analytic_surrogate_basis(mesh, s.segment, s.n_s, s.width, s.amplitude)
        if np.ndim(s.std) == 0:
            prior = SlipPrior.isotropic(basis.n_s, float(s.std))
        else:
            std = np.asarray(s.std, dtype=float)
            if std.shape != (basis.n_s,):
                raise ConfigError(f"prior std has {std.size} entries but the basis has {basis.n_s} patches")
            prior = SlipPrior(np.diag(std**2))
        window = ObservationWindow(*s.window)
        window.check(mesh)
        dt = s.dt if s.dt is not None else stable_dt(mesh, B0, s.cfl)
        return cls(mesh=mesh, B0=B0, basis=basis, prior=prior, window=window, T_F=s.T_F, dt=dt,
                   eps=viscosity(mesh, s.c_visc), gamma=s.gamma, backend=backend)

    @property
    def measure(self) -> GaussianMeasure:
        if self._measure is None:
            self._measure = self.prior.measure
        return self._measure

    @property
    def n_s(self) -> int:
        return self.basis.n_s

    def bathymetry(self, S) -> Bathymetry:
        return bathymetry_from_slips(self.basis, S, self.B0)

    def forward(self, S) -> StateTrajectory:
        return solve_forward(self.bathymetry(S), self.mesh, self.T_F, self.dt, self.eps, self.window,
                             backend=self.backend)

    def observable(self, S) -> np.ndarray:
        """Observable at every time level, without storing the states."""
        return solve_observable(self.bathymetry(S), self.mesh, self.T_F, self.dt, self.eps, self.window,
                                backend=self.backend)

    def spec(self, kind: str = "regularized", lam: float = 1.0, level: int | None = None) -> ObjectiveSpec:
        return ObjectiveSpec(kind=kind, lam=lam, window=self.window, gamma=self.gamma, level=level)

    def F(self, S) -> float:
        """Regularized event map ``F_gamma``."""
        f = self.observable(S)
        return f_gamma(f, self.T_F / (f.size - 1), self.gamma)

    __call__ = F

    def F_max(self, S) -> float:
        return float(np.max(self.observable(S)))

    def value_grad(self, S, kind: str = "regularized", level: int | None = None):
        """``(F, grad F)`` via one forward and one adjoint solve."""
        traj = self.forward(S)
        spec = self.spec(kind, 1.0, level)
        adj = solve_adjoint(traj, spec, backend=self.backend)
        return objective_value(traj, spec), -assemble_gradient(traj, adj, self.basis.O)

    def J(self, S, lam: float, kind: str = "regularized", level: int | None = None) -> float:
        traj = self.forward(S)
        return self.measure.rate(S) - lam * objective_value(traj, self.spec(kind, lam, level))

    def J_grad(self, S, lam: float, kind: str = "regularized", level: int | None = None) -> np.ndarray:
        traj = self.forward(S)
        adj = solve_adjoint(traj, self.spec(kind, lam, level), backend=self.backend)
        return assemble_gradient(traj, adj, self.basis.O, S, self.measure.precision)

    def problem(self) -> Problem:
        return Problem(measure=self.measure, value_grad=self.value_grad, value=self.F)

    def time_problem(self) -> TimeProblem:
        def level_vg(S, level):
            return self.value_grad(S, "timeopt", level)

        def dfdt(S, level):
            return time_derivative(self.forward(S), self.window, 1.0, level)

        nsteps = int(round(self.T_F / self.dt))
        return TimeProblem(self.measure, self.observable, level_vg, dfdt, self.T_F / nsteps)

    def linearized_std(self) -> float:
        """Prior standard deviation of the linearization of F_gamma at S = 0."""
        _, g = self.value_grad(np.zeros(self.n_s))
        return self.measure.c_norm(g)
