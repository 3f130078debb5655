"""DG-FEM solver for the 1D viscous shallow water equations."""

from .backend import BACKEND, HAVE_COMPILED, get_kernels
from .solver import (
    CFL_MAX,
    G,
    H_MIN,
    Bathymetry,
    Mesh,
    ObservationWindow,
    StateTrajectory,
    builtin_profile,
    lax_friedrichs_constant,
    load_bathymetry_csv,
    numerical_flux,
    observe,
    semidiscrete_rhs,
    solve_forward,
    solve_observable,
    ssp_rk2_step,
    stable_dt,
    time_grid,
    viscosity,
)

__all__ = [
    "BACKEND",
    "HAVE_COMPILED",
    "CFL_MAX",
    "G",
    "H_MIN",
    "Bathymetry",
    "Mesh",
    "ObservationWindow",
    "StateTrajectory",
    "builtin_profile",
    "get_kernels",
    "lax_friedrichs_constant",
    "load_bathymetry_csv",
    "numerical_flux",
    "observe",
    "semidiscrete_rhs",
    "solve_forward",
    "solve_observable",
    "ssp_rk2_step",
    "stable_dt",
    "time_grid",
    "viscosity",
]
