"""Large deviation estimates of rare event probabilities for Gaussian parameters.

Submodules
----------
measures    Gaussian/exponential measures, rate functions, whitening map.
swe         DG shallow water solver (compiled kernels with numpy fallback).
adjoint     discrete adjoint and event functionals of the observable.
source      slip basis, slip prior, bathymetry perturbation.
optimize    Hamiltonian minimization and lambda sweeps.
estimators  MC, importance sampling, FORM/SORM, prefactor fits.
tsunami     the built-in 1D tsunami model.
toys        analytic oracle problems.
config, cli command line front end.
"""

__version__ = "0.1.0"

from .errors import ConfigError, ConvergenceError, NumericalError  # noqa: E402
from .measures import ExponentialMeasure, GaussianMeasure, build_whitening  # noqa: E402
from .optimize import Problem, minimize_hamiltonian, minimize_timeopt, sweep_lambda  # noqa: E402
from .tsunami import TsunamiModel, TsunamiSetup  # noqa: E402

__all__ = [
    "__version__",
    "ConfigError",
    "ConvergenceError",
    "NumericalError",
    "ExponentialMeasure",
    "GaussianMeasure",
    "build_whitening",
    "Problem",
    "minimize_hamiltonian",
    "minimize_timeopt",
    "sweep_lambda",
    "TsunamiModel",
    "TsunamiSetup",
]
