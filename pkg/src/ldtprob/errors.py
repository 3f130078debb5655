"""Exception hierarchy shared across the package.

The CLI maps :class:`ConfigError` to exit code 2 and :class:`NumericalError`
to exit code 1.
"""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid configuration or arguments detected before any solve."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (solver breakdown, non-convergence)."""


class PositivityError(NumericalError):
    """Water height fell below the admissible minimum."""

    def __init__(self, element: int, time: float, value: float | None = None):
        self.element = element
        self.time = time
        self.value = value
        msg = f"water height below minimum in element {element} at t={time:.6g} s"
        if value is not None:
            msg += f" (h={value:.3g})"
        super().__init__(msg)


class CFLError(NumericalError):
    """Wave speed grew beyond the bound used to fix the time step."""


class ConvergenceError(NumericalError):
    """An iteration hit its cap; ``last`` holds the final iterate."""

    def __init__(self, msg: str, last=None):
        super().__init__(msg)
        self.last = last


class DegenerateDirectionError(ValueError):
    """Whitening requested for an optimizer that coincides with the mean."""


class CurvatureError(NumericalError):
    """SORM positivity hypothesis 1 - lambda * lambda_i > 0 violated."""

    def __init__(self, index: int, value: float):
        self.index = index
        self.value = value
        super().__init__(
            f"1 - lambda*lambda_i = {1.0 - value:.4g} <= 0 for eigenvalue index {index} "
            f"(lambda*lambda_i = {value:.6g})"
        )
