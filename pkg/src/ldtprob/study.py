"""Turn a validated configuration into a concrete LDT problem.

A :class:`Study` bundles the Gaussian parameter measure, the event map used
for sampling, the optimizer matching the configured objective and the
objective ``J = I - lambda F`` with its gradient for gradient checks.  The
same interface covers the tsunami model and the analytic toys.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError
from .measures import GaussianMeasure
from .optimize import OptimumRecord, Problem, minimize_hamiltonian, minimize_timeopt
from .toys import LinearToy, ParabolicToy
from .tsunami import TsunamiModel, TsunamiSetup


def tsunami_setup(cfg) -> TsunamiSetup:
    m, t, b, s = cfg["mesh"], cfg["time"], cfg["bathymetry"], cfg["basis"]
    std = cfg["prior"]["std"]
    return TsunamiSetup(
        a=m["a"], b=m["b"], K=m["K"], T_F=t["T_F"], cfl=t["cfl"], dt=t["dt"],
        c_visc=cfg["viscosity"]["c_visc"], profile=b["profile"], bathymetry_file=b["file"],
        window=tuple(cfg["objective"]["window"]), segment=tuple(s["segment"]), n_s=s["n_s"],
        width=s["width"], amplitude=s["amplitude"],
        basis_file=s["file"] if s["kind"] == "file" else None,
        std=tuple(std) if isinstance(std, list) else std, gamma=cfg["objective"]["gamma"],
    )


def build_model(cfg) -> TsunamiModel:
    if cfg["problem"] != "tsunami":
        raise ConfigError(f"this command needs problem 'tsunami', got {cfg['problem']!r}")
    try:
        return TsunamiModel.from_setup(tsunami_setup(cfg))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


@dataclass
class Study:
    """Problem-independent handle used by the command implementations."""

    name: str
    kind: str
    measure: GaussianMeasure
    F: Callable[[np.ndarray], float]
    problem: Problem
    model: TsunamiModel | None = None
    toy: object | None = None
    tol: float = 1e-5
    max_iter: int = 500

    @classmethod
    def from_config(cls, cfg) -> "Study":
        o = cfg["objective"]
        common = dict(kind=o["kind"], tol=o["tol"], max_iter=o["max_iter"])
        if cfg["problem"] == "tsunami":
            model = build_model(cfg)
            F = model.F if o["kind"] == "regularized" else model.F_max
            return cls("tsunami", measure=model.measure, F=F, problem=model.problem(), model=model, **common)
        if o["kind"] != "regularized":
            raise ConfigError("objective.kind 'timeopt' is only defined for problem 'tsunami'")
        if cfg["problem"] == "toy2d":
            toy = ParabolicToy(cfg["toy"]["curvature"])
        else:
            toy = LinearToy.standard(a=cfg["toy"]["a"])
        return cls(cfg["problem"], measure=toy.measure, F=toy.F, problem=toy.problem(), toy=toy, **common)

    @property
    def dim(self) -> int:
        return self.measure.dim

    def minimize(self, lam: float, start=None) -> OptimumRecord:
        if self.kind == "timeopt":
            return minimize_timeopt(self.model.time_problem(), lam, start, tol=self.tol, max_iter=self.max_iter)
        return minimize_hamiltonian(self.problem, lam, start, tol=self.tol, max_iter=self.max_iter)

    def J(self, theta, lam: float, level: int | None = None) -> float:
        if self.model is not None:
            return self.model.J(theta, lam, self.kind, level)
        return self.measure.rate(theta) - lam * self.problem.value(theta)

    def J_grad(self, theta, lam: float, level: int | None = None) -> np.ndarray:
        if self.model is not None:
            return self.model.J_grad(theta, lam, self.kind, level)
        return self.measure.rate_grad(theta) - lam * self.problem.value_grad(theta)[1]

    def hvp(self, theta) -> Callable[[np.ndarray], np.ndarray]:
        """Hessian-vector product of the event map at ``theta``."""
        if self.kind == "timeopt":
            level = int(np.argmax(self.model.observable(theta)))

            def grad(S):
                return self.model.value_grad(S, "timeopt", level)[1]

            def apply(v):
                v = np.asarray(v, dtype=float)
                nv = np.linalg.norm(v)
                if nv == 0.0:
                    return np.zeros_like(v)
                e = self.problem.hvp_step * max(1.0, float(np.linalg.norm(theta))) / nv
                return (grad(theta + e * v) - grad(theta - e * v)) / (2.0 * e)

            return apply
        return lambda v: self.problem.event_hvp(theta, v)
