"""Slip patches, the induced bathymetry change and the Gaussian slip prior.

Each slip coefficient ``s_i`` multiplies a bathymetry-change profile ``O_i``
sampled on the mesh nodes, so ``B = B0 + O @ S``.  Profiles come either from
a CSV file (e.g. columns produced by an elastic dislocation code) or from the
smooth dipole surrogate :func:`analytic_surrogate_basis`.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .measures import GaussianMeasure, gaussian_rate
from .swe.solver import Bathymetry, Mesh

SUPPORT_TOL = 1e-6
ZERO_MEAN_TOL = 0.05


class BasisFormatError(ConfigError):
    """Malformed basis file; ``column`` names the offending column if any."""

    def __init__(self, msg: str, column: str | None = None):
        super().__init__(msg)
        self.column = column


@dataclass(frozen=True, eq=False)
class SlipBasis:
    """Bathymetry change per meter of slip, one column per patch.

    ``O`` has shape ``(K + 1, n_s)`` (continuous P1 nodal values).
    """

    x: np.ndarray
    O: np.ndarray
    provenance: str
    centers: np.ndarray | None = None

    def __post_init__(self):
        O = np.array(self.O, dtype=float)
        if O.ndim == 1:
            O = O[:, None]
        if O.shape[0] != np.size(self.x):
            raise ValueError(f"basis has {O.shape[0]} rows but {np.size(self.x)} nodes")
        O.setflags(write=False)
        object.__setattr__(self, "O", O)

    @property
    def n_s(self) -> int:
        return self.O.shape[1]

    def perturbation(self, S) -> np.ndarray:
        S = np.asarray(S, dtype=float)
        if S.shape != (self.n_s,):
            raise ValueError(f"slip vector has shape {S.shape}, expected ({self.n_s},)")
        return self.O @ S

    def check(self, strict: bool = True) -> None:
        """Validate support and near-zero mean of every column."""
        for i in range(self.n_s):
            col = self.O[:, i]
            peak = np.max(np.abs(col))
            if peak == 0.0:
                raise ValueError(f"basis column {i + 1} is identically zero")
            if abs(col[0]) > SUPPORT_TOL * peak or abs(col[-1]) > SUPPORT_TOL * peak:
                raise ValueError(f"basis column {i + 1} does not decay before the domain boundary")
            net = abs(np.trapezoid(col, self.x))
            tot = np.trapezoid(np.abs(col), self.x)
            if net > ZERO_MEAN_TOL * tot:
                msg = f"basis column {i + 1} has net integral {net:.3g} (> {ZERO_MEAN_TOL} of its L1 norm)"
                if strict:
                    raise ValueError(msg)
                warnings.warn(msg, stacklevel=3)


@dataclass(frozen=True, eq=False)
class SlipPrior:
    """Centered Gaussian prior on the slips with covariance ``C_s``."""

    cov: np.ndarray

    @classmethod
    def isotropic(cls, n_s: int = 20, std: float = 10.0) -> "SlipPrior":
        return cls(std**2 * np.eye(n_s))

    @property
    def measure(self) -> GaussianMeasure:
        return GaussianMeasure(np.zeros(self.cov.shape[0]), self.cov)

    @property
    def n_s(self) -> int:
        return self.cov.shape[0]


def bathymetry_from_slips(basis: SlipBasis, S, B0) -> Bathymetry:
    """``B = B0 + sum_i s_i O_i`` at the mesh nodes."""
    B0 = np.asarray(B0, dtype=float)
    if B0.shape != basis.x.shape:
        raise ValueError("B0 and basis live on different node sets")
    return Bathymetry(B0 + basis.perturbation(S), B0)


def slip_rate(prior: SlipPrior, S) -> float:
    """Rate ``1/2 S^T C_s^{-1} S``."""
    return gaussian_rate(prior.measure, S)


def surrogate_profile(x, center: float, width: float, amplitude: float) -> np.ndarray:
    """Dipole ``-A tau exp(-tau^2/2)``, ``tau = (x - center)/width``.

    ``A = amplitude * sqrt(e)`` so the peak magnitude equals ``amplitude``.
    Positive slip lifts the shoreward side (x < center) and lowers the
    seaward side.
    """
    tau = (np.asarray(x, dtype=float) - center) / width
    return -amplitude * np.sqrt(np.e) * tau * np.exp(-0.5 * tau * tau)


def analytic_surrogate_basis(
    mesh: Mesh,
    segment: tuple[float, float] = (178e3, 187e3),
    n_s: int = 20,
    width: float | None = None,
    amplitude: float = 0.25,
) -> SlipBasis:
    """Smooth zero-mean dipoles centered at equispaced points of ``segment``.

    ``width`` defaults to twice the patch spacing (the segment length when
    ``n_s == 1``); ``amplitude`` is the peak |O_i| per meter of slip.
    """
    lo, hi = segment
    if n_s < 1:
        raise ConfigError("need at least one slip patch")
    if not mesh.a < lo <= hi < mesh.b:
        raise ConfigError(f"slip segment [{lo}, {hi}] outside domain [{mesh.a}, {mesh.b}]")
    centers = np.linspace(lo, hi, n_s) if n_s > 1 else np.array([0.5 * (lo + hi)])
    if width is None:
        width = 2.0 * (centers[1] - centers[0]) if n_s > 1 else max(hi - lo, mesh.hbar)
    x = mesh.nodes
    O = np.column_stack([surrogate_profile(x, c, width, amplitude) for c in centers])
    basis = SlipBasis(x=x, O=O, provenance="analytic-surrogate", centers=centers)
    basis.check(strict=True)
    return basis


def load_basis_from_file(path: str | Path, mesh: Mesh) -> SlipBasis:
    """Read ``x,O_1,...,O_n`` columns and interpolate linearly onto the mesh."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            rows = [r for r in reader if r]
    except (OSError, StopIteration) as exc:
        raise BasisFormatError(f"{path}: cannot read basis file ({exc})") from None
    if not header or header[0] != "x":
        raise BasisFormatError(f"{path}: first column must be 'x'", column="x")
    cols = header[1:]
    if not cols:
        raise BasisFormatError(f"{path}: no basis columns", column="O_1")
    for i, name in enumerate(cols, start=1):
        if name != f"O_{i}":
            raise BasisFormatError(f"{path}: expected column 'O_{i}', found {name!r}", column=f"O_{i}")
    try:
        data = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise BasisFormatError(f"{path}: non-numeric entry ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise BasisFormatError(f"{path}: ragged rows")
    if data.shape[0] < 2:
        raise BasisFormatError(f"{path}: need at least two rows")
    xs = data[:, 0]
    if np.any(np.diff(xs) <= 0):
        raise BasisFormatError(f"{path}: x must be strictly increasing", column="x")
    x = mesh.nodes
    if xs[0] > x[0] + 1e-9 * abs(mesh.b - mesh.a) or xs[-1] < x[-1] - 1e-9 * abs(mesh.b - mesh.a):
        raise BasisFormatError(f"{path}: x range [{xs[0]}, {xs[-1]}] does not cover the mesh", column="x")
    O = np.column_stack([np.interp(x, xs, data[:, j]) for j in range(1, data.shape[1])])
    basis = SlipBasis(x=x, O=O, provenance="file")
    try:
        basis.check(strict=False)
    except ValueError as exc:
        raise BasisFormatError(f"{path}: {exc}") from None
    return basis


def write_basis_csv(basis: SlipBasis, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x"] + [f"O_{i + 1}" for i in range(basis.n_s)])
        for xi, row in zip(basis.x, basis.O):
            w.writerow([repr(float(xi))] + [repr(float(v)) for v in row])


def write_slip_samples(samples: np.ndarray, path: str | Path) -> None:
    """CSV with header ``sample_id,s_1,...,s_n``."""
    samples = np.atleast_2d(samples)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id"] + [f"s_{i + 1}" for i in range(samples.shape[1])])
        for k, row in enumerate(samples):
            w.writerow([k] + [repr(float(v)) for v in row])
