"""Semi-implicit lattice scheme for the stochastic heat equation.

One step solves

    (I - dt * Lap) u[k+1] = u[k] + dt * drift(u[k]) + a(u[k]) * dW[k] / dx

with a backward-Euler Laplacian, explicit drift and explicit left-point
noise. ``Lap`` is the finite-volume Laplacian with mirrored ghost cells
(Neumann, zero row sums) or zero-valued ghost cells (Dirichlet).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from typing import IO

import numpy as np

from ._backend import kernels
from .coefficients import CoefficientSet
from .errors import InvalidConfigurationError, PathBlowUpError
from .grid_noise import Grid, NoiseField

BOUNDARIES = ("neumann", "dirichlet")


@dataclass(frozen=True)
class SchemeConfig:
    theta: float = 1.0
    clamp_bound: float | None = None

    def __post_init__(self):
        if self.theta != 1.0:
            raise InvalidConfigurationError("only the fully implicit Laplacian (theta=1) "
                                            "is supported", "theta")
        if self.clamp_bound is not None and not self.clamp_bound > 0:
            raise InvalidConfigurationError("clamp_bound must be positive", "clamp_bound")

    @property
    def clamp(self) -> float:
        return np.inf if self.clamp_bound is None else float(self.clamp_bound)

    def check_initial(self, coeffs: CoefficientSet):
        if self.clamp_bound is not None and not self.clamp_bound > coeffs.h.sup_abs():
            raise InvalidConfigurationError(
                f"clamp_bound={self.clamp_bound} must exceed max |h| = {coeffs.h.sup_abs()}",
                "clamp_bound")


@dataclass(frozen=True)
class ThomasFactors:
    """LU factors of the constant tridiagonal matrix I - dt * Lap."""

    off: float
    diag: np.ndarray
    cprime: np.ndarray
    denom: np.ndarray

    def matrix(self) -> np.ndarray:
        n = self.diag.shape[0]
        M = np.diag(self.diag)
        if n > 1:
            M += np.diag(np.full(n - 1, self.off), 1) + np.diag(np.full(n - 1, self.off), -1)
        return M


@lru_cache(maxsize=64)
def thomas_factors(nx: int, dt: float, dx: float, boundary: str = "neumann") -> ThomasFactors:
    if boundary not in BOUNDARIES:
        raise InvalidConfigurationError(f"unknown boundary {boundary!r}", "boundary")
    r = dt / (dx * dx)
    diag = np.full(nx, 1.0 + 2.0 * r)
    if nx == 1:
        diag[0] = 1.0 if boundary == "neumann" else 1.0 + 2.0 * r
    elif boundary == "neumann":
        diag[0] = diag[-1] = 1.0 + r
    off = -r if nx > 1 else 0.0
    cprime = np.zeros(nx)
    denom = np.empty(nx)
    denom[0] = diag[0]
    if nx > 1:
        cprime[0] = off / denom[0]
    for j in range(1, nx):
        denom[j] = diag[j] - off * cprime[j - 1]
        cprime[j] = off / denom[j] if j < nx - 1 else 0.0
    for a in (diag, cprime, denom):
        a.setflags(write=False)
    return ThomasFactors(off, diag, cprime, denom)


def laplacian(grid: Grid, boundary: str = "neumann") -> np.ndarray:
    """Dense discrete Laplacian (for diagnostics and tests)."""
    f = thomas_factors(grid.nx, grid.dt, grid.dx, boundary)
    return (np.eye(grid.nx) - f.matrix()) / grid.dt


@dataclass(frozen=True)
class PathField:
    """One lattice solution ``u[k, j]`` with the running Girsanov sums along it."""

    u: np.ndarray = field(repr=False)
    boundary: str
    provenance: dict
    grid: Grid
    log_xi: np.ndarray = field(repr=False, default=None)
    r2_accum: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        self.u.setflags(write=False)

    @property
    def terminal(self) -> np.ndarray:
        return self.u[-1]


def _factors(grid: Grid, boundary: str) -> ThomasFactors:
    return thomas_factors(grid.nx, grid.dt, grid.dx, boundary)


def step(u_k, k: int, noise: NoiseField, coeffs: CoefficientSet, include_d: bool, grid: Grid,
         scheme: SchemeConfig = SchemeConfig(), boundary: str = "neumann") -> np.ndarray:
    """Advance the state at t_k to t_{k+1}."""
    u_k = np.asarray(u_k, dtype=np.float64)
    if not np.all(np.isfinite(u_k)):
        j = int(np.argmax(~np.isfinite(u_k)))
        raise PathBlowUpError(k, j)
    if not 0 <= k < grid.nt:
        raise InvalidConfigurationError(f"step index {k} outside [0, {grid.nt})", "k")
    f = _factors(grid, boundary)
    out = kernels.step(u_k, noise.increments[k], grid.dt, grid.dx, f.off, f.cprime, f.denom,
                       coeffs.kernel_params(), bool(include_d))
    with np.errstate(invalid="ignore"):
        bad = ~np.isfinite(out) | (np.abs(out) > scheme.clamp)
    if bad.any():
        raise PathBlowUpError(k + 1, int(np.argmax(bad)))
    return out


def simulate_path(coeffs: CoefficientSet, include_d: bool, grid: Grid, noise: NoiseField,
                  scheme: SchemeConfig = SchemeConfig(), boundary: str = "neumann",
                  ratio_from: CoefficientSet | None = None) -> PathField:
    """Roll the scheme out over the whole lattice for one noise realization."""
    scheme.check_initial(coeffs)
    f = _factors(grid, boundary)
    h = coeffs.h(grid.x, grid.L)
    u, log_xi, r2, bk, bj = kernels.rollout(
        noise.increments, h, grid.dt, grid.dx, f.off, f.cprime, f.denom,
        coeffs.kernel_params(ratio_from), bool(include_d), grid.cell_area, scheme.clamp)
    if bk >= 0:
        raise PathBlowUpError(bk, bj)
    provenance = {"seed": noise.master_seed, "path_index": noise.path_index,
                  "preset": coeffs.name, "include_d": bool(include_d)}
    return PathField(u, boundary, provenance, grid, log_xi, r2)


def weak_form_residual(path: PathField, noise: NoiseField, coeffs: CoefficientSet,
                       include_d: bool, grid: Grid, m: int) -> float:
    """Discrete test-function identity at t = T with phi(x) = cos(m pi x / L).

    All time integrals are left-point sums, so the noise and drift terms match
    the scheme exactly and the residual isolates the Laplacian and time
    discretization error. For m = 0 it reduces to mass balance.
    """
    if m < 0:
        raise InvalidConfigurationError("mode index must be >= 0", "m")
    u = path.u
    x = grid.x
    phi = np.cos(m * np.pi * x / grid.L)
    phi_xx = -(m * np.pi / grid.L) ** 2 * phi
    left = u[:-1]
    h = coeffs.h(x, grid.L)
    mass = np.sum((u[-1] - h) * phi) * grid.dx
    diffusion = np.sum(left @ phi_xx) * grid.cell_area
    noise_term = np.sum(coeffs.a(0.0, x, left) * phi * noise.increments)
    drift = coeffs.b(0.0, x, left)
    if include_d:
        drift = drift + coeffs.d(0.0, x, left)
    drift_term = np.sum(drift @ phi) * grid.cell_area
    return float(abs(mass - diffusion - noise_term - drift_term))


def write_path_csv(path: PathField, fh: IO[str]):
    """Dump ``t,x,u`` rows, row-major over (k, j)."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t", "x", "u"])
    t = path.grid.t
    x = path.grid.x
    for k in range(path.u.shape[0]):
        for j in range(path.u.shape[1]):
            w.writerow([repr(float(t[k])), repr(float(x[j])), repr(float(path.u[k, j]))])
