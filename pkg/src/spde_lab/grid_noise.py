"""Space-time lattice, reproducible white-noise increments and lattice quadratures.

Noise streams are counter based: increment ``(k, j)`` of path ``p`` is the
normal number with index ``k * nx + j`` in the Philox4x32-10 stream keyed by
the master seed and addressed by ``p``. Uniforms carry 52 random bits and
are mapped through the inverse normal CDF (Wichura's AS241), so every
increment can be regenerated in isolation, on any thread, bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._backend import kernels
from .errors import DimensionError, InvalidConfigurationError

MAX_STEPS = 10_000_000
MAX_CELLS = 100_000
_U64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _U64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _U64
    return x ^ (x >> 31)


def stream_key(master_seed: int) -> tuple[int, int]:
    """Philox key words for a master seed."""
    z = splitmix64(int(master_seed) & _U64)
    return z & 0xFFFFFFFF, z >> 32


def derive_seed(master_seed: int, stream: int) -> int:
    """Child seed for an independent sub-experiment (e.g. the second arm)."""
    return splitmix64((int(master_seed) ^ splitmix64(int(stream) + 1)) & _U64)


@dataclass(frozen=True)
class Grid:
    T: float
    L: float
    nt: int
    nx: int

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise InvalidConfigurationError(f"final time must be positive, got {self.T}", "T")
        if not (np.isfinite(self.L) and self.L > 0):
            raise InvalidConfigurationError(f"length must be positive, got {self.L}", "L")
        if int(self.nt) != self.nt or not 1 <= self.nt <= MAX_STEPS:
            raise InvalidConfigurationError(f"need 1 <= nt <= {MAX_STEPS}, got {self.nt}", "nt")
        if int(self.nx) != self.nx or not 2 <= self.nx <= MAX_CELLS:
            raise InvalidConfigurationError(f"need 2 <= nx <= {MAX_CELLS}, got {self.nx}", "nx")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "nt", int(self.nt))
        object.__setattr__(self, "nx", int(self.nx))

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def dx(self) -> float:
        return self.L / self.nx

    @property
    def cell_area(self) -> float:
        return self.dt * self.dx

    @property
    def noise_scale(self) -> float:
        """Standard deviation of one noise cell, sqrt(dt * dx)."""
        return float(np.sqrt(self.cell_area))

    @cached_property
    def x(self) -> np.ndarray:
        """Cell centers (j + 1/2) dx."""
        return (np.arange(self.nx) + 0.5) * self.dx

    @cached_property
    def t(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt

    def cell_index(self, x0: float) -> int:
        """Cell whose center is nearest to ``x0`` (ties go to the cell containing it)."""
        if not 0.0 <= x0 <= self.L:
            raise InvalidConfigurationError(f"x0={x0} outside [0, {self.L}]", "x0")
        return min(int(x0 / self.dx), self.nx - 1)


def make_grid(T: float, L: float, nt: int, nx: int) -> Grid:
    return Grid(T, L, nt, nx)


@dataclass(frozen=True)
class NoiseField:
    """White-noise cell increments ``increments[k, j]`` with variance dt*dx."""

    increments: np.ndarray = field(repr=False)
    master_seed: int
    path_index: int
    grid: Grid

    def __post_init__(self):
        if self.increments.shape != (self.grid.nt, self.grid.nx):
            raise DimensionError(
                f"increments have shape {self.increments.shape}, "
                f"grid needs {(self.grid.nt, self.grid.nx)}")
        self.increments.setflags(write=False)

    def sheet(self) -> np.ndarray:
        """Brownian sheet W(t_k, x_{j+1/2}) on the node lattice, shape (nt+1, nx+1)."""
        W = np.zeros((self.grid.nt + 1, self.grid.nx + 1))
        W[1:, 1:] = np.cumsum(np.cumsum(self.increments, axis=0), axis=1)
        return W

    def with_increments(self, increments: np.ndarray) -> NoiseField:
        return NoiseField(np.array(increments, dtype=np.float64), self.master_seed,
                          self.path_index, self.grid)


def sample_noise(grid: Grid, master_seed: int, path_index: int) -> NoiseField:
    k0, k1 = stream_key(master_seed)
    z = kernels.normals(k0, k1, int(path_index), 0, grid.nt * grid.nx)
    return NoiseField((z * grid.noise_scale).reshape(grid.nt, grid.nx), int(master_seed),
                      int(path_index), grid)


def _lattice_field(f, shape) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 0:
        return np.broadcast_to(f, shape)
    if f.shape != shape:
        raise DimensionError(f"integrand has shape {f.shape}, expected {shape}")
    return f


def ito_integral(f, noise: NoiseField) -> float:
    """Left-point Riemann-Ito sum of ``f[k, j] * dW[k, j]``.

    ``f`` must already be evaluated at the left time points t_k, k < nt.
    """
    f = _lattice_field(f, noise.increments.shape)
    return float(np.sum(f * noise.increments))


def l2_integral(f, grid: Grid, up_to_step: int | None = None) -> float:
    """Sum of ``f[k, j]**2 * dt * dx`` over k < up_to_step."""
    up = grid.nt if up_to_step is None else int(up_to_step)
    if not 0 <= up <= grid.nt:
        raise DimensionError(f"up_to_step={up} outside [0, {grid.nt}]")
    f = _lattice_field(f, (grid.nt, grid.nx))
    return float(np.sum(np.square(f[:up])) * grid.cell_area)
