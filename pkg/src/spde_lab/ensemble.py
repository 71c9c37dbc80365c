"""Chunked, optionally threaded ensemble simulation on top of the kernels.

Paths are split into fixed-size chunks that do not depend on the thread
count, and every path draws from its own counter-based stream, so results
are byte-identical for any ``threads``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .coefficients import CoefficientSet
from .girsanov import CROSSING_TOL, check_levels
from .grid_noise import Grid, stream_key
from .heat_solver import SchemeConfig, thomas_factors

CHUNK = 256


@dataclass(frozen=True)
class Lattice:
    """Raw lattice parameters; ``nx = 1`` with no Laplacian gives an SDE."""

    nt: int
    nx: int
    dt: float
    dx: float
    boundary: str = "neumann"

    @classmethod
    def from_grid(cls, grid: Grid, boundary: str = "neumann") -> Lattice:
        return cls(grid.nt, grid.nx, grid.dt, grid.dx, boundary)

    @property
    def noise_scale(self) -> float:
        return float(np.sqrt(self.dt * self.dx))


@dataclass
class RawEnsemble:
    terminal: np.ndarray
    log_xi_T: np.ndarray
    r2_T: np.ndarray
    tau: np.ndarray
    stopped: np.ndarray
    blow_k: np.ndarray
    blow_j: np.ndarray

    @property
    def blown(self) -> np.ndarray:
        return self.blow_k >= 0


def simulate(coeffs: CoefficientSet, lattice: Lattice, h: np.ndarray, n_paths: int,
             master_seed: int, include_d: bool, weights: bool, levels, *,
             ratio_from: CoefficientSet | None = None, scheme: SchemeConfig = SchemeConfig(),
             threads: int = 1, path_offset: int = 0) -> RawEnsemble:
    levels = np.asarray(check_levels(levels))
    f = thomas_factors(lattice.nx, lattice.dt, lattice.dx, lattice.boundary)
    k0, k1 = stream_key(master_seed)
    cp = coeffs.kernel_params(ratio_from)
    h = np.ascontiguousarray(h, dtype=np.float64)

    def run(start: int):
        count = min(CHUNK, n_paths - start)
        return kernels.ensemble(k0, k1, path_offset + start, count, lattice.nt, lattice.nx,
                                lattice.noise_scale, lattice.dt, lattice.dx, f.off, f.cprime,
                                f.denom, cp, bool(include_d), bool(weights), h, scheme.clamp,
                                levels, CROSSING_TOL)

    starts = range(0, n_paths, CHUNK)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    cols = [np.concatenate(c) for c in zip(*parts)]
    return RawEnsemble(*cols)
