"""Exponential change of measure along a lattice path.

For a path ``u`` driven by increments ``dW`` the running log-density is

    log_xi[k] = sum_{k' < k, j} R(u[k', j]) dW[k', j] - 1/2 * r2_accum[k]
    r2_accum[k] = sum_{k' < k, j} R(u[k', j])**2 dt dx

with R evaluated at left time points. Truncation level ``n`` stops the
density at the first index where ``r2_accum`` reaches ``n``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientSet
from .errors import DegenerateWeightsError, DimensionError, WeightOverflowError
from .grid_noise import Grid, NoiseField
from .heat_solver import PathField

DEFAULT_LEVELS = (1, 2, 4, 8, 16, 32)
# relative slack in the r2 >= n crossing test, absorbs summation rounding
CROSSING_TOL = 1e-12
# exp(x) is treated as overflowed from x = 709 on (ln of the largest double is ~709.78)
EXP_OVERFLOW = 709.0


def check_levels(levels) -> tuple[float, ...]:
    out = tuple(sorted(float(n) for n in levels))
    if not out or any(not (n > 0 and math.isfinite(n)) for n in out):
        raise ValueError(f"truncation levels must be positive and finite, got {levels!r}")
    return out


def first_crossing(r2_accum: np.ndarray, level: float, tol: float = CROSSING_TOL) -> int:
    """First index with ``r2_accum >= level`` (relative slack ``tol``), else the last index."""
    hit = np.nonzero(r2_accum >= level * (1.0 - tol))[0]
    return int(hit[0]) if hit.size else r2_accum.shape[0] - 1


@dataclass(frozen=True)
class WeightTrajectory:
    log_xi: np.ndarray = field(repr=False)
    r2_accum: np.ndarray = field(repr=False)
    levels: tuple[float, ...]
    taus: np.ndarray
    stopped: np.ndarray

    def _level(self, n) -> int:
        try:
            return self.levels.index(float(n))
        except ValueError:
            raise KeyError(f"level {n} not configured (have {self.levels})") from None

    def tau_index(self, n) -> int:
        return int(self.taus[self._level(n)])

    def stopped_log_xi(self, n) -> float:
        return float(self.stopped[self._level(n)])

    def reached_terminal(self, n) -> bool:
        return self.tau_index(n) == self.log_xi.shape[0] - 1


def _ratio_field(path: PathField, coeffs: CoefficientSet, grid: Grid) -> np.ndarray:
    return coeffs.ratio(grid.t[:-1, None], grid.x[None, :], path.u[:-1])


def accumulate(path: PathField, noise: NoiseField, coeffs: CoefficientSet, grid: Grid,
               levels=DEFAULT_LEVELS, sign: float = 1.0) -> WeightTrajectory:
    """Running log-density and stopping data along ``path``.

    ``sign=-1`` gives the reverse density exp(-int R dW - 1/2 int R^2).
    """
    levels = check_levels(levels)
    if path.u.shape != (grid.nt + 1, grid.nx) or noise.increments.shape != (grid.nt, grid.nx):
        raise DimensionError("path, noise and grid disagree on the lattice")
    R = _ratio_field(path, coeffs, grid)
    r2 = np.zeros(grid.nt + 1)
    log_xi = np.zeros(grid.nt + 1)
    if coeffs.has_drift:
        ito = np.cumsum(np.sum(R * noise.increments, axis=1))
        r2[1:] = np.cumsum(np.sum(R * R, axis=1)) * grid.cell_area
        log_xi[1:] = sign * ito - 0.5 * r2[1:]
        bad = ~np.isfinite(log_xi)
        if bad.any():
            raise WeightOverflowError(int(np.argmax(bad)))
    taus = np.array([first_crossing(r2, n) for n in levels], dtype=np.int64)
    return WeightTrajectory(log_xi, r2, levels, taus, log_xi[taus])


def shifted_noise(noise: NoiseField, path: PathField, coeffs: CoefficientSet,
                  grid: Grid) -> NoiseField:
    """Cellwise Girsanov shift dW'[k, j] = dW[k, j] + R(u[k, j]) dt dx."""
    R = _ratio_field(path, coeffs, grid)
    return noise.with_increments(noise.increments + R * grid.cell_area)


@dataclass(frozen=True)
class NovikovDiagnostic:
    estimate: float
    fraction_overflowed: float
    n: int

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "fraction_overflowed": self.fraction_overflowed,
                "n": self.n}


def novikov_estimate(r2_terminal) -> NovikovDiagnostic:
    """Sample mean of exp(r2 / 2); overflowing entries are counted, not raised."""
    r2 = np.asarray(r2_terminal, dtype=np.float64).ravel()
    if r2.size == 0:
        raise ValueError("empty ensemble")
    half = 0.5 * r2
    over = ~(half < EXP_OVERFLOW)
    frac = float(np.mean(over))
    if over.any():
        return NovikovDiagnostic(math.inf, frac, int(r2.size))
    top = float(np.max(half))
    est = math.exp(top) * float(np.mean(np.exp(half - top)))
    return NovikovDiagnostic(est, frac, int(r2.size))


def ess(weights) -> float:
    """Effective sample size (sum w)^2 / sum w^2."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DegenerateWeightsError("weights must be finite and non-negative")
    top = w.max() if w.size else 0.0
    if not top > 0:
        raise DegenerateWeightsError("all weights are zero")
    w = w / top
    return float(math.fsum(w) ** 2 / math.fsum(w * w))


def normalized_weights(log_w) -> np.ndarray:
    """exp(log_w - max) / sum, computed without overflow."""
    lw = np.asarray(log_w, dtype=np.float64)
    if lw.size == 0 or not np.all(np.isfinite(lw)):
        raise DegenerateWeightsError("log-weights must be finite and non-empty")
    w = np.exp(lw - lw.max())
    return w / math.fsum(w)


def ess_from_log(log_w) -> float:
    return ess(normalized_weights(log_w))
