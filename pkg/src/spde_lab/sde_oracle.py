"""One-dimensional SDE replica of the reweighting pipeline.

du = (b + mu) dt + sigma dB, simulated by Euler-Maruyama. With constant
coefficients the reweighted law is an exactly tilted Gaussian, which gives
closed-form targets for every statistic the SPDE pipeline reports.

The SDE runs through the same kernels as the heat equation: a lattice with a
single cell of width 1 and no Laplacian turns one scheme step into one
Euler-Maruyama step, and dt * dx = dt is the increment variance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .coefficients import CoefficientSet, InitialCondition, constant_preset
from .ensemble import Lattice, simulate
from .errors import (ComputationError, DimensionError, InvalidConfigurationError,
                     PathBlowUpError, UnsupportedOrderError)
from .girsanov import DEFAULT_LEVELS, EXP_OVERFLOW, check_levels, first_crossing
from .grid_noise import MAX_STEPS, stream_key
from .heat_solver import thomas_factors
from .law_equivalence import EnsembleResult

FUNCTIONAL = "u_T"


@dataclass(frozen=True)
class SdeSpec:
    mu: float
    sigma: float = 1.0
    u0: float = 0.0
    T: float = 1.0
    nt: int = 100
    b: float = 0.0

    def __post_init__(self):
        if not self.T > 0 or not math.isfinite(self.T):
            raise InvalidConfigurationError("T must be positive", "T")
        if not 1 <= self.nt <= MAX_STEPS:
            raise InvalidConfigurationError(f"nt must be in [1, {MAX_STEPS}]", "nt")
        # builds the coefficient set, which rejects mu != 0 with sigma == 0
        self.coefficients()

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def lattice(self) -> Lattice:
        return Lattice(self.nt, 1, self.dt, 1.0)

    def coefficients(self, allow_singular: bool = False) -> CoefficientSet:
        return constant_preset(self.sigma, self.b, self.mu, InitialCondition(self.u0),
                               allow_singular=allow_singular)

    @property
    def ratio(self) -> float:
        """R = mu / sigma (0 when there is no drift perturbation)."""
        return 0.0 if self.mu == 0.0 else self.mu / self.sigma

    def driftless(self) -> SdeSpec:
        return SdeSpec(0.0, self.sigma, self.u0, self.T, self.nt, self.b)


def brownian_increments(spec: SdeSpec, seed: int, path_index: int) -> np.ndarray:
    k0, k1 = stream_key(seed)
    return kernels.normals(k0, k1, path_index, 0, spec.nt) * math.sqrt(spec.dt)


def simulate_sde(spec: SdeSpec, seed: int, path_index: int, include_mu: bool = True
                 ) -> np.ndarray:
    """Euler-Maruyama series u[0..nt] for one path."""
    dB = brownian_increments(spec, seed, path_index)
    f = thomas_factors(1, spec.dt, 1.0)
    coeffs = spec.coefficients(allow_singular=True)
    u, _, _, bk, _ = kernels.rollout(dB[:, None], np.array([spec.u0]), spec.dt, 1.0, f.off,
                                     f.cprime, f.denom, coeffs.kernel_params(),
                                     bool(include_mu), spec.dt, math.inf)
    if bk >= 0:
        raise PathBlowUpError(bk, 0)
    return u[:, 0]


def girsanov_weight_1d(path, increments, ratio, dt: float, levels=None):
    """log Xi = sum R(u_k) dB_k - 1/2 sum R(u_k)^2 dt, R at left points.

    ``ratio`` is a callable of u or a constant. Without ``levels`` the
    terminal log-weight is returned; with ``levels`` the result is
    ``(log_xi, r2_accum, taus, stopped)`` under the same stopping convention
    as the SPDE engine.
    """
    u = np.asarray(path, dtype=np.float64)
    dB = np.asarray(increments, dtype=np.float64)
    if u.shape != (dB.shape[0] + 1,):
        raise DimensionError("path must have exactly one more point than increments")
    R = ratio(u[:-1]) if callable(ratio) else np.full(dB.shape, float(ratio))
    log_xi = np.zeros(u.shape[0])
    r2 = np.zeros(u.shape[0])
    if np.any(R):
        r2[1:] = np.cumsum(R * R) * dt
        log_xi[1:] = np.cumsum(R * dB) - 0.5 * r2[1:]
    if levels is None:
        return float(log_xi[-1])
    levels = check_levels(levels)
    taus = np.array([first_crossing(r2, n) for n in levels])
    return log_xi, r2, taus, log_xi[taus]


def analytic_tilt_moments(mu: float, T: float, order: int) -> float:
    """Moments of N(mu T, T), the law of B_T under the tilt exp(mu B_T - mu^2 T / 2)."""
    if order == 1:
        return mu * T
    if order == 2:
        return T + mu * mu * T * T
    raise UnsupportedOrderError(f"order {order} not supported (1 or 2)")


def _result(raw, arm: str, weighted: bool, levels, nt: int, seed: int) -> EnsembleResult:
    return EnsembleResult(arm, weighted, np.arange(raw.terminal.shape[0]), raw.blown,
                          {FUNCTIONAL: raw.terminal[:, 0].copy()}, tuple(levels), raw.stopped,
                          raw.tau == nt, raw.r2_T, seed, {"model": "sde"})


def run_sde_direct(spec: SdeSpec, N: int, seed: int, levels=DEFAULT_LEVELS,
                   threads: int = 1) -> EnsembleResult:
    """Paths of du = (b + mu) dt + sigma dB with unit weights."""
    levels = check_levels(levels)
    coeffs = spec.coefficients()
    raw = simulate(coeffs, spec.lattice, np.array([spec.u0]), N, seed, True, False, levels,
                   threads=threads)
    return _result(raw, "direct", False, levels, spec.nt, seed)


def run_sde_reweighted(spec: SdeSpec, N: int, seed: int, levels=DEFAULT_LEVELS,
                       threads: int = 1, ratio_mu: float | None = None) -> EnsembleResult:
    """Driftless paths weighted by the stopped density built from ``ratio_mu / sigma``."""
    levels = check_levels(levels)
    mu = spec.mu if ratio_mu is None else ratio_mu
    base = spec.driftless().coefficients()
    target = constant_preset(spec.sigma, spec.b, mu)
    raw = simulate(base, spec.lattice, np.array([spec.u0]), N, seed, False, True, levels,
                   ratio_from=target, threads=threads)
    return _result(raw, "reweighted", True, levels, spec.nt, seed)


@dataclass(frozen=True)
class TiltEstimate:
    weighted_mean: float
    weighted_mean_stderr: float
    weighted_second: float
    weighted_second_stderr: float
    weight_mean: float
    weight_mean_stderr: float
    ess: float
    target_mean: float
    target_second: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def tilt_estimate(reweighted: EnsembleResult, spec: SdeSpec) -> TiltEstimate:
    """Moments of u_T under the tilt, as plain means of w * u_T and w * u_T^2.

    Every path reaches T at the largest level here, so the weights are the
    terminal densities and the estimates are unbiased.
    """
    lw = reweighted.stopped_log_xi[:, -1]
    if np.any(lw >= EXP_OVERFLOW):
        raise ComputationError("log-weights too large to exponentiate")
    w = np.exp(lw)
    x = reweighted.values[FUNCTIONAL]
    n = w.size

    def mean_se(v):
        return float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(n))

    m1, s1 = mean_se(w * x)
    m2, s2 = mean_se(w * x * x)
    mw, sw = mean_se(w)
    ess_val = float(np.sum(w) ** 2 / np.sum(w * w))
    # u_T = c + sigma B_T with B_T ~ N(theta T, T) under the tilt
    c = spec.u0 + spec.b * spec.T
    theta = spec.ratio
    e1 = analytic_tilt_moments(theta, spec.T, 1)
    e2 = analytic_tilt_moments(theta, spec.T, 2)
    sg = spec.sigma
    return TiltEstimate(m1, s1, m2, s2, mw, sw, ess_val, c + sg * e1,
                        c * c + 2.0 * c * sg * e1 + sg * sg * e2)
