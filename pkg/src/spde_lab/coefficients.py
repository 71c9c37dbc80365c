"""Coefficient presets (a, b, d, h) and the reduced drift/diffusion ratio R = d / a.

Every preset belongs to one small parametric family that the compiled kernels
understand directly:

* diffusion ``a(u)`` is either a constant or ``C * sgn(u) * |u|**gamma``;
* base drift ``b`` is a constant;
* drift perturbation ``d(u) = d0 + lam * 2u(1 - u**2)``;
* initial condition ``h(x) = h0 + h1 * cos(m pi x / L)``.

Coefficients do not depend on (t, x); the ``t`` and ``x`` arguments are
accepted for signature compatibility and ignored.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._backend import kernels
from .errors import InvalidConfigurationError, UndefinedRatioError
from .grid_noise import Grid

PRESETS = ("allen_cahn", "zero_drift", "constant", "linear_walsh")
THEOREM_GAMMA_RANGE = (0.5, 1.0)


@dataclass(frozen=True)
class InitialCondition:
    constant: float = 0.0
    cos_amplitude: float = 0.0
    cos_mode: int = 1

    def __call__(self, x, L: float) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        h = np.full_like(x, self.constant)
        if self.cos_amplitude != 0.0:
            h = h + self.cos_amplitude * np.cos(self.cos_mode * np.pi * x / L)
        return h

    def sup_abs(self) -> float:
        return abs(self.constant) + abs(self.cos_amplitude)


@dataclass(frozen=True)
class AllenCahnParams:
    C: float
    gamma: float
    allow_outside_theorem: bool = False

    def __post_init__(self):
        if self.C == 0 or not math.isfinite(self.C):
            raise InvalidConfigurationError("Allen-Cahn diffusion scale must satisfy C != 0", "C")
        lo, hi = THEOREM_GAMMA_RANGE
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidConfigurationError(f"gamma={self.gamma} outside [0, 1]", "gamma")
        if not lo <= self.gamma <= hi and not self.allow_outside_theorem:
            raise InvalidConfigurationError(
                f"gamma={self.gamma} outside the uniqueness range [1/2, 1]; "
                "set the override flag for exploratory runs", "gamma")

    @property
    def inside_theorem(self) -> bool:
        return THEOREM_GAMMA_RANGE[0] <= self.gamma <= THEOREM_GAMMA_RANGE[1]


@dataclass(frozen=True)
class CoefficientSet:
    name: str
    diffusion_kind: str  # "constant" | "power"
    a_value: float  # the constant a, or the scale C of the power law
    gamma: float = 1.0
    b0: float = 0.0
    d0: float = 0.0
    d_cubic: float = 0.0
    h: InitialCondition = field(default_factory=InitialCondition)
    allow_singular: bool = False
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if self.diffusion_kind not in ("constant", "power"):
            raise InvalidConfigurationError(f"unknown diffusion kind {self.diffusion_kind!r}")
        for key in ("a_value", "gamma", "b0", "d0", "d_cubic"):
            if not math.isfinite(getattr(self, key)):
                raise InvalidConfigurationError("must be finite", key)
        if self.diffusion_kind == "power":
            if self.a_value == 0.0:
                raise InvalidConfigurationError("power-law diffusion needs C != 0", "C")
            if not 0.0 <= self.gamma <= 1.0:
                raise InvalidConfigurationError(f"gamma={self.gamma} outside [0, 1]", "gamma")
        if not self.allow_singular and self.singular_ratio:
            raise UndefinedRatioError(
                f"{self.name}: d/a has no removable limit where a vanishes")

    @property
    def has_drift(self) -> bool:
        return self.d0 != 0.0 or self.d_cubic != 0.0

    @property
    def singular_ratio(self) -> bool:
        """True when d/a blows up at a zero of a (no closed-form reduction)."""
        if not self.has_drift:
            return False
        if self.diffusion_kind == "constant":
            return self.a_value == 0.0
        # C sgn(u)|u|^g vanishes at u = 0 only; the cubic part cancels, d0 does not
        return self.d0 != 0.0

    def kernel_params(self, ratio_from: CoefficientSet | None = None) -> np.ndarray:
        """Packed parameter vector consumed by the kernels.

        ``ratio_from`` supplies the drift used in R when it differs from the
        simulated drift (mismatched reweighting experiments).
        """
        r = self if ratio_from is None else ratio_from
        return np.array([
            0.0 if self.diffusion_kind == "constant" else 1.0,
            self.a_value, self.gamma, self.b0, self.d0, self.d_cubic, r.d0, r.d_cubic,
        ])

    def a(self, t, x, u):
        return kernels.diffusion(np.asarray(u, dtype=np.float64), self.kernel_params())

    def b(self, t, x, u):
        return np.full_like(np.asarray(u, dtype=np.float64), self.b0)

    def d(self, t, x, u):
        u = np.asarray(u, dtype=np.float64)
        return self.d0 + self.d_cubic * (2.0 * u * (1.0 - u * u))

    def ratio(self, t, x, u):
        """Reduced R(t, x, u); for power-law diffusion the factor |u|^gamma is cancelled."""
        return kernels.ratio(np.asarray(u, dtype=np.float64), self.kernel_params())

    def scaled_drift(self, lam: float) -> CoefficientSet:
        return replace(self, d0=self.d0 * lam, d_cubic=self.d_cubic * lam,
                       name=f"{self.name}*{lam:g}" if lam != 1.0 else self.name)

    def without_drift(self) -> CoefficientSet:
        return replace(self, d0=0.0, d_cubic=0.0, name=f"{self.name}/driftless")

    def with_initial(self, h: InitialCondition) -> CoefficientSet:
        return replace(self, h=h)


ODD_EXTENSION_NOTE = ("a(u) = C*sgn(u)*|u|^gamma: odd extension of C*u^gamma to u < 0 "
                      "(modeling choice)")


def allen_cahn_preset(params: AllenCahnParams, h: InitialCondition | None = None,
                      drift_scale: float = 1.0) -> CoefficientSet:
    """b = 0, d(u) = 2u(1 - u^2), a(u) = C sgn(u)|u|^gamma."""
    notes = [ODD_EXTENSION_NOTE]
    if not params.inside_theorem:
        notes.append(f"gamma={params.gamma} outside the uniqueness range [1/2, 1]")
    return CoefficientSet("allen_cahn", "power", float(params.C), float(params.gamma),
                          d_cubic=float(drift_scale), h=h or InitialCondition(),
                          notes=tuple(notes))


def zero_drift_preset(a: float = 1.0, b: float = 0.0,
                      h: InitialCondition | None = None) -> CoefficientSet:
    return CoefficientSet("zero_drift", "constant", float(a), b0=float(b),
                          h=h or InitialCondition())


def constant_preset(a: float = 1.0, b: float = 0.0, d: float = 0.0,
                    h: InitialCondition | None = None, allow_singular: bool = False
                    ) -> CoefficientSet:
    return CoefficientSet("constant", "constant", float(a), b0=float(b), d0=float(d),
                          h=h or InitialCondition(), allow_singular=allow_singular)


def linear_walsh_preset(C: float = 1.0, d: float = 0.0, h: InitialCondition | None = None,
                        allow_singular: bool = False) -> CoefficientSet:
    """a(u) = C u, b = 0, constant perturbation d (singular unless d = 0)."""
    if C == 0:
        raise InvalidConfigurationError("linear diffusion needs C != 0", "C")
    return CoefficientSet("linear_walsh", "power", float(C), 1.0, d0=float(d),
                          h=h or InitialCondition(), allow_singular=allow_singular)


def drift_ratio(coeffs: CoefficientSet, t, x, u):
    r = coeffs.ratio(t, x, u)
    return float(r) if np.ndim(r) == 0 else r


@dataclass(frozen=True)
class ValidationReport:
    sup_abs_ratio: float
    argmax_u: float
    bounded: bool
    samples: int
    novikov_implied: bool

    def to_dict(self) -> dict:
        return {"sup_abs_ratio": self.sup_abs_ratio, "argmax_u": self.argmax_u,
                "bounded": self.bounded, "samples": self.samples,
                "novikov_implied": self.novikov_implied}


def _diffusion_zeros(coeffs: CoefficientSet) -> list[float]:
    if coeffs.diffusion_kind == "power":
        return [0.0]
    return []


def validate(coeffs: CoefficientSet, grid: Grid, u_range: tuple[float, float],
             n_u: int = 801) -> ValidationReport:
    """Sup of |R| over a deterministic sample of [0,T] x [0,L] x u_range.

    The sample always includes the endpoints and the zeros of ``a``. The
    range is flagged unbounded when R is non-finite somewhere or when an 8x
    refinement around the maximizer raises the sup by more than 50 %.
    """
    lo, hi = map(float, u_range)
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise InvalidConfigurationError(f"u_range {u_range} must be a finite interval")
    u = np.linspace(lo, hi, n_u)
    u = np.union1d(u, [z for z in _diffusion_zeros(coeffs) if lo <= z <= hi])
    ts = grid.t[:: max(1, grid.nt // 10)]
    xs = grid.x[:: max(1, grid.nx // 10)]
    T_, X_, U_ = np.meshgrid(ts, xs, u, indexing="ij")
    with np.errstate(divide="ignore", invalid="ignore"):
        R = np.abs(coeffs.ratio(T_, X_, U_))
    samples = R.size
    if not np.all(np.isfinite(R)):
        i = np.unravel_index(np.argmax(~np.isfinite(R)), R.shape)
        return ValidationReport(math.inf, float(U_[i]), False, samples, False)
    i = np.unravel_index(np.argmax(R), R.shape)
    sup = float(R[i])
    u_star = float(U_[i])
    step = (hi - lo) / max(n_u - 1, 1)
    fine = np.clip(np.linspace(u_star - step, u_star + step, 17), lo, hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        fine_sup = float(np.max(np.abs(coeffs.ratio(0.0, 0.0, fine))))
    bounded = math.isfinite(fine_sup) and fine_sup <= 1.5 * sup + 1e-300
    return ValidationReport(max(sup, fine_sup) if bounded else math.inf, u_star, bounded,
                            samples, bounded)
