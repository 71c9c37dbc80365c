"""Run configuration: a flat JSON object with documented defaults.

Fields left unset (``null``) take experiment-specific defaults when the
configuration is resolved; the resolved values are echoed into every output.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, fields

from .coefficients import (PRESETS, AllenCahnParams, CoefficientSet, InitialCondition,
                           allen_cahn_preset, constant_preset, linear_walsh_preset,
                           zero_drift_preset)
from .errors import InvalidConfigurationError
from .girsanov import DEFAULT_LEVELS, check_levels
from .grid_noise import Grid, make_grid
from .heat_solver import BOUNDARIES, SchemeConfig
from .law_equivalence import DEFAULT_BOOTSTRAP, Functional, default_functionals

EXPERIMENTS = ("noise-selftest", "residual-check", "sde-oracle", "simulate", "compare-laws")
SEED_ENV = "SPDE_LAB_SEED"

# experiment-specific defaults for fields left null
_DEFAULTS = {
    "noise-selftest": {"paths": 10_000},
    "residual-check": {"paths": 100, "nt": 100, "nx": 8},
    "sde-oracle": {"T": 1.0, "nt": 100, "paths": 100_000},
    "simulate": {"paths": 1000},
    "compare-laws": {"paths": 20_000},
}
_GRID = {"T": 0.1, "L": 1.0, "nt": 1000, "nx": 32}


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "compare-laws"
    arm: str = "direct"
    T: float | None = None
    L: float | None = None
    nt: int | None = None
    nx: int | None = None
    boundary: str = "neumann"
    preset: str = "allen_cahn"
    C: float = 1.0
    gamma: float = 1.0
    gamma_sweep: tuple[float, ...] | None = None
    allow_outside_theorem: bool = False
    a: float = 1.0
    b: float = 0.0
    d: float = 0.0
    h_constant: float = 0.5
    h_cos_amplitude: float = 0.0
    h_cos_mode: int = 1
    clamp_bound: float | None = None
    paths: int | None = None
    n_sweep: tuple[int, ...] | None = None
    master_seed: int = 0
    replications: int = 1
    shared_seeds: bool = False
    reweight_scale: float = 1.0
    levels: tuple[float, ...] = DEFAULT_LEVELS
    functionals: tuple[str, ...] | None = None
    bootstrap: int = DEFAULT_BOOTSTRAP
    report_seed: int = 0
    modes: tuple[int, ...] = (0, 1, 2)
    refinements: int = 3
    mu: float = 0.5
    sigma: float = 1.0
    u0: float = 0.0
    threads: int = 1
    out: str = "results"
    export_paths: int = 0

    def __post_init__(self):
        _check(self)

    # grid and coefficient builders
    def resolved(self) -> RunConfig:
        """Copy with every null field replaced by its default."""
        vals = dict(_GRID, **_DEFAULTS[self.experiment])
        upd = {k: v for k, v in vals.items() if getattr(self, k) is None}
        if self.functionals is None:
            L = self.L if self.L is not None else vals["L"]
            upd["functionals"] = tuple(f.name for f in default_functionals(L))
        return dataclasses.replace(self, **upd)

    def grid(self) -> Grid:
        c = self.resolved()
        return make_grid(c.T, c.L, c.nt, c.nx)

    def initial(self) -> InitialCondition:
        return InitialCondition(self.h_constant, self.h_cos_amplitude, self.h_cos_mode)

    def coefficients(self, gamma: float | None = None) -> CoefficientSet:
        h = self.initial()
        if self.preset == "allen_cahn":
            g = self.gamma if gamma is None else gamma
            return allen_cahn_preset(AllenCahnParams(self.C, g, self.allow_outside_theorem), h)
        if self.preset == "zero_drift":
            return zero_drift_preset(self.a, self.b, h)
        if self.preset == "constant":
            return constant_preset(self.a, self.b, self.d, h)
        return linear_walsh_preset(self.C, self.d, h)

    def gammas(self) -> tuple[float, ...]:
        return self.gamma_sweep if self.gamma_sweep else (self.gamma,)

    def functional_list(self) -> list[Functional]:
        return [Functional.parse(s) for s in self.resolved().functionals]

    def scheme(self) -> SchemeConfig:
        return SchemeConfig(clamp_bound=self.clamp_bound)

    def to_dict(self) -> dict:
        return {f.name: _jsonable(getattr(self, f.name)) for f in fields(self)}


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value):
    """Type-check one JSON value against the field's declared type."""
    spec = _TYPES[key]
    optional = spec.endswith("| None")
    base = spec.replace("| None", "").strip()
    if value is None:
        if optional:
            return None
        raise InvalidConfigurationError("may not be null", key)
    if base.startswith("tuple["):
        item = base[len("tuple["):].split(",")[0].strip()
        if not isinstance(value, list):
            raise InvalidConfigurationError(f"expected a list, got {type(value).__name__}", key)
        return tuple(_scalar(f"{key}[{i}]", v, item) for i, v in enumerate(value))
    return _scalar(key, value, base)


def _scalar(key: str, value, kind: str):
    if kind == "bool":
        if not isinstance(value, bool):
            raise InvalidConfigurationError(f"expected true/false, got {value!r}", key)
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise InvalidConfigurationError(f"expected an integer, got {value!r}", key)
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidConfigurationError(f"expected a number, got {value!r}", key)
        return float(value)
    if not isinstance(value, str):
        raise InvalidConfigurationError(f"expected a string, got {value!r}", key)
    return value


def _check(c: RunConfig):
    if c.experiment not in EXPERIMENTS:
        raise InvalidConfigurationError(f"unknown experiment {c.experiment!r}; "
                                        f"choose from {', '.join(EXPERIMENTS)}", "experiment")
    if c.arm not in ("direct", "reweighted"):
        raise InvalidConfigurationError(f"unknown arm {c.arm!r} (direct or reweighted)", "arm")
    if c.boundary not in BOUNDARIES:
        raise InvalidConfigurationError(f"unknown boundary {c.boundary!r}", "boundary")
    if c.preset not in PRESETS:
        raise InvalidConfigurationError(f"unknown preset {c.preset!r}; "
                                        f"choose from {', '.join(PRESETS)}", "preset")
    for key in ("T", "L"):
        v = getattr(c, key)
        if v is not None and not (math.isfinite(v) and v > 0):
            raise InvalidConfigurationError("must be positive", key)
    if c.nt is not None and c.nt < 1:
        raise InvalidConfigurationError("must be >= 1", "nt")
    if c.nx is not None and c.nx < 2:
        raise InvalidConfigurationError("must be >= 2", "nx")
    if c.preset in ("allen_cahn", "linear_walsh") and c.C == 0:
        raise InvalidConfigurationError("the diffusion scale must satisfy C != 0", "C")
    if c.preset == "allen_cahn":
        for g in c.gammas():
            AllenCahnParams(c.C, g, c.allow_outside_theorem)
    if c.paths is not None and c.paths < 2:
        raise InvalidConfigurationError("need at least 2 paths", "paths")
    if c.n_sweep is not None and (not c.n_sweep or min(c.n_sweep) < 2):
        raise InvalidConfigurationError("sweep sizes must be >= 2", "n_sweep")
    if c.replications < 1:
        raise InvalidConfigurationError("must be >= 1", "replications")
    if c.threads < 1:
        raise InvalidConfigurationError("must be >= 1", "threads")
    if c.bootstrap < 1:
        raise InvalidConfigurationError("must be >= 1", "bootstrap")
    if c.export_paths < 0:
        raise InvalidConfigurationError("must be >= 0", "export_paths")
    if c.refinements < 2:
        raise InvalidConfigurationError("need at least 2 refinement levels", "refinements")
    if any(m < 0 for m in c.modes):
        raise InvalidConfigurationError("mode indices must be >= 0", "modes")
    if not math.isfinite(c.reweight_scale):
        raise InvalidConfigurationError("must be finite", "reweight_scale")
    if c.experiment == "sde-oracle" and c.sigma == 0 and c.mu != 0:
        raise InvalidConfigurationError("mu / sigma is undefined for sigma = 0", "sigma")
    if c.clamp_bound is not None and not c.clamp_bound > c.initial().sup_abs():
        raise InvalidConfigurationError("must exceed max |h|", "clamp_bound")
    if c.experiment not in ("sde-oracle", "noise-selftest"):
        c.coefficients()  # raises on a non-removable d / a singularity
    try:
        check_levels(c.levels)
    except ValueError as exc:
        raise InvalidConfigurationError(str(exc), "levels") from None
    if c.functionals is not None:
        for s in c.functionals:
            f = Functional.parse(s)
            L = c.L if c.L is not None else _GRID["L"]
            if f.x0 is not None and not 0.0 <= f.x0 <= L:
                raise InvalidConfigurationError(f"x0={f.x0} outside [0, {L}]", "functionals")


def parse_config(text: str, seed: int | None = None, env=None) -> RunConfig:
    """Parse JSON text. Seed precedence: ``seed`` argument, then SPDE_LAB_SEED, then the file."""
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise InvalidConfigurationError(
            f"line {exc.lineno}, column {exc.colno}: {exc.msg}", "config") from None
    if not isinstance(raw, dict):
        raise InvalidConfigurationError("top level must be a JSON object", "config")
    unknown = sorted(set(raw) - set(_TYPES))
    if unknown:
        raise InvalidConfigurationError(f"unknown key(s): {', '.join(unknown)}", unknown[0])
    kwargs = {k: _coerce(k, v) for k, v in raw.items()}
    env = os.environ if env is None else env
    if seed is not None:
        kwargs["master_seed"] = int(seed)
    elif env.get(SEED_ENV):
        try:
            kwargs["master_seed"] = int(env[SEED_ENV])
        except ValueError:
            raise InvalidConfigurationError(f"not an integer: {env[SEED_ENV]!r}",
                                            SEED_ENV) from None
    return RunConfig(**kwargs)


def serialize(config: RunConfig) -> str:
    return json.dumps(config.to_dict(), indent=2, sort_keys=True)
