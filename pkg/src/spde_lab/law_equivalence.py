"""Direct versus reweighted laws of terminal functionals.

The direct arm simulates the drifted equation. The reweighted arm simulates
the driftless one and carries the stopped log-density. At truncation level n
both arms are restricted to paths with tau_n = T and compared functional by
functional: a z-score on the means and a weighted two-sample
Kolmogorov-Smirnov statistic whose null distribution comes from a centered
bootstrap.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import math
import re
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from ._backend import kernels
from .coefficients import CoefficientSet
from .ensemble import Lattice, RawEnsemble, simulate
from .errors import ComputationError, InsufficientCoverageError, InvalidConfigurationError
from .girsanov import DEFAULT_LEVELS, check_levels, ess, normalized_weights
from .grid_noise import Grid, derive_seed
from .heat_solver import SchemeConfig

KINDS = ("point_value", "spatial_mean", "spatial_max", "l2_norm")
MAX_BLOWUP_FRACTION = 0.2
DEFAULT_BOOTSTRAP = 1000


@dataclass(frozen=True)
class Functional:
    kind: str
    x0: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConfigurationError(f"unknown functional {self.kind!r}", "functionals")
        if (self.kind == "point_value") != (self.x0 is not None):
            raise InvalidConfigurationError("point_value needs x0 (and only it does)",
                                            "functionals")

    @property
    def name(self) -> str:
        return f"point_value@{self.x0:g}" if self.kind == "point_value" else self.kind

    @classmethod
    def parse(cls, text: str) -> Functional:
        m = re.fullmatch(r"\s*point_value\s*[@:(]\s*([-+0-9.eE]+)\s*\)?\s*", text)
        if m:
            return cls("point_value", float(m.group(1)))
        return cls(text.strip())

    def evaluate(self, terminal: np.ndarray, dx: float, L: float) -> np.ndarray:
        """Functional of the state at t = T for each row of ``terminal``."""
        u = np.atleast_2d(terminal)
        if self.kind == "point_value":
            if not 0.0 <= self.x0 <= L:
                raise InvalidConfigurationError(f"x0={self.x0} outside [0, {L}]", "functionals")
            return u[:, min(int(self.x0 / dx), u.shape[1] - 1)].copy()
        if self.kind == "spatial_mean":
            return np.mean(u, axis=1)
        if self.kind == "spatial_max":
            return np.max(u, axis=1)
        return np.sqrt(np.sum(u * u, axis=1) * dx)


def default_functionals(L: float = 1.0) -> list[Functional]:
    return [Functional("point_value", L / 2), Functional("spatial_mean"),
            Functional("spatial_max"), Functional("l2_norm")]


@dataclass
class EnsembleResult:
    arm: str
    weighted: bool
    path_index: np.ndarray
    blow_up: np.ndarray
    values: dict[str, np.ndarray]
    levels: tuple[float, ...]
    stopped_log_xi: np.ndarray  # (N, nlev); zeros for unit-weight arms
    tau_at_T: np.ndarray  # (N, nlev) bool
    r2_terminal: np.ndarray
    master_seed: int
    config: dict = field(default_factory=dict)

    def __len__(self):
        return self.path_index.shape[0]

    @property
    def functional_names(self) -> list[str]:
        return list(self.values)

    @property
    def n_blown(self) -> int:
        return int(np.sum(self.blow_up))

    def head(self, n: int) -> EnsembleResult:
        """The first ``n`` paths (identical to a run with ``N = n``)."""
        return dataclasses.replace(
            self, path_index=self.path_index[:n], blow_up=self.blow_up[:n],
            values={k: v[:n] for k, v in self.values.items()},
            stopped_log_xi=self.stopped_log_xi[:n], tau_at_T=self.tau_at_T[:n],
            r2_terminal=self.r2_terminal[:n])

    def level_index(self, n) -> int:
        try:
            return self.levels.index(float(n))
        except ValueError:
            raise KeyError(f"level {n} not configured (have {self.levels})") from None

    def to_csv(self, fh: IO[str]):
        w = csv.writer(fh, lineterminator="\n")
        lv = [_fmt_level(n) for n in self.levels]
        w.writerow(["path_index", "blow_up", *self.values, *(f"log_xi_n{n}" for n in lv),
                    "r2_terminal", *(f"tau_n{n}" for n in lv)])
        cols = [self.values[k] for k in self.values]
        for i in range(len(self)):
            w.writerow([int(self.path_index[i]), int(self.blow_up[i]),
                        *(repr(float(c[i])) for c in cols),
                        *(repr(float(v)) for v in self.stopped_log_xi[i]),
                        repr(float(self.r2_terminal[i])),
                        *(int(t) for t in self.tau_at_T[i])])

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, fh: IO[str], arm: str = "unknown", master_seed: int = -1
                 ) -> EnsembleResult:
        rows = list(csv.reader(fh))
        if not rows:
            raise InvalidConfigurationError("empty ensemble CSV")
        header, body = rows[0], rows[1:]
        if header[:2] != ["path_index", "blow_up"] or "r2_terminal" not in header:
            raise InvalidConfigurationError("not an ensemble CSV (bad header)")
        data = np.array(body, dtype=np.float64).reshape(len(body), len(header))
        col = dict(zip(header, data.T))
        lv = [h[len("log_xi_n"):] for h in header if h.startswith("log_xi_n")]
        names = header[2:header.index(f"log_xi_n{lv[0]}")] if lv else header[2:header.index("r2_terminal")]
        stopped = np.column_stack([col[f"log_xi_n{n}"] for n in lv]) if lv else np.zeros((len(body), 0))
        tau = (np.column_stack([col[f"tau_n{n}"] for n in lv]) if lv
               else np.zeros((len(body), 0))).astype(bool)
        weighted = bool(np.any(stopped[np.isfinite(stopped)] != 0.0))
        return cls(arm, weighted, col["path_index"].astype(np.int64),
                   col["blow_up"].astype(bool), {n: col[n].copy() for n in names},
                   tuple(float(n) for n in lv), stopped, tau, col["r2_terminal"].copy(),
                   master_seed)


def _fmt_level(n: float) -> str:
    return str(int(n)) if float(n).is_integer() else repr(float(n))


def _to_result(raw: RawEnsemble, arm: str, weighted: bool, functionals: Sequence[Functional],
               dx: float, L: float, levels, master_seed: int, nt: int, config: dict
               ) -> EnsembleResult:
    with np.errstate(invalid="ignore"):
        values = {f.name: f.evaluate(raw.terminal, dx, L) for f in functionals}
    return EnsembleResult(arm, weighted, np.arange(raw.terminal.shape[0]), raw.blown, values,
                          tuple(levels), raw.stopped, raw.tau == nt, raw.r2_T, master_seed,
                          dict(config))


def _check_blowups(raw: RawEnsemble, arm: str):
    frac = float(np.mean(raw.blown))
    if frac > MAX_BLOWUP_FRACTION:
        i = int(np.argmax(raw.blown))
        raise ComputationError(
            f"{arm}: {frac:.1%} of paths blew up (first at step {raw.blow_k[i]}, cell "
            f"{raw.blow_j[i]}); the grid is too coarse for a meaningful comparison")


def run_direct(coeffs: CoefficientSet, grid: Grid, N: int, master_seed: int,
               functionals: Sequence[Functional] | None = None, levels=DEFAULT_LEVELS, *,
               boundary: str = "neumann", scheme: SchemeConfig = SchemeConfig(),
               threads: int = 1, lattice: Lattice | None = None) -> EnsembleResult:
    """Simulate the drifted equation under its own measure (unit weights).

    Stopping flags use R along the drifted paths.
    """
    if N < 2:
        raise InvalidConfigurationError("need at least 2 paths", "paths")
    levels = check_levels(levels)
    functionals = default_functionals(grid.L) if functionals is None else functionals
    lat = lattice or Lattice.from_grid(grid, boundary)
    scheme.check_initial(coeffs)
    raw = simulate(coeffs, lat, coeffs.h(grid.x, grid.L), N, master_seed, True, False, levels,
                   scheme=scheme, threads=threads)
    _check_blowups(raw, "direct")
    return _to_result(raw, "direct", False, functionals, lat.dx, grid.L, levels, master_seed,
                      lat.nt, {"coefficients": coeffs.name})


def run_reweighted(coeffs: CoefficientSet, grid: Grid, N: int, master_seed: int,
                   functionals: Sequence[Functional] | None = None, levels=DEFAULT_LEVELS, *,
                   boundary: str = "neumann", scheme: SchemeConfig = SchemeConfig(),
                   threads: int = 1, lattice: Lattice | None = None) -> EnsembleResult:
    """Simulate with drift b only and carry the stopped log-density built from d / a.

    ``coeffs.d`` never enters the dynamics here; it only defines R, so a
    mismatched reweighting is ``run_reweighted(coeffs.scaled_drift(lam), ...)``.
    """
    if N < 2:
        raise InvalidConfigurationError("need at least 2 paths", "paths")
    levels = check_levels(levels)
    functionals = default_functionals(grid.L) if functionals is None else functionals
    lat = lattice or Lattice.from_grid(grid, boundary)
    scheme.check_initial(coeffs)
    raw = simulate(coeffs, lat, coeffs.h(grid.x, grid.L), N, master_seed, False, True, levels,
                   scheme=scheme, threads=threads)
    _check_blowups(raw, "reweighted")
    res = _to_result(raw, "reweighted", True, functionals, lat.dx, grid.L, levels, master_seed,
                     lat.nt, {"coefficients": coeffs.name})
    ok = ~res.blow_up
    if not np.all(np.isfinite(res.stopped_log_xi[ok])):
        raise ComputationError("non-finite stopped log-weights in the reweighted arm")
    ess(normalized_weights(res.stopped_log_xi[ok, -1]))  # raises on degenerate weights
    return res


def arm_seeds(master_seed: int, replication: int = 0, shared: bool = False) -> tuple[int, int]:
    """(direct, reweighted) seeds of one replication; disjoint unless ``shared``."""
    direct = derive_seed(master_seed, 2 * replication)
    return direct, direct if shared else derive_seed(master_seed, 2 * replication + 1)


def tau_coverage(ensemble: EnsembleResult, levels=None) -> list[tuple[float, float]]:
    """Fraction of surviving paths with tau_n = T, per level."""
    levels = ensemble.levels if levels is None else check_levels(levels)
    ok = ~ensemble.blow_up
    out = []
    for n in levels:
        i = ensemble.level_index(n)
        out.append((n, float(np.mean(ensemble.tau_at_T[ok, i])) if ok.any() else 0.0))
    return out


def stopped_martingale_mean(ensemble: EnsembleResult, n) -> tuple[float, float]:
    """Mean of exp(stopped log-weight) over surviving paths, with its standard error."""
    i = ensemble.level_index(n)
    w = np.exp(ensemble.stopped_log_xi[~ensemble.blow_up, i])
    return float(np.mean(w)), float(np.std(w, ddof=1) / math.sqrt(w.size))


@dataclass(frozen=True)
class FunctionalStats:
    name: str
    direct_mean: float
    direct_stderr: float
    weighted_mean: float
    weighted_stderr: float
    z: float
    ks_stat: float
    ks_pvalue: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class TestReport:
    level: float
    n_direct: int
    n_reweighted: int
    coverage_direct: float
    coverage_reweighted: float
    ess: float
    ess_fraction: float
    bootstrap: int
    report_seed: int
    functionals: tuple[FunctionalStats, ...]

    __test__ = False  # not a pytest class

    def stats(self, name: str) -> FunctionalStats:
        for s in self.functionals:
            if s.name == name:
                return s
        raise KeyError(name)

    @property
    def max_abs_z(self) -> float:
        return max(abs(s.z) for s in self.functionals) if self.functionals else 0.0

    @property
    def min_ks_pvalue(self) -> float:
        return min(s.ks_pvalue for s in self.functionals) if self.functionals else 1.0

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "functionals"}
        d["functionals"] = [s.to_dict() for s in self.functionals]
        return d


def weighted_ks(x1, w1, x2, w2) -> float:
    """sup |F1 - F2| for weighted empirical CDFs (weights are normalized here)."""
    w1 = np.asarray(w1, float) / math.fsum(w1)
    w2 = np.asarray(w2, float) / math.fsum(w2)
    _, inv = np.unique(np.concatenate([np.asarray(x1, float), np.asarray(x2, float)]),
                       return_inverse=True)
    return float(np.max(np.abs(np.cumsum(np.bincount(inv, np.concatenate([w1, -w2]))))))


def _weighted_mean(x, w) -> float:
    return float(np.dot(w, x))


def compare(direct: EnsembleResult, reweighted: EnsembleResult, level,
            bootstrap: int = DEFAULT_BOOTSTRAP, report_seed: int = 0) -> TestReport:
    """Compare both arms restricted to {tau_n = T} at truncation level ``level``."""
    names = direct.functional_names
    if names != reweighted.functional_names:
        raise InvalidConfigurationError("arms carry different functional batteries")
    i1 = direct.level_index(level)
    i2 = reweighted.level_index(level)
    m1 = ~direct.blow_up & direct.tau_at_T[:, i1]
    m2 = ~reweighted.blow_up & reweighted.tau_at_T[:, i2]
    n1, n2 = int(m1.sum()), int(m2.sum())
    if n1 == 0 or n2 == 0:
        raise InsufficientCoverageError(
            f"no paths with tau_n = T at n={level} (direct {n1}, reweighted {n2})")
    cov1 = n1 / max(1, int((~direct.blow_up).sum()))
    cov2 = n2 / max(1, int((~reweighted.blow_up).sum()))
    w1 = normalized_weights(np.zeros(n1))
    lw2 = reweighted.stopped_log_xi[m2, i2] if reweighted.weighted else np.zeros(n2)
    w2 = normalized_weights(lw2)
    ess2 = ess(w2)
    X1 = np.column_stack([direct.values[k][m1] for k in names]) if names else np.zeros((n1, 0))
    X2 = np.column_stack([reweighted.values[k][m2] for k in names]) if names else np.zeros((n2, 0))

    rng = np.random.default_rng(int(report_seed) & (2**63 - 1))
    pooled_mass = np.concatenate([w1, -w2])
    sorts, base, ks = [], [], []
    for f in range(len(names)):
        pooled = np.concatenate([X1[:, f], X2[:, f]])
        order = np.argsort(pooled, kind="stable").astype(np.int64)
        v = pooled[order]
        # keep the last position of each run of ties: F1 - F2 lives on distinct values
        last = np.flatnonzero(np.append(v[1:] != v[:-1], True))
        last = None if last.size == v.size else last
        diff = np.cumsum(pooled_mass[order])
        base.append(diff if last is None else diff[last])
        sorts.append((order, last))
        ks.append(float(np.max(np.abs(base[-1]))))

    exceed = np.zeros(len(names), dtype=np.int64)
    boot_means = np.empty((bootstrap, len(names)))
    mass = np.empty(n1 + n2)
    for b in range(bootstrap):
        c1 = np.bincount(rng.integers(0, n1, n1), minlength=n1)
        c2 = np.bincount(rng.integers(0, n2, n2), minlength=n2) * w2
        c2 /= c2.sum()
        boot_means[b] = c2 @ X2
        np.divide(c1, n1, out=mass[:n1])
        np.negative(c2, out=mass[n1:])
        for f, (order, last) in enumerate(sorts):
            if kernels.centered_sup(mass, order, last, base[f]) >= ks[f]:
                exceed[f] += 1

    stats = []
    for f, name in enumerate(names):
        dm = _weighted_mean(X1[:, f], w1)
        wm = _weighted_mean(X2[:, f], w2)
        dse = float(np.std(X1[:, f], ddof=1) / math.sqrt(n1)) if n1 > 1 else 0.0
        wse = float(np.std(boot_means[:, f], ddof=1)) if bootstrap > 1 else 0.0
        denom = math.hypot(dse, wse)
        diff = dm - wm
        z = 0.0 if diff == 0.0 else (diff / denom if denom > 0 else math.copysign(math.inf, diff))
        p = (1.0 + exceed[f]) / (1.0 + bootstrap)
        stats.append(FunctionalStats(name, dm, dse, wm, wse, z, ks[f], p))
    return TestReport(float(level), n1, n2, cov1, cov2, ess2, ess2 / n2, int(bootstrap),
                      int(report_seed), tuple(stats))


def _restriction(res: EnsembleResult, level) -> np.ndarray:
    return ~res.blow_up & res.tau_at_T[:, res.level_index(level)]


def compare_levels(direct: EnsembleResult, reweighted: EnsembleResult, levels=None,
                   bootstrap: int = DEFAULT_BOOTSTRAP, report_seed: int = 0) -> list[dict]:
    """``compare`` at every level, as dicts; empty restrictions become error records.

    The bootstrap stream depends only on ``report_seed``, so levels whose
    restricted samples coincide share one computation.
    """
    levels = direct.levels if levels is None else check_levels(levels)
    out, prev = [], None
    for n in levels:
        key = (_restriction(direct, n).tobytes(), _restriction(reweighted, n).tobytes(),
               reweighted.stopped_log_xi[:, reweighted.level_index(n)].tobytes())
        if prev is not None and prev[0] == key:
            out.append({**prev[1], "level": float(n)})
            continue
        try:
            rec = compare(direct, reweighted, n, bootstrap, report_seed).to_dict()
        except InsufficientCoverageError as exc:
            rec = {"level": float(n), "error": str(exc)}
        out.append(rec)
        prev = (key, rec)
    return out

