"""Command-line entry point: ``spde-lab <experiment> [--config PATH] ...``.

Every experiment writes ``summary.json`` into the output directory; the
ensemble experiments also write one CSV per arm and the plot series produced
by :func:`emit_plot_data`.

Exit codes: 0 success, 2 configuration error, 3 computation error, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND, kernels
from .coefficients import InitialCondition, validate, zero_drift_preset
from .config import EXPERIMENTS, RunConfig, parse_config, serialize
from .errors import (ComputationError, DimensionError, InsufficientCoverageError,
                     InvalidConfigurationError, SchemaError, UndefinedRatioError,
                     UnsupportedOrderError)
from .girsanov import novikov_estimate
from .grid_noise import Grid, make_grid, sample_noise, stream_key
from .heat_solver import simulate_path, weak_form_residual, write_path_csv
from .law_equivalence import (EnsembleResult, arm_seeds, compare, compare_levels, run_direct,
                              run_reweighted, stopped_martingale_mean, tau_coverage)
from .sde_oracle import SdeSpec, run_sde_direct, run_sde_reweighted, tilt_estimate

EXIT_OK, EXIT_CONFIG, EXIT_COMPUTATION, EXIT_IO = 0, 2, 3, 4
CONFIG_ERRORS = (InvalidConfigurationError, UndefinedRatioError, DimensionError,
                 UnsupportedOrderError, SchemaError)

COVERAGE_HEADER = ["seed_index", "gamma", "n", "coverage", "coverage_direct"]
ESS_HEADER = ["seed_index", "gamma", "N", "level", "ess", "ess_fraction"]
Z_HEADER = ["seed_index", "gamma", "N", "level", "functional", "z", "ks_stat", "ks_pvalue"]


# --------------------------------------------------------------------------- experiments

def noise_selftest(cfg: RunConfig, out: Path) -> dict:
    grid = cfg.grid()
    n = cfg.paths
    k0, k1 = stream_key(cfg.master_seed)
    total = np.empty(n)
    first = np.empty(n)
    sumsq = 0.0
    for p in range(n):
        z = kernels.normals(k0, k1, p, 0, grid.nt * grid.nx) * grid.noise_scale
        total[p] = np.sum(z)
        first[p] = z[0]
        sumsq += float(np.dot(z, z))
    var_w = float(np.var(total, ddof=1))
    cell_var = sumsq / (n * grid.nt * grid.nx)
    ratio = var_w / (grid.T * grid.L)
    return {
        "samples": n,
        "var_W_TL": var_w,
        "var_W_TL_ratio": ratio,
        "cell_variance_ratio": cell_var / grid.cell_area,
        "first_cell_variance_ratio": float(np.var(first, ddof=1)) / grid.cell_area,
        "mean_W_TL": float(np.mean(total)),
        "passed": bool(0.95 <= ratio <= 1.05),
        "runs": [],
    }


def residual_check(cfg: RunConfig, out: Path) -> dict:
    """Weak-form residuals under (nt, nx) -> (4 nt, 2 nx) refinement."""
    c = cfg.resolved()
    grids = [make_grid(c.T, c.L, c.nt * 4 ** i, c.nx * 2 ** i) for i in range(c.refinements)]
    cases = {
        "eigenfunction": (zero_drift_preset(0.0, 0.0, InitialCondition(0.0, 1.0, 1)), 1, False),
        "additive_noise": (zero_drift_preset(1.0, 0.0), c.paths, False),
        "configured": (c.coefficients(), c.paths, True),
    }
    result = {"grids": [[g.nt, g.nx] for g in grids], "cases": {}, "runs": []}
    for name, (coeffs, npaths, include_d) in cases.items():
        per_mode = {}
        for m in c.modes:
            rms = []
            for g in grids:
                res = []
                for p in range(npaths):
                    noise = sample_noise(g, c.master_seed, p)
                    path = simulate_path(coeffs, include_d, g, noise, c.scheme(), c.boundary)
                    res.append(weak_form_residual(path, noise, coeffs, include_d, g, m))
                rms.append(math.sqrt(math.fsum(r * r for r in res) / len(res)))
            ratios = [a / b if b > 0 else math.inf for a, b in zip(rms, rms[1:])]
            per_mode[str(m)] = {"rms_residual": rms, "reduction": ratios,
                                "strictly_decreasing": all(b < a for a, b in zip(rms, rms[1:]))}
        result["cases"][name] = {"paths": npaths, "coefficients": coeffs.name, "modes": per_mode}
    return result


def _arm_entry(res: EnsembleResult) -> dict:
    ok = ~res.blow_up
    entry = {"blowups": res.n_blown,
             "novikov": novikov_estimate(res.r2_terminal[ok]).to_dict() if ok.any() else None}
    if res.weighted:
        entry["stopped_martingale"] = [
            dict(zip(("n", "mean", "stderr"), (n, *stopped_martingale_mean(res, n))))
            for n in res.levels]
    return entry


def _write_ensemble(res: EnsembleResult, path: Path):
    with open(path, "w", newline="") as fh:
        res.to_csv(fh)


def _pair_entry(r: int, gamma, direct, rew, cfg: RunConfig, files: tuple[str, str],
                seeds: tuple[int, int]) -> dict:
    cov_d = dict(tau_coverage(direct))
    cov_r = dict(tau_coverage(rew))
    reports = compare_levels(direct, rew, cfg.levels, cfg.bootstrap, cfg.report_seed)
    top = next((x for x in reversed(reports) if "error" not in x), None)
    entry = {
        "seed_index": r, "gamma": gamma, "N": len(direct),
        "direct_seed": seeds[0], "reweighted_seed": seeds[1],
        "direct_csv": files[0], "reweighted_csv": files[1],
        "coverage": [{"n": n, "reweighted": cov_r[n], "direct": cov_d[n]} for n in rew.levels],
        "direct": _arm_entry(direct), "reweighted": _arm_entry(rew),
        "ess": top["ess"] if top else None,
        "ess_fraction": top["ess_fraction"] if top else None,
        "ess_level": top["level"] if top else None,
        "reports": reports,
    }
    if cfg.n_sweep:
        entry["sweep"] = []
        for n_paths in cfg.n_sweep:
            if n_paths > len(direct):
                raise InvalidConfigurationError(f"sweep size {n_paths} exceeds paths", "n_sweep")
            sub = compare(direct.head(n_paths), rew.head(n_paths), max(cfg.levels),
                          cfg.bootstrap, cfg.report_seed)
            entry["sweep"].append({"N": n_paths, "report": sub.to_dict()})
    return entry


def _export_paths(cfg: RunConfig, grid: Grid, coeffs, include_d: bool, seed: int, tag: str,
                  out: Path, ratio_from=None):
    if not cfg.export_paths:
        return []
    folder = out / "paths"
    folder.mkdir(parents=True, exist_ok=True)
    names = []
    for p in range(min(cfg.export_paths, cfg.paths)):
        noise = sample_noise(grid, seed, p)
        path = simulate_path(coeffs, include_d, grid, noise, cfg.scheme(), cfg.boundary,
                             ratio_from=ratio_from)
        name = folder / f"{tag}_path{p}.csv"
        with open(name, "w", newline="") as fh:
            write_path_csv(path, fh)
        names.append(str(name.relative_to(out)))
    return names


def compare_laws(cfg: RunConfig, out: Path) -> dict:
    grid = cfg.grid()
    funcs = cfg.functional_list()
    runs, exported = [], []
    gammas = cfg.gammas()
    for r in range(cfg.replications):
        for gi, gamma in enumerate(gammas):
            # every (replication, gamma) trial draws fresh streams, so gamma values
            # within a replication are independent experiments
            seeds = arm_seeds(cfg.master_seed, r * len(gammas) + gi, cfg.shared_seeds)
            coeffs = cfg.coefficients(gamma)
            target = coeffs.scaled_drift(cfg.reweight_scale)
            common = dict(boundary=cfg.boundary, scheme=cfg.scheme(), threads=cfg.threads)
            direct = run_direct(coeffs, grid, cfg.paths, seeds[0], funcs, cfg.levels, **common)
            rew = run_reweighted(target, grid, cfg.paths, seeds[1], funcs, cfg.levels, **common)
            tag = f"r{r}" + (f"_gamma{gamma:g}" if cfg.preset == "allen_cahn" else "")
            files = (f"direct_{tag}.csv", f"reweighted_{tag}.csv")
            _write_ensemble(direct, out / files[0])
            _write_ensemble(rew, out / files[1])
            g = gamma if cfg.preset == "allen_cahn" else None
            runs.append(_pair_entry(r, g, direct, rew, cfg, files, seeds))
            if r == 0:
                exported += _export_paths(cfg, grid, coeffs, True, seeds[0], f"direct_{tag}", out)
                exported += _export_paths(cfg, grid, coeffs.without_drift(), False, seeds[1],
                                          f"reweighted_{tag}", out, ratio_from=target)
    summary = {"runs": runs, "exported_paths": exported,
               "ratio_check": validate(cfg.coefficients(), grid, (-2.0, 2.0)).to_dict()}
    return summary


def sde_oracle(cfg: RunConfig, out: Path) -> dict:
    c = cfg.resolved()
    spec = SdeSpec(c.mu, c.sigma, c.u0, c.T, c.nt, c.b)
    runs = []
    for r in range(c.replications):
        seeds = arm_seeds(c.master_seed, r, c.shared_seeds)
        direct = run_sde_direct(spec, c.paths, seeds[0], c.levels, c.threads)
        rew = run_sde_reweighted(spec, c.paths, seeds[1], c.levels, c.threads,
                                 ratio_mu=c.mu * c.reweight_scale)
        files = (f"direct_r{r}.csv", f"reweighted_r{r}.csv")
        _write_ensemble(direct, out / files[0])
        _write_ensemble(rew, out / files[1])
        entry = _pair_entry(r, None, direct, rew, c, files, seeds)
        entry["tilt"] = tilt_estimate(rew, spec).to_dict()
        runs.append(entry)
    first = runs[0]["tilt"]
    top = next((x for x in reversed(runs[0]["reports"]) if "error" not in x), None)
    if top is None:
        raise InsufficientCoverageError("no truncation level has paths with tau_n = T")
    return {
        "weighted_mean": first["weighted_mean"],
        "weighted_mean_stderr": first["weighted_mean_stderr"],
        "weighted_second": first["weighted_second"],
        "weighted_second_stderr": first["weighted_second_stderr"],
        "target_mean": first["target_mean"],
        "target_second": first["target_second"],
        "ks_pvalue": top["functionals"][0]["ks_pvalue"],
        "ks_rejections_at_0.01": sum(
            1 for run in runs for x in run["reports"][-1:] if "error" not in x
            and x["functionals"][0]["ks_pvalue"] <= 0.01),
        "runs": runs,
    }


def simulate(cfg: RunConfig, out: Path) -> dict:
    grid = cfg.grid()
    funcs = cfg.functional_list()
    coeffs = cfg.coefficients()
    common = dict(boundary=cfg.boundary, scheme=cfg.scheme(), threads=cfg.threads)
    if cfg.arm == "direct":
        res = run_direct(coeffs, grid, cfg.paths, cfg.master_seed, funcs, cfg.levels, **common)
        exported = _export_paths(cfg, grid, coeffs, True, cfg.master_seed, "direct", out)
    else:
        target = coeffs.scaled_drift(cfg.reweight_scale)
        res = run_reweighted(target, grid, cfg.paths, cfg.master_seed, funcs, cfg.levels,
                             **common)
        exported = _export_paths(cfg, grid, coeffs.without_drift(), False, cfg.master_seed,
                                 "reweighted", out, ratio_from=target)
    name = f"{cfg.arm}.csv"
    _write_ensemble(res, out / name)
    cov = tau_coverage(res)
    entry = {"seed_index": 0, "gamma": cfg.gamma if cfg.preset == "allen_cahn" else None,
             "N": len(res), "csv": name, "coverage": [{"n": n, cfg.arm: c} for n, c in cov],
             cfg.arm: _arm_entry(res),
             "means": {k: float(np.nanmean(v[~res.blow_up])) for k, v in res.values.items()}}
    return {"runs": [entry], "exported_paths": exported,
            "ratio_check": validate(coeffs, grid, (-2.0, 2.0)).to_dict()}


RUNNERS = {"noise-selftest": noise_selftest, "residual-check": residual_check,
           "sde-oracle": sde_oracle, "simulate": simulate, "compare-laws": compare_laws}


# --------------------------------------------------------------------------- plot data

def _rows_to_csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def emit_plot_data(summary: dict) -> dict[str, str]:
    """Tidy CSV series (coverage vs n, ESS vs gamma, z-score vs N) from a summary."""
    runs = summary.get("runs") if isinstance(summary, dict) else None
    if not isinstance(runs, list):
        raise SchemaError("summary must be an object with a 'runs' list")
    cov, ess_rows, z = [], [], []
    try:
        for run in runs:
            key = (run["seed_index"], run["gamma"])
            for c in run["coverage"]:
                main = c.get("reweighted", c.get("direct"))
                cov.append([*key, c["n"], main, c.get("direct", "")])
            if run.get("ess") is not None:
                ess_rows.append([*key, run["N"], run["ess_level"], run["ess"],
                                 run["ess_fraction"]])
            blocks = [(run["N"], rep) for rep in run.get("reports", [])]
            blocks += [(s["N"], s["report"]) for s in run.get("sweep", [])]
            for n_paths, rep in blocks:
                if "error" in rep:
                    continue
                for f in rep["functionals"]:
                    z.append([*key, n_paths, rep["level"], f["name"], f["z"], f["ks_stat"],
                              f["ks_pvalue"]])
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"summary run record is missing field {exc}") from None
    return {"coverage.csv": _rows_to_csv(COVERAGE_HEADER, cov),
            "ess.csv": _rows_to_csv(ESS_HEADER, ess_rows),
            "zscores.csv": _rows_to_csv(Z_HEADER, z)}


# --------------------------------------------------------------------------- driver

def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def run(cfg: RunConfig) -> dict:
    """Run one experiment and write its artifacts; returns the summary."""
    cfg = cfg.resolved()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    body = RUNNERS[cfg.experiment](cfg, out)
    summary = {"experiment": cfg.experiment, "version": __version__, "backend": BACKEND,
               "master_seed": cfg.master_seed, "config": cfg.to_dict(), **body,
               "wall_clock_s": time.perf_counter() - start}
    summary["notes"] = _notes(cfg)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, default=_json_default, allow_nan=True)
        fh.write("\n")
    for name, text in emit_plot_data(summary).items():
        (out / name).write_text(text)
    with open(out / "config.json", "w") as fh:
        fh.write(serialize(cfg) + "\n")
    return summary


def _notes(cfg: RunConfig) -> list[str]:
    notes = ["law comparison probes uniqueness in law through a finite functional battery "
             "with weighted KS tests; it cannot cover all Borel sets of path space"]
    if cfg.preset == "allen_cahn" and cfg.experiment in ("simulate", "compare-laws",
                                                         "residual-check"):
        notes.extend(cfg.coefficients().notes)
    return notes


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spde-lab", description=__doc__.splitlines()[0])
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", type=Path, help="JSON configuration file")
    p.add_argument("--seed", type=int, help="master seed (overrides config and SPDE_LAB_SEED)")
    p.add_argument("--threads", type=int, help="worker threads for ensemble simulation")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--export-paths", nargs="?", type=int, const=10, default=None, metavar="K",
                   help="also write full per-path CSVs for the first K paths (default 10)")
    return p


def load_config(args) -> RunConfig:
    text = args.config.read_text(encoding="utf-8") if args.config else "{}"
    cfg = parse_config(text, seed=args.seed)
    upd = {"experiment": args.experiment}
    if args.threads is not None:
        upd["threads"] = args.threads
    if args.out is not None:
        upd["out"] = str(args.out)
    if args.export_paths is not None:
        upd["export_paths"] = args.export_paths
    return RunConfig(**{**cfg.__dict__, **upd})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        summary = run(cfg)
    except CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ComputationError as exc:
        print(f"computation error: {exc}", file=sys.stderr)
        return EXIT_COMPUTATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"{cfg.experiment}: wrote {Path(cfg.out) / 'summary.json'} "
          f"({summary['wall_clock_s']:.1f} s, backend {BACKEND})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
