"""Compiled kernels vs the NumPy fallback.

    python benchmarks/bench_kernels.py [--repeat 3] [--paths 256] [--nt 200]

Each case runs on both backends, checks that outputs are bit-identical and
prints the best-of-N wall time and the speedup.
"""
import argparse
import sys
import time

import numpy as np

from spde_lab import _kernels_py as pure
from spde_lab.coefficients import AllenCahnParams, InitialCondition, allen_cahn_preset
from spde_lab.grid_noise import stream_key
from spde_lab.heat_solver import thomas_factors

try:
    from spde_lab import _kernels as compiled
except ImportError:
    sys.exit("compiled extension not built; run `pip install -e . --no-build-isolation`")


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b), equal_nan=True)


def cases(args):
    k0, k1 = stream_key(0)
    n = args.paths * args.nt * 32
    yield f"normals ({n:,} draws)", lambda k: k.normals(k0, k1, 0, 0, n)

    nx, dt = 32, 1e-4
    f = thomas_factors(nx, dt, 1 / nx, "neumann")
    levels = np.array([1.0, 2, 4, 8, 16, 32])
    for g in (1.0, 0.75, 0.5):
        cp = allen_cahn_preset(AllenCahnParams(1.0, g)).kernel_params()
        h = np.full(nx, 0.5)

        def ens(k, cp=cp, h=h):
            return k.ensemble(k0, k1, 0, args.paths, args.nt, nx, np.sqrt(dt / nx), dt,
                              1 / nx, f.off, f.cprime, f.denom, cp, False, True, h, np.inf,
                              levels, 1e-12)
        yield f"ensemble gamma={g} ({args.paths}x{args.nt}x{nx})", ens

    rng = np.random.default_rng(0)
    m = 200_000
    mass = rng.normal(size=m)
    order = rng.permutation(m).astype(np.int64)
    base = rng.normal(size=m)
    yield f"centered_sup (n={m:,})", lambda k: k.centered_sup(mass, order, None, base)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--paths", type=int, default=256)
    p.add_argument("--nt", type=int, default=200)
    args = p.parse_args(argv)
    print(f"{'case':<40} {'cython':>10} {'numpy':>10} {'speedup':>8}  identical")
    for name, fn in cases(args):
        tc, oc = best_of(lambda: fn(compiled), args.repeat)
        tp, op = best_of(lambda: fn(pure), args.repeat)
        print(f"{name:<40} {tc * 1e3:>8.1f}ms {tp * 1e3:>8.1f}ms {tp / tc:>7.1f}x  {same(oc, op)}")


if __name__ == "__main__":
    main()
