"""Pure NumPy implementations of the hot kernels.

This module mirrors ``_kernels.pyx`` operation for operation so that the two
backends agree to the last bit on plain arithmetic. Paths are vectorized
along the leading axis; the spatial sweeps stay sequential because the
summation order is part of the contract.
"""
import math

import numpy as np

NAME = "numpy"

_MASK = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_S32 = np.uint64(32)
_TWO26 = 67108864.0
_TWO_M52 = 2.0 ** -52

# libm through ``math``: NumPy's SIMD log/pow are not bit-identical to glibc
_libm_log = np.frompyfunc(math.log, 1, 1)
_libm_pow = np.frompyfunc(math.pow, 2, 1)

# Wichura (1988), algorithm AS241 PPND16
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _horner(coef, r):
    acc = coef[7]
    for c in coef[6::-1]:
        acc = acc * r + c
    return acc


def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32-10 on arrays of uint64 holding 32-bit words."""
    k0 = np.uint64(k0)
    k1 = np.uint64(k1)
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (p1 >> _S32) ^ c1 ^ k0, p1 & _MASK, (p0 >> _S32) ^ c3 ^ k1, p0 & _MASK
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


def ndtri(p):
    """Inverse standard normal CDF for p in (0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    q = p - 0.5
    out = np.empty_like(p)
    central = np.abs(q) <= 0.425
    if central.any():
        qc = q[central]
        r = 0.180625 - qc * qc
        out[central] = qc * _horner(_A, r) / _horner(_B, r)
    tail = ~central
    if tail.any():
        qt = q[tail]
        r = np.where(qt < 0.0, p[tail], 1.0 - p[tail])
        r = np.sqrt(-_libm_log(r).astype(np.float64))
        near = r <= 5.0
        rn = r - 1.6
        rf = r - 5.0
        val = np.where(near, _horner(_C, rn) / _horner(_D, rn), _horner(_E, rf) / _horner(_F, rf))
        out[tail] = np.where(qt < 0.0, -val, val)
    return out


def normals(key0, key1, path, start, n):
    """Standard normals ``start .. start+n-1`` of the stream ``(key, path)``."""
    idx = np.uint64(start) + np.arange(n, dtype=np.uint64)
    return _normals_at(key0, key1, np.uint64(path), idx)


def _normals_at(key0, key1, path, idx):
    block = idx >> np.uint64(1)
    odd = (idx & np.uint64(1)).astype(bool)
    path = np.asarray(path, dtype=np.uint64)
    x0, x1, x2, x3 = philox4x32(block & _MASK, block >> _S32, path & _MASK, path >> _S32, key0, key1)
    hi = np.where(odd, x2, x0) >> np.uint64(6)
    lo = np.where(odd, x3, x1) >> np.uint64(6)
    u = (hi.astype(np.float64) * _TWO26 + lo.astype(np.float64) + 0.5) * _TWO_M52
    return ndtri(u)


def _powabs(u, g):
    x = np.abs(u)
    if g == 1.0:
        return x
    if g == 0.0:
        return np.ones_like(x)
    if g == 0.5:
        return np.sqrt(x)
    if g == 0.25:
        return np.sqrt(np.sqrt(x))
    if g == 0.75:
        return np.sqrt(x) * np.sqrt(np.sqrt(x))
    return _libm_pow(x, g).astype(np.float64)


def _cubic(u):
    return 2.0 * u * (1.0 - u * u)


def diffusion(u, cp):
    u = np.asarray(u, dtype=np.float64)
    if cp[0] == 0.0:
        return np.full_like(u, cp[1])
    return np.where(u == 0.0, 0.0, cp[1] * np.copysign(_powabs(u, cp[2]), u))


def drift(u, cp, include_d):
    u = np.asarray(u, dtype=np.float64)
    f = np.full_like(u, cp[3])
    if include_d and (cp[4] != 0.0 or cp[5] != 0.0):
        f = f + (cp[4] + cp[5] * _cubic(u))
    return f


def ratio(u, cp):
    u = np.asarray(u, dtype=np.float64)
    rd0, rdac = cp[6], cp[7]
    if rd0 == 0.0 and rdac == 0.0:
        return np.zeros_like(u)
    if cp[0] == 0.0:
        return (rd0 + rdac * _cubic(u)) / cp[1]
    if rd0 == 0.0:
        return (2.0 * rdac / cp[1]) * _powabs(u, 1.0 - cp[2]) * (1.0 - u * u)
    return (rd0 + rdac * _cubic(u)) / diffusion(u, cp)


def _advance(u, w, dt, dx, off, cprime, denom, cp, include_d, weights):
    """One scheme step for a (paths, nx) block; returns (u_next, R.dW sums, R^2 sums)."""
    npaths, nx = u.shape
    ri = np.zeros(npaths)
    rr = np.zeros(npaths)
    R = ratio(u, cp)
    rhs = u + dt * drift(u, cp, include_d) + diffusion(u, cp) * w / dx
    for j in range(nx):
        if weights:
            ri = ri + R[:, j] * w[:, j]
        rr = rr + R[:, j] * R[:, j]
    tmp = np.empty_like(rhs)
    tmp[:, 0] = rhs[:, 0] / denom[0]
    for j in range(1, nx):
        tmp[:, j] = (rhs[:, j] - off * tmp[:, j - 1]) / denom[j]
    out = np.empty_like(rhs)
    out[:, nx - 1] = tmp[:, nx - 1]
    for j in range(nx - 2, -1, -1):
        out[:, j] = tmp[:, j] - cprime[j] * out[:, j + 1]
    return out, ri, rr


def _neumaier(s, c, x):
    t = s + x
    big = np.abs(s) >= np.abs(x)
    c = c + np.where(big, (s - t) + x, (x - t) + s)
    return t, c


def _bad(u, clamp):
    with np.errstate(invalid="ignore"):
        return ~np.isfinite(u) | (np.abs(u) > clamp)


def step(u, w, dt, dx, off, cprime, denom, cp, include_d):
    """Advance a single state vector by one step."""
    u = np.ascontiguousarray(u, dtype=np.float64)[None, :]
    w = np.ascontiguousarray(w, dtype=np.float64)[None, :]
    with np.errstate(all="ignore"):
        out, _, _ = _advance(u, w, dt, dx, off, cprime, denom, cp, include_d, False)
    return out[0]


def rollout(noise, h, dt, dx, off, cprime, denom, cp, include_d, area, clamp):
    """Full single-path rollout with explicit noise.

    Returns ``(u, log_xi, r2, blow_k, blow_j)`` where ``u`` has shape
    ``(nt + 1, nx)`` and the weight arrays have length ``nt + 1``.
    """
    noise = np.ascontiguousarray(noise, dtype=np.float64)
    nt, nx = noise.shape
    u = np.empty((nt + 1, nx))
    u[0] = h
    log_xi = np.zeros(nt + 1)
    r2 = np.zeros(nt + 1)
    si = ci = sr = cr = np.zeros(1)
    state = u[0][None, :].copy()
    with np.errstate(all="ignore"):
        for k in range(nt):
            state, ri, rr = _advance(state, noise[k][None, :], dt, dx, off, cprime, denom,
                                     cp, include_d, True)
            si, ci = _neumaier(si, ci, ri)
            sr, cr = _neumaier(sr, cr, rr)
            r2[k + 1] = ((sr + cr) * area)[0]
            log_xi[k + 1] = ((si + ci) - 0.5 * ((sr + cr) * area))[0]
            u[k + 1] = state[0]
            bad = _bad(state[0], clamp)
            if bad.any():
                return u, log_xi, r2, k + 1, int(np.argmax(bad))
    return u, log_xi, r2, -1, -1


def ensemble(key0, key1, path_start, npaths, nt, nx, scale, dt, dx, off, cprime, denom, cp,
             include_d, weights, h, clamp, levels, tol):
    """Simulate ``npaths`` consecutive paths with on-the-fly noise.

    Returns ``(u_T, log_xi_T, r2_T, tau, stopped, blow_k, blow_j)``.
    """
    levels = np.asarray(levels, dtype=np.float64)
    nlev = levels.shape[0]
    paths = np.uint64(path_start) + np.arange(npaths, dtype=np.uint64)
    state = np.tile(np.asarray(h, dtype=np.float64), (npaths, 1))
    si = np.zeros(npaths)
    ci = np.zeros(npaths)
    sr = np.zeros(npaths)
    cr = np.zeros(npaths)
    tau = np.full((npaths, nlev), -1, dtype=np.int64)
    stopped = np.zeros((npaths, nlev))
    blow_k = np.full(npaths, -1, dtype=np.int64)
    blow_j = np.full(npaths, -1, dtype=np.int64)
    thresholds = levels * (1.0 - tol)
    cols = np.arange(nx, dtype=np.uint64)
    area = scale * scale

    def check(k):
        r2 = (sr + cr) * area
        lx = (si + ci) - 0.5 * r2 if weights else np.zeros(npaths)
        hit = (tau < 0) & (r2[:, None] >= thresholds[None, :]) & (blow_k < 0)[:, None]
        tau[hit] = k
        stopped[hit] = np.broadcast_to(lx[:, None], hit.shape)[hit]

    with np.errstate(all="ignore"):
        for k in range(nt):
            check(k)
            idx = np.uint64(k * nx) + cols
            z = _normals_at(key0, key1, paths[:, None], idx[None, :])
            w = z * scale
            state, ri, rr = _advance(state, w, dt, dx, off, cprime, denom, cp, include_d, weights)
            si, ci = _neumaier(si, ci, ri)
            sr, cr = _neumaier(sr, cr, rr)
            bad = _bad(state, clamp)
            newly = bad.any(axis=1) & (blow_k < 0)
            if newly.any():
                blow_k[newly] = k + 1
                blow_j[newly] = np.argmax(bad[newly], axis=1)
        check(nt)
        r2_T = (sr + cr) * area
        log_T = (si + ci) - 0.5 * r2_T if weights else np.zeros(npaths)
    unset = tau < 0
    stopped[unset] = np.broadcast_to(log_T[:, None], unset.shape)[unset]
    tau[unset] = nt
    blown = blow_k >= 0
    state[blown] = np.nan
    log_T[blown] = np.nan
    r2_T[blown] = np.nan
    stopped[blown] = np.nan
    tau[blown] = -1
    return state, log_T, r2_T, tau, stopped, blow_k, blow_j


def centered_sup(mass, order, last, base):
    """max_i |cumsum(mass[order])[last[i]] - base[i]|; ``last=None`` means every position."""
    diff = np.cumsum(mass[order])
    if last is not None:
        diff = diff[last]
    diff -= base
    return float(max(diff.max(), -diff.min()))
