# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: counter-based noise, scheme step, path rollouts.

Operation order matches ``_kernels_py`` exactly; do not reassociate.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, fabs, pow, copysign, isfinite, NAN
from libc.stdint cimport uint32_t, uint64_t, int64_t

cnp.import_array()

NAME = "cython"

cdef double _TWO26 = 67108864.0
cdef double _TWO_M52 = 2.220446049250313080847263336181640625e-16

cdef double[8] _A = [3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
                     1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
                     3.3430575583588128105e4, 2.5090809287301226727e3]
cdef double[8] _B = [1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
                     2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
                     5.2264952788528545610e3]
cdef double[8] _C = [1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
                     3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
                     2.27238449892691845833e-2, 7.74545014278341407640e-4]
cdef double[8] _D = [1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
                     1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
                     1.05075007164441684324e-9]
cdef double[8] _E = [6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
                     2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
                     2.71155556874348757815e-5, 2.01033439929228813265e-7]
cdef double[8] _F = [1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
                     7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
                     2.04426310338993978564e-15]


cdef inline double _horner(const double* c, double r) noexcept nogil:
    cdef double acc = c[7]
    cdef int i
    for i in range(6, -1, -1):
        acc = acc * r + c[i]
    return acc


cdef inline double _ndtri(double p) noexcept nogil:
    cdef double q = p - 0.5
    cdef double r, val
    if fabs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _horner(_A, r) / _horner(_B, r)
    r = p if q < 0.0 else 1.0 - p
    r = sqrt(-log(r))
    if r <= 5.0:
        r = r - 1.6
        val = _horner(_C, r) / _horner(_D, r)
    else:
        r = r - 5.0
        val = _horner(_E, r) / _horner(_F, r)
    return -val if q < 0.0 else val


cdef inline void _philox(uint64_t block, uint64_t path, uint32_t k0, uint32_t k1,
                         uint32_t* out) noexcept nogil:
    cdef uint32_t c0 = <uint32_t>block, c1 = <uint32_t>(block >> 32)
    cdef uint32_t c2 = <uint32_t>path, c3 = <uint32_t>(path >> 32)
    cdef uint32_t n0, n2
    cdef uint64_t p0, p1
    cdef int r
    for r in range(10):
        p0 = <uint64_t>0xD2511F53 * c0
        p1 = <uint64_t>0xCD9E8D57 * c2
        n0 = <uint32_t>(p1 >> 32) ^ c1 ^ k0
        n2 = <uint32_t>(p0 >> 32) ^ c3 ^ k1
        c0 = n0
        c1 = <uint32_t>p1
        c2 = n2
        c3 = <uint32_t>p0
        k0 = k0 + <uint32_t>0x9E3779B9
        k1 = k1 + <uint32_t>0xBB67AE85
    out[0] = c0
    out[1] = c1
    out[2] = c2
    out[3] = c3


cdef enum:
    _NBUF = 256


cdef void _fill_normals(uint32_t k0, uint32_t k1, uint64_t path, uint64_t start, Py_ssize_t n,
                        double scale, double* out) noexcept nogil:
    # Three passes per buffer so the central branch of the inverse CDF,
    # which covers ~85% of draws, runs as a branch-free vectorizable loop.
    # Each element sees exactly the same operations as _ndtri.
    cdef uint32_t x[4]
    cdef double central[_NBUF]
    cdef uint64_t idx, block, cached = <uint64_t>(-1)
    cdef uint32_t hi, lo
    cdef Py_ssize_t i, i0, m
    cdef bint have = False
    cdef double q, r, p
    i0 = 0
    while i0 < n:
        m = min(<Py_ssize_t>_NBUF, n - i0)
        for i in range(m):
            idx = start + <uint64_t>(i0 + i)
            block = idx >> 1
            if not have or block != cached:
                _philox(block, path, k0, k1, x)
                cached = block
                have = True
            if idx & 1:
                hi = x[2] >> 6
                lo = x[3] >> 6
            else:
                hi = x[0] >> 6
                lo = x[1] >> 6
            out[i0 + i] = (<double>hi * _TWO26 + <double>lo + 0.5) * _TWO_M52
        for i in range(m):
            q = out[i0 + i] - 0.5
            r = 0.180625 - q * q
            central[i] = q * _horner(_A, r) / _horner(_B, r)
        for i in range(m):
            p = out[i0 + i]
            if fabs(p - 0.5) <= 0.425:
                out[i0 + i] = central[i] * scale
            else:
                out[i0 + i] = _ndtri(p) * scale
        i0 += m


def philox4x32(uint64_t c0, uint64_t c1, uint64_t c2, uint64_t c3, uint32_t k0, uint32_t k1):
    """Single Philox4x32-10 block (for known-answer tests)."""
    cdef uint32_t x[4]
    _philox(c0 | (c1 << 32), c2 | (c3 << 32), k0, k1, x)
    return x[0], x[1], x[2], x[3]


def ndtri(p):
    cdef const double[::1] pv = np.ascontiguousarray(p, dtype=np.float64).ravel()
    out = np.empty(pv.shape[0])
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    for i in range(pv.shape[0]):
        ov[i] = _ndtri(pv[i])
    return out.reshape(np.shape(p))


def normals(uint32_t key0, uint32_t key1, uint64_t path, uint64_t start, Py_ssize_t n):
    """Standard normals ``start .. start+n-1`` of the stream ``(key, path)``."""
    out = np.empty(n)
    cdef double[::1] ov = out
    if n > 0:
        with nogil:
            _fill_normals(key0, key1, path, start, n, 1.0, &ov[0])
    return out


cdef inline double _powabs(double u, double g) noexcept nogil:
    cdef double x = fabs(u)
    if g == 1.0:
        return x
    if g == 0.0:
        return 1.0
    if g == 0.5:
        return sqrt(x)
    if g == 0.25:
        return sqrt(sqrt(x))
    if g == 0.75:
        return sqrt(x) * sqrt(sqrt(x))
    return pow(x, g)


cdef inline double _cubic(double u) noexcept nogil:
    return 2.0 * u * (1.0 - u * u)


cdef inline double _diffusion(double u, const double* cp) noexcept nogil:
    if cp[0] == 0.0:
        return cp[1]
    if u == 0.0:
        return 0.0
    return cp[1] * copysign(_powabs(u, cp[2]), u)


cdef inline double _drift(double u, const double* cp, bint include_d) noexcept nogil:
    cdef double f = cp[3]
    if include_d and (cp[4] != 0.0 or cp[5] != 0.0):
        f = f + (cp[4] + cp[5] * _cubic(u))
    return f


cdef inline double _ratio(double u, const double* cp) noexcept nogil:
    cdef double rd0 = cp[6], rdac = cp[7]
    if rd0 == 0.0 and rdac == 0.0:
        return 0.0
    if cp[0] == 0.0:
        return (rd0 + rdac * _cubic(u)) / cp[1]
    if rd0 == 0.0:
        return (2.0 * rdac / cp[1]) * _powabs(u, 1.0 - cp[2]) * (1.0 - u * u)
    return (rd0 + rdac * _cubic(u)) / _diffusion(u, cp)


def diffusion(u, const double[::1] cp):
    cdef const double[::1] uv = np.ascontiguousarray(u, dtype=np.float64).ravel()
    out = np.empty(uv.shape[0])
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    for i in range(uv.shape[0]):
        ov[i] = _diffusion(uv[i], &cp[0])
    return out.reshape(np.shape(u))


def drift(u, const double[::1] cp, bint include_d):
    cdef const double[::1] uv = np.ascontiguousarray(u, dtype=np.float64).ravel()
    out = np.empty(uv.shape[0])
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    for i in range(uv.shape[0]):
        ov[i] = _drift(uv[i], &cp[0], include_d)
    return out.reshape(np.shape(u))


def ratio(u, const double[::1] cp):
    cdef const double[::1] uv = np.ascontiguousarray(u, dtype=np.float64).ravel()
    out = np.empty(uv.shape[0])
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    for i in range(uv.shape[0]):
        ov[i] = _ratio(uv[i], &cp[0])
    return out.reshape(np.shape(u))


cdef inline void _powpair(double x, double g, double* pg, double* pc) noexcept nogil:
    # (|u|^g, |u|^(1-g)) sharing square roots; bitwise equal to two _powabs calls
    cdef double s, q
    if g == 1.0:
        pg[0] = x
        pc[0] = 1.0
    elif g == 0.5:
        s = sqrt(x)
        pg[0] = s
        pc[0] = s
    elif g == 0.75:
        s = sqrt(x)
        q = sqrt(s)
        pg[0] = s * q
        pc[0] = q
    elif g == 0.25:
        s = sqrt(x)
        q = sqrt(s)
        pg[0] = q
        pc[0] = s * q
    elif g == 0.0:
        pg[0] = 1.0
        pc[0] = x
    else:
        pg[0] = pow(x, g)
        pc[0] = _powabs(x, 1.0 - g)


cdef inline void _coeffs(double u, const double* cp, double* a, double* R) noexcept nogil:
    """Diffusion and ratio at one state value (same results as _diffusion and _ratio)."""
    cdef double rd0 = cp[6], rdac = cp[7], pg, pc
    if cp[0] == 0.0:
        a[0] = cp[1]
        if rd0 == 0.0 and rdac == 0.0:
            R[0] = 0.0
        else:
            R[0] = (rd0 + rdac * _cubic(u)) / cp[1]
        return
    _powpair(fabs(u), cp[2], &pg, &pc)
    a[0] = 0.0 if u == 0.0 else cp[1] * copysign(pg, u)
    if rd0 == 0.0 and rdac == 0.0:
        R[0] = 0.0
    elif rd0 == 0.0:
        R[0] = (2.0 * rdac / cp[1]) * pc * (1.0 - u * u)
    else:
        R[0] = (rd0 + rdac * _cubic(u)) / a[0]


cdef inline void _advance(double* u, const double* w, double* rhs, double* tmp, Py_ssize_t nx,
                          double dt, double dx, double off, const double* cprime,
                          const double* denom, const double* cp, bint include_d, bint weights,
                          double* ri, double* rr) noexcept nogil:
    cdef Py_ssize_t j
    cdef double uj, R, aj, si = 0.0, sr = 0.0
    for j in range(nx):
        uj = u[j]
        _coeffs(uj, cp, &aj, &R)
        if weights:
            si = si + R * w[j]
        sr = sr + R * R
        rhs[j] = uj + dt * _drift(uj, cp, include_d) + aj * w[j] / dx
    tmp[0] = rhs[0] / denom[0]
    for j in range(1, nx):
        tmp[j] = (rhs[j] - off * tmp[j - 1]) / denom[j]
    u[nx - 1] = tmp[nx - 1]
    for j in range(nx - 2, -1, -1):
        u[j] = tmp[j] - cprime[j] * u[j + 1]
    ri[0] = si
    rr[0] = sr


cdef inline void _neumaier(double* s, double* c, double x) noexcept nogil:
    cdef double t = s[0] + x
    if fabs(s[0]) >= fabs(x):
        c[0] = c[0] + ((s[0] - t) + x)
    else:
        c[0] = c[0] + ((x - t) + s[0])
    s[0] = t


cdef inline Py_ssize_t _first_bad(const double* u, Py_ssize_t nx, double clamp) noexcept nogil:
    cdef Py_ssize_t j
    for j in range(nx):
        if not isfinite(u[j]) or fabs(u[j]) > clamp:
            return j
    return -1


def step(u, w, double dt, double dx, double off, const double[::1] cprime, const double[::1] denom,
         const double[::1] cp, bint include_d):
    """Advance a single state vector by one step."""
    out = np.array(u, dtype=np.float64, copy=True)
    cdef double[::1] uv = out
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t nx = uv.shape[0]
    cdef double[::1] rhs = np.empty(nx)
    cdef double[::1] tmp = np.empty(nx)
    cdef double ri, rr
    _advance(&uv[0], &wv[0], &rhs[0], &tmp[0], nx, dt, dx, off, &cprime[0], &denom[0], &cp[0],
             include_d, False, &ri, &rr)
    return out


def rollout(noise, h, double dt, double dx, double off, const double[::1] cprime, const double[::1] denom,
            const double[::1] cp, bint include_d, double area, double clamp):
    """Full single-path rollout with explicit noise.

    Returns ``(u, log_xi, r2, blow_k, blow_j)`` where ``u`` has shape
    ``(nt + 1, nx)`` and the weight arrays have length ``nt + 1``.
    """
    cdef const double[:, ::1] wv = np.ascontiguousarray(noise, dtype=np.float64)
    cdef Py_ssize_t nt = wv.shape[0], nx = wv.shape[1]
    u = np.empty((nt + 1, nx))
    log_xi = np.zeros(nt + 1)
    r2 = np.zeros(nt + 1)
    cdef double[:, ::1] uv = u
    cdef double[::1] lv = log_xi, qv = r2
    cdef const double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef double[::1] state = np.array(hv, copy=True)
    cdef double[::1] rhs = np.empty(nx)
    cdef double[::1] tmp = np.empty(nx)
    cdef double ri, rr, si = 0.0, ci = 0.0, sr = 0.0, cr = 0.0
    cdef Py_ssize_t k, j, bad
    with nogil:
        for j in range(nx):
            uv[0, j] = hv[j]
        for k in range(nt):
            _advance(&state[0], &wv[k, 0], &rhs[0], &tmp[0], nx, dt, dx, off, &cprime[0],
                     &denom[0], &cp[0], include_d, True, &ri, &rr)
            _neumaier(&si, &ci, ri)
            _neumaier(&sr, &cr, rr)
            qv[k + 1] = (sr + cr) * area
            lv[k + 1] = (si + ci) - 0.5 * ((sr + cr) * area)
            for j in range(nx):
                uv[k + 1, j] = state[j]
            bad = _first_bad(&state[0], nx, clamp)
            if bad >= 0:
                with gil:
                    return u, log_xi, r2, k + 1, bad
    return u, log_xi, r2, -1, -1


def ensemble(uint32_t key0, uint32_t key1, uint64_t path_start, Py_ssize_t npaths, Py_ssize_t nt,
             Py_ssize_t nx, double scale, double dt, double dx, double off, const double[::1] cprime,
             const double[::1] denom, const double[::1] cp, bint include_d, bint weights, h, double clamp,
             levels, double tol):
    """Simulate ``npaths`` consecutive paths with on-the-fly noise.

    Returns ``(u_T, log_xi_T, r2_T, tau, stopped, blow_k, blow_j)``.
    """
    cdef const double[::1] lev = np.ascontiguousarray(levels, dtype=np.float64)
    cdef Py_ssize_t nlev = lev.shape[0]
    cdef const double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    u_T = np.empty((npaths, nx))
    log_T = np.zeros(npaths)
    r2_T = np.zeros(npaths)
    tau = np.full((npaths, nlev), -1, dtype=np.int64)
    stopped = np.zeros((npaths, nlev))
    blow_k = np.full(npaths, -1, dtype=np.int64)
    blow_j = np.full(npaths, -1, dtype=np.int64)
    cdef double[:, ::1] uo = u_T
    cdef double[::1] lo = log_T, qo = r2_T
    cdef int64_t[:, ::1] to = tau
    cdef double[:, ::1] so = stopped
    cdef int64_t[::1] bk = blow_k, bj = blow_j
    cdef double[::1] thr = np.asarray(lev) * (1.0 - tol)
    cdef double[::1] state = np.empty(nx)
    cdef double[::1] w = np.empty(nx)
    cdef double[::1] rhs = np.empty(nx)
    cdef double[::1] tmp = np.empty(nx)
    cdef double area = scale * scale
    cdef double ri, rr, si, ci, sr, cr, r2, lx
    cdef Py_ssize_t p, k, j, i, bad
    cdef uint64_t path
    with nogil:
        for p in range(npaths):
            path = path_start + <uint64_t>p
            for j in range(nx):
                state[j] = hv[j]
            si = 0.0
            ci = 0.0
            sr = 0.0
            cr = 0.0
            bad = -1
            for k in range(nt + 1):
                r2 = (sr + cr) * area
                lx = ((si + ci) - 0.5 * r2) if weights else 0.0
                for i in range(nlev):
                    if to[p, i] < 0 and r2 >= thr[i]:
                        to[p, i] = k
                        so[p, i] = lx
                if k == nt:
                    break
                _fill_normals(key0, key1, path, <uint64_t>(k * nx), nx, scale, &w[0])
                _advance(&state[0], &w[0], &rhs[0], &tmp[0], nx, dt, dx, off, &cprime[0],
                         &denom[0], &cp[0], include_d, weights, &ri, &rr)
                _neumaier(&si, &ci, ri)
                _neumaier(&sr, &cr, rr)
                bad = _first_bad(&state[0], nx, clamp)
                if bad >= 0:
                    bk[p] = k + 1
                    bj[p] = bad
                    break
            if bad >= 0:
                for j in range(nx):
                    uo[p, j] = NAN
                lo[p] = NAN
                qo[p] = NAN
                for i in range(nlev):
                    to[p, i] = -1
                    so[p, i] = NAN
                continue
            for j in range(nx):
                uo[p, j] = state[j]
            r2 = (sr + cr) * area
            qo[p] = r2
            lo[p] = ((si + ci) - 0.5 * r2) if weights else 0.0
            for i in range(nlev):
                if to[p, i] < 0:
                    to[p, i] = nt
                    so[p, i] = lo[p]
    return u_T, log_T, r2_T, tau, stopped, blow_k, blow_j


def centered_sup(const double[::1] mass, const int64_t[::1] order, last,
                 const double[::1] base):
    """max_i |cumsum(mass[order])[last[i]] - base[i]|; ``last=None`` means every position."""
    cdef Py_ssize_t n = order.shape[0], i, t = 0
    cdef const int64_t[::1] lv
    cdef bint every = last is None
    if not every:
        lv = np.ascontiguousarray(last, dtype=np.int64)
    cdef double s = 0.0, d, best = 0.0
    with nogil:
        for i in range(n):
            s = s + mass[order[i]]
            if every:
                d = fabs(s - base[i])
            elif lv[t] == i:
                d = fabs(s - base[t])
                t += 1
            else:
                continue
            if d > best:
                best = d
    return best
