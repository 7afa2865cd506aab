# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled path kernels.

Each kernel simulates a contiguous range of path indices and writes the
terminal state and multiplicative weight of every path. Normals are either
read from a caller-supplied array or generated in place from the
counter-based stream documented in ``killedsde.rng``. All loops run without
the GIL so callers may use threads.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, log, sqrt, fabs, INFINITY, NAN, isfinite
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL

cdef enum:
    H_LINEAR = 0
    H_EXP = 1
    H_QUARTIC = 2
    H_PARABOLIC = 3

cdef enum:
    SOLVE_NEWTON = 0
    SOLVE_BISECT = 1
    SOLVE_GRID = 2

cdef enum:
    MAXITER = 200

cdef double XTOL = 1e-12


cdef inline uint64_t mix64(uint64_t x) noexcept nogil:
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL
    return x ^ (x >> 31)


cdef inline double poly7(double r, double c0, double c1, double c2, double c3,
                         double c4, double c5, double c6, double c7) noexcept nogil:
    return (((((((c7 * r + c6) * r + c5) * r + c4) * r + c3) * r + c2) * r + c1) * r + c0)


cdef double ppnd16(double p) noexcept nogil:
    # Wichura's AS241, relative accuracy about 1e-16
    cdef double q = p - 0.5
    cdef double r, val
    if fabs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * poly7(r, 3.3871328727963666080e0, 1.3314166789178437745e+2,
                         1.9715909503065514427e+3, 1.3731693765509461125e+4,
                         4.5921953931549871457e+4, 6.7265770927008700853e+4,
                         3.3430575583588128105e+4, 2.5090809287301226727e+3) / \
            poly7(r, 1.0, 4.2313330701600911252e+1, 6.8718700749205790830e+2,
                  5.3941960214247511077e+3, 2.1213794301586595867e+4,
                  3.9307895800092710610e+4, 2.8729085735721942674e+4,
                  5.2264952788528545610e+3)
    r = p if q < 0.0 else 1.0 - p
    r = sqrt(-log(r))
    if r <= 5.0:
        r = r - 1.6
        val = poly7(r, 1.42343711074968357734e0, 4.63033784615654529590e0,
                    5.76949722146069140550e0, 3.64784832476320460504e0,
                    1.27045825245236838258e0, 2.41780725177450611770e-1,
                    2.27238449892691845833e-2, 7.74545014278341407640e-4) / \
            poly7(r, 1.0, 2.05319162663775882187e0, 1.67638483018380384940e0,
                  6.89767334985100004550e-1, 1.48103976427480074590e-1,
                  1.51986665636164571966e-2, 5.47593808499534494600e-4,
                  1.05075007164441684324e-9)
    else:
        r = r - 5.0
        val = poly7(r, 6.65790464350110377720e0, 5.46378491116411436990e0,
                    1.78482653991729133580e0, 2.96560571828504891230e-1,
                    2.65321895265761230930e-2, 1.24266094738807843860e-3,
                    2.71155556874348757815e-5, 2.01033439929228813265e-7) / \
            poly7(r, 1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1,
                  1.48753612908506148525e-2, 7.86869131145613259100e-4,
                  1.84631831751005468180e-5, 1.42151175831644588870e-7,
                  2.04426310338993978564e-15)
    return -val if q < 0.0 else val


cdef inline double uniform_at(uint64_t key, uint64_t path, uint64_t step) noexcept nogil:
    cdef uint64_t counter = (path << 32) | step
    cdef uint64_t bits = mix64(key + (counter + 1) * GAMMA)
    return (<double>(bits >> 11) + 0.5) * 1.1102230246251565e-16


cdef inline double normal_at(uint64_t key, uint64_t path, uint64_t step) noexcept nogil:
    return ppnd16(uniform_at(key, path, step))


def uniforms(uint64_t key, int64_t path_start, Py_ssize_t n_paths, Py_ssize_t n_steps):
    out = np.empty((n_paths, n_steps), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, n
    with nogil:
        for i in range(n_paths):
            for n in range(n_steps):
                o[i, n] = uniform_at(key, <uint64_t>(path_start + i), <uint64_t>n)
    return out


def normals(uint64_t key, int64_t path_start, Py_ssize_t n_paths, Py_ssize_t n_steps):
    out = np.empty((n_paths, n_steps), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, n
    with nogil:
        for i in range(n_paths):
            for n in range(n_steps):
                o[i, n] = normal_at(key, <uint64_t>(path_start + i), <uint64_t>n)
    return out


def inverse_normal(double p):
    return ppnd16(p)


cdef inline double sigma_eval(int kind, double p0, double p1, double x) noexcept nogil:
    if kind == 0:
        return p0
    # hyperbolic local volatility, p0 = nu, p1 = beta; cancellation-free form
    cdef double u = 1.0 - x
    cdef double s = sqrt(x * x + p1 * p1 * u * u)
    return p0 * (p1 * x + (1.0 - p1) - p1 * (1.0 - p1) * u * u / (x + s))


cdef inline void h_ratios(int hkind, double l, double r, double x,
                          double* q, double* c) noexcept nogil:
    # q = h'/h, c = h''/h, one reciprocal per call
    cdef double e, t, d2, g1, g2, inv
    if hkind == H_LINEAR:
        q[0] = 1.0 / (x - l)
        c[0] = 0.0
    elif hkind == H_EXP:
        e = 1.0 / expm1(x - l)
        q[0] = e
        c[0] = -e
    elif hkind == H_QUARTIC:
        t = x - 0.5 * (l + r)
        d2 = 0.25 * (r - l) * (r - l)
        g1 = (x - l) * (r - x)
        g2 = 5.0 * d2 - t * t
        inv = 1.0 / (g1 * g2)
        q[0] = -4.0 * t * (3.0 * d2 - t * t) * inv
        c[0] = -12.0 * g1 * inv
    else:
        inv = 1.0 / ((x - l) * (r - x))
        q[0] = (l + r - 2.0 * x) * inv
        c[0] = -2.0 * inv


cdef inline double solve_linear(double z, double l, double y) noexcept nogil:
    cdef double v = y - l
    cdef double root = sqrt(4.0 * z + v * v)
    if v >= 0.0:
        return l + 0.5 * (root + v)
    return l + 2.0 * z / (root - v)


cdef inline double h3_ratio(int hkind, double l, double r, double x, double q) noexcept nogil:
    # third derivative of h divided by h
    cdef double t, d2
    if hkind == H_EXP:
        return q
    if hkind == H_QUARTIC:
        t = x - 0.5 * (l + r)
        d2 = 0.25 * (r - l) * (r - l)
        return 24.0 * t / ((x - l) * (r - x) * (5.0 * d2 - t * t))
    return 0.0


cdef double solve_newton(int hkind, double l, double r, double z, double y,
                         double x, int* iters) noexcept nogil:
    # bracketed Newton; H' >= 1 puts the root between x and x - (H(x) - y).
    # After a step s the error is at most z |q''| s^2 / 2, so a step that is
    # small against the boundary gap can be accepted without re-evaluating.
    cdef double lo = l
    cdef double hi = r
    cdef double q, c, f, dh, xn, step, q2, gap
    cdef int k
    for k in range(MAXITER):
        h_ratios(hkind, l, r, x, &q, &c)
        f = x - z * q - y
        if f == 0.0:
            iters[0] = k + 1
            return x
        if f > 0.0:
            if x < hi:
                hi = x
            if x - f > lo:
                lo = x - f
        else:
            if x > lo:
                lo = x
            if x - f < hi:
                hi = x - f
        dh = 1.0 - z * (c - q * q)
        step = f / dh
        xn = x - step
        if not (xn > lo and xn < hi):
            xn = 0.5 * (lo + hi)
        elif fabs(step) <= 0.25 * XTOL:
            iters[0] = k + 1
            return xn
        else:
            gap = x - l
            if r - x < gap:
                gap = r - x
            if fabs(step) <= 0.01 * gap:
                q2 = h3_ratio(hkind, l, r, x, q) - 3.0 * c * q + 2.0 * q * q * q
                if z * fabs(q2) * step * step <= 0.1 * XTOL:
                    iters[0] = k + 1
                    return xn
        if hi - lo <= XTOL:
            iters[0] = k + 1
            return 0.5 * (lo + hi)
        x = xn
    iters[0] = MAXITER
    return NAN


cdef inline double big_h(int hkind, double l, double r, double z, double x) noexcept nogil:
    cdef double q, c
    h_ratios(hkind, l, r, x, &q, &c)
    return x - z * q


cdef double solve_bisect(int hkind, double l, double r, double z, double y,
                         double start, int* iters) noexcept nogil:
    # geometric bracketing toward the boundary, then plain bisection
    cdef double a, b, cand, x = start, step = 1.0, fs, mid, fm
    cdef int k
    fs = big_h(hkind, l, r, z, x) - y
    if fs == 0.0:
        iters[0] = 0
        return x
    a = NAN
    b = NAN
    if fs > 0.0:
        for k in range(2000):
            cand = l + 0.5 * (x - l)
            if not cand > l:
                break
            if big_h(hkind, l, r, z, cand) - y <= 0.0:
                a = cand
                b = x
                break
            x = cand
    else:
        for k in range(2000):
            if isfinite(r):
                cand = r - 0.5 * (r - x)
                if not cand < r:
                    break
            else:
                cand = x + step
                step = step * 2.0
                if not isfinite(cand):
                    break
            if big_h(hkind, l, r, z, cand) - y >= 0.0:
                a = x
                b = cand
                break
            x = cand
    if not isfinite(a):
        iters[0] = MAXITER
        return NAN
    for k in range(MAXITER):
        if b - a <= XTOL:
            iters[0] = k
            return 0.5 * (a + b)
        mid = 0.5 * (a + b)
        fm = big_h(hkind, l, r, z, mid) - y
        if fm == 0.0:
            iters[0] = k
            return mid
        if fm > 0.0:
            b = mid
        else:
            a = mid
    iters[0] = MAXITER
    return 0.5 * (a + b)


cdef inline double grid_lookup(double[::1] gh, double[::1] gx, double y) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = gh.shape[0] - 1, mid
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if gh[mid] <= y:
            lo = mid
        else:
            hi = mid
    if gh[hi] == gh[lo]:
        return gx[lo]
    return gx[lo] + (gx[hi] - gx[lo]) * (y - gh[lo]) / (gh[hi] - gh[lo])


def bem_paths(int hkind, double l, double r, int skind, double s0, double s1,
              double b_const, double x0, double T, int N,
              uint64_t key, int64_t path_start, Py_ssize_t n_paths, int solver,
              object normals_in, object grid_h_in, object grid_x_in,
              double[::1] out_x, double[::1] out_w):
    """Drift-implicit Euler paths under an h-transform.

    Returns ``(total_solver_iterations, max_iterations, first_bad_index)``;
    ``first_bad_index`` is -1 unless a solve failed or left the domain.
    """
    cdef double dt = T / N
    cdef double sqdt = sqrt(dt)
    cdef double[:, ::1] zin
    cdef double[::1] gh, gx
    cdef bint have_normals = normals_in is not None
    cdef bint have_grid = grid_h_in is not None
    cdef Py_ssize_t i, n
    cdef double x, xp, s, z, y, q, c, logw, dw, ghlo = 0.0, ghhi = 0.0
    cdef int it = 0, itmax = 0
    cdef long long ittot = 0
    cdef Py_ssize_t bad = -1
    if have_normals:
        zin = normals_in
    if have_grid:
        gh = grid_h_in
        gx = grid_x_in
        ghlo = gh[0]
        ghhi = gh[gh.shape[0] - 1]
    with nogil:
        for i in range(n_paths):
            x = x0
            logw = 0.0
            for n in range(N):
                s = sigma_eval(skind, s0, s1, x)
                z = dt * s * s
                h_ratios(hkind, l, r, x, &q, &c)
                logw = logw + z * (b_const + 0.5 * c)
                if have_normals:
                    dw = zin[i, n]
                else:
                    dw = normal_at(key, <uint64_t>(path_start + i), <uint64_t>n)
                y = x + s * sqdt * dw
                if hkind == H_LINEAR:
                    x = solve_linear(z, l, y)
                    it = 0
                elif solver == SOLVE_GRID and y >= ghlo and y <= ghhi:
                    x = grid_lookup(gh, gx, y)
                    it = 0
                elif solver == SOLVE_BISECT:
                    x = solve_bisect(hkind, l, r, z, y, x, &it)
                else:
                    # explicit step as starting point, falling back to x_n
                    xp = y + z * q
                    if not (xp > l and xp < r):
                        xp = x
                    x = solve_newton(hkind, l, r, z, y, xp, &it)
                ittot = ittot + it
                if it > itmax:
                    itmax = it
                if not (x > l and x < r):
                    if bad < 0:
                        bad = i
                    x = NAN
                    break
            out_x[i] = x
            out_w[i] = exp(logw)
    return ittot, itmax, bad


def euler_paths(int skind, double s0, double s1, double mu, double x0, double T, int N,
                double l, double r, uint64_t key, int64_t path_start, Py_ssize_t n_paths,
                object normals_in, double[::1] out_x, double[::1] out_w):
    """Explicit Euler with killing at the first grid time outside ``(l, r)``."""
    cdef double dt = T / N
    cdef double sqdt = sqrt(dt)
    cdef double[:, ::1] zin
    cdef bint have_normals = normals_in is not None
    cdef Py_ssize_t i, n
    cdef double x, dw, w
    cdef long long killed = 0
    if have_normals:
        zin = normals_in
    with nogil:
        for i in range(n_paths):
            x = x0
            w = 1.0
            for n in range(N):
                if have_normals:
                    dw = zin[i, n]
                else:
                    dw = normal_at(key, <uint64_t>(path_start + i), <uint64_t>n)
                x = x + mu * dt + sigma_eval(skind, s0, s1, x) * sqdt * dw
                if not (x > l and x < r):
                    w = 0.0
                    killed += 1
                    break
            out_x[i] = x
            out_w[i] = w
    return killed


cdef inline double no_hit_single(double xa, double xb, double l, double s, double dt) noexcept nogil:
    if xa <= l or xb <= l:
        return 0.0
    return -expm1(-2.0 * (xa - l) * (xb - l) / (s * s * dt))


cdef inline double no_hit_double(double xa, double xb, double l, double r, double s,
                                 double dt, int n_terms, int* clamped) noexcept nogil:
    cdef double L = r - l
    cdef double v = s * s * dt
    cdef double tot = 0.0, nl
    cdef int k
    if not (xa > l and xa < r and xb > l and xb < r):
        return 0.0
    for k in range(-n_terms, n_terms + 1):
        nl = k * L
        tot += exp(-2.0 * nl * (nl + xb - xa) / v) - exp(-2.0 * (nl + xa - r) * (nl + xb - r) / v)
    if tot < 0.0:
        clamped[0] += 1
        return 0.0
    if tot > 1.0:
        clamped[0] += 1
        return 1.0
    return tot


def bridge_paths(int skind, double s0, double s1, double mu, double x0, double T, int N,
                 double l, double r, int n_terms, uint64_t key, int64_t path_start,
                 Py_ssize_t n_paths, object normals_in, double[::1] out_x, double[::1] out_w):
    """Euler paths weighted by the product of Brownian-bridge no-hit probabilities.

    Returns the number of series evaluations clamped into [0, 1].
    """
    cdef double dt = T / N
    cdef double sqdt = sqrt(dt)
    cdef double[:, ::1] zin
    cdef bint have_normals = normals_in is not None
    cdef bint single = not isfinite(r)
    cdef Py_ssize_t i, n
    cdef double x, xn, dw, w, s, p
    cdef int clamped = 0
    if have_normals:
        zin = normals_in
    with nogil:
        for i in range(n_paths):
            x = x0
            w = 1.0
            for n in range(N):
                if have_normals:
                    dw = zin[i, n]
                else:
                    dw = normal_at(key, <uint64_t>(path_start + i), <uint64_t>n)
                s = sigma_eval(skind, s0, s1, x)
                xn = x + mu * dt + s * sqdt * dw
                if single:
                    p = no_hit_single(x, xn, l, s, dt)
                else:
                    p = no_hit_double(x, xn, l, r, s, dt, n_terms, &clamped)
                w = w * p
                x = xn
                if w == 0.0:
                    break
            out_x[i] = x
            out_w[i] = w
    return clamped
