"""Pure numpy implementations of the path kernels.

Vectorised across paths, stepping through time one column of normals at a
time. Used when the compiled extension is unavailable, for models without a
closed-form kernel tag, and as a cross-check of the compiled kernels.
"""

from __future__ import annotations

import numpy as np

from .htransform import XTOL, MAXITER, linear_inverse
from .rng import GAMMA, mix64
from scipy.special import ndtri


def normals_column(key: int, path_start: int, n_paths: int, step: int) -> np.ndarray:
    paths = np.arange(path_start, path_start + n_paths, dtype=np.uint64)
    counter = (paths << np.uint64(32)) | np.uint64(step)
    with np.errstate(over="ignore"):
        bits = mix64(np.uint64(key) + (counter + np.uint64(1)) * GAMMA)
    return ndtri(((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53)


class _Columns:
    """Column-wise access to either explicit normals or the counter stream."""

    def __init__(self, key, path_start, n_paths, normals):
        self.key, self.start, self.n, self.normals = key, path_start, n_paths, normals

    def __getitem__(self, step):
        if self.normals is not None:
            return self.normals[:, step]
        return normals_column(self.key, self.start, self.n, step)


def _newton_vec(transform, z, y, x):
    lo = np.full_like(y, transform.domain.lower)
    hi = np.full_like(y, transform.domain.upper)
    x = x.copy()
    iters = np.zeros(y.shape, dtype=np.int64)
    active = np.ones(y.shape, dtype=bool)
    for k in range(MAXITER):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xa, za, ya = x[idx], z[idx], y[idx]
        q = transform.ratio(xa)
        c = transform.curvature(xa)
        f = xa - za * q - ya
        pos = f > 0
        hi[idx] = np.where(pos, np.minimum(hi[idx], xa), np.minimum(hi[idx], xa - f))
        lo[idx] = np.where(pos, np.maximum(lo[idx], xa - f), np.maximum(lo[idx], xa))
        xn = xa - f / (1.0 - za * (c - q * q))
        bad = ~((xn > lo[idx]) & (xn < hi[idx]))
        xn = np.where(bad, 0.5 * (lo[idx] + hi[idx]), xn)
        done = (f == 0.0) | (np.abs(xn - xa) <= 0.25 * XTOL) | (hi[idx] - lo[idx] <= XTOL)
        x[idx] = np.where(f == 0.0, xa, xn)
        iters[idx] = k + 1
        active[idx[done]] = False
    if np.any(active):
        x[active] = np.nan
    return x, iters


def _bisect_vec(transform, z, y, x):
    l, r = transform.domain.lower, transform.domain.upper

    def F(xx, zz, yy):
        return xx - zz * transform.ratio(xx) - yy

    fs = F(x, z, y)
    a = np.where(fs > 0, np.nan, x)
    b = np.where(fs > 0, x, np.nan)
    cur = x.copy()
    step = np.ones_like(x)
    need = fs != 0.0
    a[~need] = x[~need]
    b[~need] = x[~need]
    for _ in range(2000):
        idx = np.flatnonzero(need)
        if idx.size == 0:
            break
        down = fs[idx] > 0
        if np.isfinite(r):
            cand = np.where(down, l + 0.5 * (cur[idx] - l), r - 0.5 * (r - cur[idx]))
        else:
            cand = np.where(down, l + 0.5 * (cur[idx] - l), cur[idx] + step[idx])
            step[idx] = np.where(down, step[idx], 2.0 * step[idx])
        stuck = ~((cand > l) & (cand < r))
        fc = F(np.where(stuck, cur[idx], cand), z[idx], y[idx])
        hit = np.where(down, fc <= 0.0, fc >= 0.0) & ~stuck
        a[idx] = np.where(hit & down, cand, np.where(hit, cur[idx], a[idx]))
        b[idx] = np.where(hit & down, cur[idx], np.where(hit, cand, b[idx]))
        cur[idx] = np.where(hit | stuck, cur[idx], cand)
        need[idx[hit | stuck]] = False
    for _ in range(MAXITER):
        open_ = (b - a) > XTOL
        if not np.any(open_):
            break
        mid = 0.5 * (a + b)
        fm = F(mid, z, y)
        b = np.where(open_ & (fm > 0), mid, b)
        a = np.where(open_ & (fm <= 0), mid, a)
    return 0.5 * (a + b), np.zeros(y.shape, dtype=np.int64)


def bem_batch(transform, sigma, residual_b, x0, T, N, key, path_start, n_paths,
              solver="newton", normals=None, grid=None):
    dt = T / N
    sqdt = np.sqrt(dt)
    cols = _Columns(key, path_start, n_paths, normals)
    x = np.full(n_paths, float(x0))
    logw = np.zeros(n_paths)
    ittot, itmax = 0, 0
    l = transform.domain.lower
    for n in range(N):
        s = np.broadcast_to(np.asarray(sigma(x), dtype=float), x.shape)
        z = dt * s * s
        logw += z * (np.asarray(residual_b(x), dtype=float) + 0.5 * transform.curvature(x))
        y = x + s * sqdt * cols[n]
        if transform.kind == "transient_linear":
            x = linear_inverse(z, l, y)
            continue
        if solver == "grid" and grid is not None:
            inside = (y >= grid.hx[0]) & (y <= grid.hx[-1])
            xn = np.interp(y, grid.hx, grid.x)
            if not np.all(inside):
                out, it = _newton_vec(transform, z[~inside], y[~inside], x[~inside])
                xn[~inside] = out
            x = xn
            continue
        x, it = (_bisect_vec if solver == "bisection" else _newton_vec)(transform, z, y, x)
        ittot += int(it.sum())
        itmax = max(itmax, int(it.max(initial=0)))
    bad = np.flatnonzero(~transform.domain.contains(x)) if np.ndim(x) else []
    return x, np.exp(logw), ittot, itmax, (int(bad[0]) if len(bad) else -1)


def euler_batch(sigma, mu, x0, T, N, l, r, key, path_start, n_paths, normals=None):
    dt = T / N
    sqdt = np.sqrt(dt)
    cols = _Columns(key, path_start, n_paths, normals)
    x = np.full(n_paths, float(x0))
    alive = np.ones(n_paths, dtype=bool)
    for n in range(N):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        xa = x[idx]
        xa = xa + np.asarray(mu(xa), dtype=float) * dt + np.asarray(sigma(xa), dtype=float) * sqdt * cols[n][idx]
        x[idx] = xa
        alive[idx[~((xa > l) & (xa < r))]] = False
    return x, alive.astype(float), int((~alive).sum())


def no_hit_single_vec(xa, xb, l, s, dt):
    out = -np.expm1(-2.0 * (xa - l) * (xb - l) / (s * s * dt))
    return np.where((xa <= l) | (xb <= l), 0.0, out)


def no_hit_double_vec(xa, xb, l, r, s, dt, n_terms):
    L = r - l
    v = s * s * dt
    tot = np.zeros(np.broadcast(xa, xb).shape)
    for k in range(-n_terms, n_terms + 1):
        nl = k * L
        tot = tot + (np.exp(-2.0 * nl * (nl + xb - xa) / v)
                     - np.exp(-2.0 * (nl + xa - r) * (nl + xb - r) / v))
    inside = (xa > l) & (xa < r) & (xb > l) & (xb < r)
    clamped = int(np.sum(inside & ((tot < 0.0) | (tot > 1.0))))
    return np.where(inside, np.clip(tot, 0.0, 1.0), 0.0), clamped


def bridge_batch(sigma, mu, x0, T, N, l, r, n_terms, key, path_start, n_paths, normals=None):
    dt = T / N
    sqdt = np.sqrt(dt)
    cols = _Columns(key, path_start, n_paths, normals)
    x = np.full(n_paths, float(x0))
    w = np.ones(n_paths)
    clamped = 0
    single = not np.isfinite(r)
    for n in range(N):
        idx = np.flatnonzero(w > 0.0)
        if idx.size == 0:
            break
        xa = x[idx]
        s = np.broadcast_to(np.asarray(sigma(xa), dtype=float), xa.shape)
        xb = xa + np.asarray(mu(xa), dtype=float) * dt + s * sqdt * cols[n][idx]
        if single:
            p = no_hit_single_vec(xa, xb, l, s, dt)
        else:
            p, c = no_hit_double_vec(xa, xb, l, r, s, dt, n_terms)
            clamped += c
        w[idx] = w[idx] * p
        x[idx] = xb
    return x, w, clamped
