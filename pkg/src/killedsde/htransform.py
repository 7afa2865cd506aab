"""Concave space transforms ``h`` and the implicit-step map ``H(x) = x - z h'(x)/h(x)``.

Four shapes are provided:

* ``double_barrier_quartic`` solves ``sigma**2 h''/2 = -(x-l)(r-x)`` with
  ``h(l) = h(r) = 0``;
* ``double_barrier_parabolic`` is ``(x-l)(r-x)`` itself;
* ``single_barrier_exp`` is ``exp(-l) - exp(-x)`` on ``(l, inf)``;
* ``transient_linear`` is ``x - l`` on ``(l, inf)``.

All ratios ``h'/h`` and ``h''/h`` are evaluated from factored expressions so
they keep full relative accuracy next to the boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BracketError, DomainViolationError, InvalidDomainError
from .models import Domain

H_LINEAR = 0
H_EXP = 1
H_QUARTIC = 2
H_PARABOLIC = 3

KINDS = {
    "transient_linear": H_LINEAR,
    "single_barrier_exp": H_EXP,
    "double_barrier_quartic": H_QUARTIC,
    "double_barrier_parabolic": H_PARABOLIC,
}

XTOL = 1e-12
MAXITER = 200


def _scalar_or_array(out):
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class HTransform:
    """A positive concave ``h`` on ``domain`` with its first two derivatives.

    ``ratio`` returns ``h'/h`` and ``curvature`` returns ``h''/h``; both are
    the quantities the scheme actually consumes.
    """

    kind: str
    domain: Domain
    h: Callable
    h1: Callable
    h2: Callable
    ratio: Callable
    curvature: Callable
    params: dict = field(default_factory=dict)

    @property
    def code(self) -> int:
        return KINDS[self.kind]

    def ratio_prime(self, x):
        """``(h'/h)' = h''/h - (h'/h)**2``; never positive for concave positive h."""
        q = self.ratio(x)
        return self.curvature(x) - q * q

    def check_interior(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x > self.domain.lower) & (x < self.domain.upper)
        if not np.all(inside):
            bad = x[~inside] if x.ndim else x
            raise DomainViolationError(
                f"state {np.ravel(bad)[0]!r} is not inside ({self.domain.lower}, {self.domain.upper})")


def _require_bounded(l, r):
    if not (math.isfinite(l) and math.isfinite(r)):
        raise InvalidDomainError(f"double-barrier h needs finite l < r, got ({l}, {r})")
    if not l < r:
        raise InvalidDomainError(f"need l < r, got ({l}, {r})")


def make_double_barrier_h(sigma_construction: float, l: float, r: float) -> HTransform:
    """Quartic h solving ``sigma_c**2 h''/2 = -(x-l)(r-x)``, zero at both ends.

    With ``m = (l+r)/2``, ``d = (r-l)/2`` and ``t = x - m`` the solution
    factors as ``(x-l)(r-x)(5 d**2 - t**2) / (6 sigma_c**2)``. The
    construction volatility only rescales h and drops out of both ratios.
    """
    _require_bounded(l, r)
    if not sigma_construction > 0:
        raise InvalidDomainError(f"construction sigma must be positive, got {sigma_construction}")
    s2 = sigma_construction ** 2
    m = 0.5 * (l + r)
    d2 = (0.5 * (r - l)) ** 2

    def h(x):
        x = np.asarray(x, dtype=float)
        t = x - m
        return _scalar_or_array((x - l) * (r - x) * (5.0 * d2 - t * t) / (6.0 * s2))

    def h1(x):
        t = np.asarray(x, dtype=float) - m
        return _scalar_or_array(-2.0 * t * (3.0 * d2 - t * t) / (3.0 * s2))

    def h2(x):
        x = np.asarray(x, dtype=float)
        return _scalar_or_array(-2.0 * (x - l) * (r - x) / s2)

    def ratio(x):
        x = np.asarray(x, dtype=float)
        t = x - m
        return _scalar_or_array(-4.0 * t * (3.0 * d2 - t * t) / ((x - l) * (r - x) * (5.0 * d2 - t * t)))

    def curvature(x):
        t = np.asarray(x, dtype=float) - m
        return _scalar_or_array(-12.0 / (5.0 * d2 - t * t))

    return HTransform("double_barrier_quartic", Domain(l, r), h, h1, h2, ratio, curvature,
                      {"l": float(l), "r": float(r), "sigma": float(sigma_construction),
                       "a": quartic_a(l, r), "b": quartic_b(sigma_construction, l, r)})


def quartic_a(l: float, r: float) -> float:
    """Linear coefficient of the quartic h in its expanded polynomial form."""
    return ((r ** 4 - l ** 4) / 12.0 - (r + l) / 6.0 * (r ** 3 - l ** 3)
            + l * r / 2.0 * (r ** 2 - l ** 2)) / (r - l)


def quartic_b(sigma: float, l: float, r: float) -> float:
    """Constant term of the quartic h in its expanded polynomial form."""
    a = quartic_a(l, r)
    return (-(r ** 4 + l ** 4) / 12.0 + (r + l) * (r ** 3 + l ** 3) / 6.0
            - r * l / 2.0 * (r ** 2 + l ** 2) + a * (r + l)) / sigma ** 2


def quartic_expanded(sigma: float, l: float, r: float, x):
    """Expanded polynomial form of the quartic h; loses accuracy at the ends."""
    a, b = quartic_a(l, r), quartic_b(sigma, l, r)
    x = np.asarray(x, dtype=float)
    return -2.0 / sigma ** 2 * (-x ** 4 / 12.0 + (l + r) / 6.0 * x ** 3 - l * r / 2.0 * x ** 2 + a * x) + b


def make_parabolic_h(l: float, r: float) -> HTransform:
    """``h(x) = (x-l)(r-x)``, the plain concave double-barrier choice."""
    _require_bounded(l, r)

    def h(x):
        x = np.asarray(x, dtype=float)
        return _scalar_or_array((x - l) * (r - x))

    def h1(x):
        return _scalar_or_array(l + r - 2.0 * np.asarray(x, dtype=float))

    def h2(x):
        return _scalar_or_array(np.full(np.shape(x), -2.0))

    def ratio(x):
        x = np.asarray(x, dtype=float)
        return _scalar_or_array(1.0 / (x - l) - 1.0 / (r - x))

    def curvature(x):
        x = np.asarray(x, dtype=float)
        return _scalar_or_array(-2.0 / ((x - l) * (r - x)))

    return HTransform("double_barrier_parabolic", Domain(l, r), h, h1, h2, ratio, curvature,
                      {"l": float(l), "r": float(r)})


def make_single_barrier_h(l: float) -> HTransform:
    """``h(x) = exp(-l) - exp(-x)`` on ``(l, inf)``."""
    if not math.isfinite(l):
        raise InvalidDomainError(f"l must be finite, got {l}")
    el = math.exp(-l)

    def h(x):
        x = np.asarray(x, dtype=float)
        return _scalar_or_array(-el * np.expm1(-(x - l)))

    def h1(x):
        return _scalar_or_array(np.exp(-np.asarray(x, dtype=float)))

    def h2(x):
        return _scalar_or_array(-np.exp(-np.asarray(x, dtype=float)))

    def ratio(x):
        with np.errstate(over="ignore"):
            return _scalar_or_array(1.0 / np.expm1(np.asarray(x, dtype=float) - l))

    def curvature(x):
        with np.errstate(over="ignore"):
            return _scalar_or_array(-1.0 / np.expm1(np.asarray(x, dtype=float) - l))

    return HTransform("single_barrier_exp", Domain(l), h, h1, h2, ratio, curvature, {"l": float(l)})


def make_transient_h(l: float) -> HTransform:
    """``h(x) = x - l`` on ``(l, inf)``; ``h'' = 0`` so paths carry no weight."""
    if not math.isfinite(l):
        raise InvalidDomainError(f"l must be finite, got {l}")

    def h(x):
        return _scalar_or_array(np.asarray(x, dtype=float) - l)

    def h1(x):
        return _scalar_or_array(np.ones(np.shape(x)))

    def h2(x):
        return _scalar_or_array(np.zeros(np.shape(x)))

    def ratio(x):
        return _scalar_or_array(1.0 / (np.asarray(x, dtype=float) - l))

    def curvature(x):
        return _scalar_or_array(np.zeros(np.shape(x)))

    return HTransform("transient_linear", Domain(l), h, h1, h2, ratio, curvature, {"l": float(l)})


def make_h(name: str, domain: Domain, sigma_construction: float = 1.0) -> HTransform:
    """Construct a transform from its short name (``quartic``, ``parabolic``, ``exp``, ``linear``)."""
    l, r = domain.lower, domain.upper
    if name == "quartic":
        return make_double_barrier_h(sigma_construction, l, r)
    if name == "parabolic":
        return make_parabolic_h(l, r)
    if name in ("exp", "linear"):
        if domain.bounded:
            raise InvalidDomainError(f"h={name} is a single-barrier transform; domain has upper={r}")
        return make_single_barrier_h(l) if name == "exp" else make_transient_h(l)
    raise InvalidDomainError(f"unknown h kind {name!r}")


@dataclass(frozen=True)
class HMap:
    """``H(x) = x - z h'(x)/h(x)`` for a fixed step size ``z = dt * sigma**2``."""

    transform: HTransform
    z: float

    def __post_init__(self):
        if not self.z >= 0:
            raise ValueError(f"z must be nonnegative, got {self.z}")

    def __call__(self, x):
        return big_h(self, x)

    def derivative(self, x):
        return 1.0 - self.z * self.transform.ratio_prime(x)

    def inverse(self, y, **kw):
        return invert_big_h(self, y, **kw)


def big_h(hmap: HMap, x):
    """Evaluate ``x - z h'(x)/h(x)``; raises DomainViolationError outside the open domain."""
    tr = hmap.transform
    tr.check_interior(x)
    if hmap.z == 0.0:
        return _scalar_or_array(np.asarray(x, dtype=float))
    return _scalar_or_array(np.asarray(x, dtype=float) - hmap.z * tr.ratio(x))


def linear_inverse(z: float, l: float, y):
    """Closed-form root of ``x - z/(x-l) = y``, written to avoid cancellation for ``y << l``."""
    v = np.asarray(y, dtype=float) - l
    root = np.sqrt(4.0 * z + v * v)
    with np.errstate(divide="ignore", invalid="ignore"):
        gap = np.where(v >= 0.0, 0.5 * (root + v), 2.0 * z / (root - v))
    return _scalar_or_array(l + gap)


def _bracket(F, lo, hi, start):
    """Step from ``start`` toward the side holding the root until the sign flips.

    Bounded sides halve the remaining gap to the boundary; an infinite upper
    side doubles the step.
    """
    fs = F(start)
    if fs == 0.0:
        return start, start
    x = start
    if fs > 0.0:
        for _ in range(2000):
            cand = lo + 0.5 * (x - lo)
            if not cand > lo:
                break
            if F(cand) <= 0.0:
                return cand, x
            x = cand
    else:
        step = 1.0
        for _ in range(2000):
            if math.isfinite(hi):
                cand = hi - 0.5 * (hi - x)
                if not cand < hi:
                    break
            else:
                cand = x + step
                step *= 2.0
                if not math.isfinite(cand):
                    break
            if F(cand) >= 0.0:
                return x, cand
            x = cand
    raise BracketError(f"could not bracket the root starting from {start!r}")


def _bisect_scalar(hmap: HMap, y: float, start=None, xtol=XTOL, maxiter=MAXITER) -> float:
    tr = hmap.transform
    lo, hi = tr.domain.lower, tr.domain.upper
    z = hmap.z
    if start is None or not lo < start < hi:
        start = 0.5 * (lo + hi) if math.isfinite(hi) else lo + 1.0

    def F(x):
        return x - z * float(tr.ratio(x)) - y

    a, b = _bracket(F, lo, hi, float(start))
    for _ in range(maxiter):
        if b - a <= xtol:
            break
        mid = 0.5 * (a + b)
        fm = F(mid)
        if fm == 0.0:
            return mid
        if fm > 0.0:
            b = mid
        else:
            a = mid
    return 0.5 * (a + b)


def _newton_scalar(hmap: HMap, y: float, start=None, xtol=XTOL, maxiter=MAXITER) -> float:
    """Newton on ``H(x) = y`` kept inside a shrinking bracket.

    Since ``H' >= 1`` the root lies between ``x`` and ``x - (H(x) - y)`` for
    any interior ``x``, which supplies the bracket for free.
    """
    tr = hmap.transform
    lo, hi = tr.domain.lower, tr.domain.upper
    z = hmap.z
    x = float(start) if start is not None and lo < start < hi else (
        0.5 * (lo + hi) if math.isfinite(hi) else max(y, lo + 1.0))
    for _ in range(maxiter):
        q = float(tr.ratio(x))
        f = x - z * q - y
        if f == 0.0:
            return x
        if f > 0.0:
            hi = min(hi, x)
            lo = max(lo, x - f)
        else:
            lo = max(lo, x)
            hi = min(hi, x - f)
        dH = 1.0 - z * (float(tr.curvature(x)) - q * q)
        xn = x - f / dH
        if not lo < xn < hi:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= 0.25 * xtol or hi - lo <= xtol:
            return xn
        x = xn
    raise BracketError(f"Newton iteration did not converge for y={y!r}")


def invert_big_h(hmap: HMap, y, method: str = "bisection", start=None):
    """Solve ``H(x) = y`` for the unique interior ``x``.

    ``method`` is ``"bisection"`` (bracket by geometric stepping, then
    bisect to 1e-12 in x) or ``"newton"`` (bracketed Newton). The linear
    transform always uses its closed form, and ``z = 0`` returns ``y``.
    """
    tr = hmap.transform
    if hmap.z == 0.0:
        return _scalar_or_array(np.asarray(y, dtype=float))
    if tr.kind == "transient_linear":
        return linear_inverse(hmap.z, tr.domain.lower, y)
    solve = {"bisection": _bisect_scalar, "newton": _newton_scalar}[method]
    ys = np.asarray(y, dtype=float)
    if ys.ndim == 0:
        return solve(hmap, float(ys), start)
    starts = np.broadcast_to(np.asarray(start if start is not None else np.nan, dtype=float), ys.shape)
    out = np.empty_like(ys)
    for i, (yi, si) in enumerate(zip(ys.ravel(), starts.ravel())):
        out.flat[i] = solve(hmap, float(yi), None if math.isnan(si) else float(si))
    return out


@dataclass(frozen=True)
class InverseGrid:
    """Tabulated ``H`` on an interior grid, inverted by piecewise-linear interpolation.

    Queries outside the tabulated range of ``H`` are solved exactly.
    """

    hmap: HMap
    x: np.ndarray
    hx: np.ndarray

    @property
    def spacing(self) -> float:
        return float(self.x[1] - self.x[0])

    def __call__(self, y):
        ys = np.asarray(y, dtype=float)
        out = np.interp(ys, self.hx, self.x)
        outside = (ys < self.hx[0]) | (ys > self.hx[-1])
        if np.any(outside):
            out = np.array(out, copy=True, ndmin=1)
            flat_out = out.reshape(-1)
            flat_y = np.atleast_1d(ys).reshape(-1)
            for i in np.flatnonzero(np.atleast_1d(outside).reshape(-1)):
                flat_out[i] = _newton_scalar(self.hmap, float(flat_y[i]))
            out = out.reshape(ys.shape) if ys.ndim else float(out[0])
        return _scalar_or_array(out)


def build_inverse_grid(transform: HTransform, z: float, n_points: int) -> InverseGrid:
    """Precompute ``(H(x_i), x_i)`` on ``n_points`` equally spaced interior nodes."""
    if not transform.domain.bounded:
        raise InvalidDomainError(f"grid inverse needs a bounded domain, got kind {transform.kind}")
    if n_points < 2:
        raise ValueError(f"n_points must be at least 2, got {n_points}")
    l, r = transform.domain.lower, transform.domain.upper
    x = l + (r - l) * np.arange(1, n_points + 1) / (n_points + 1)
    hmap = HMap(transform, z)
    hx = np.asarray(big_h(hmap, x), dtype=float)
    return InverseGrid(hmap, x, hx)
