"""Closed-form Black-Scholes prices (zero rates and dividends) used as benchmarks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import SpecViolationError

DOWN_OUT_PUT = "down_out_put"
DOUBLE_OUT_CALL = "double_out_call"


def norm_cdf(x):
    """Standard normal distribution function."""
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(-float(x) / math.sqrt(2.0))
    return ndtr(np.asarray(x, dtype=float))


def _cdf_diff(a: float, b: float) -> float:
    """``Phi(a) - Phi(b)`` without cancellation in the upper tail."""
    if a > 0.0 and b > 0.0:
        return norm_cdf(-b) - norm_cdf(-a)
    return norm_cdf(a) - norm_cdf(b)


@dataclass(frozen=True)
class BarrierSpec:
    kind: str
    strike: float
    lower_barrier: float
    upper_barrier: float = math.inf
    T: float = 1.0
    sigma: float = 0.2
    s0: float = 1.0

    def __post_init__(self):
        if self.kind not in (DOWN_OUT_PUT, DOUBLE_OUT_CALL):
            raise SpecViolationError(f"unknown barrier kind {self.kind!r}")
        for name in ("strike", "lower_barrier", "T", "sigma", "s0"):
            if not getattr(self, name) > 0:
                raise SpecViolationError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.lower_barrier < self.upper_barrier:
            raise SpecViolationError("lower barrier must sit below the upper barrier")


def vanilla_put(s0: float, strike: float, T: float, sigma: float) -> float:
    v = sigma * math.sqrt(T)
    d1 = math.log(s0 / strike) / v + 0.5 * v
    return strike * norm_cdf(-(d1 - v)) - s0 * norm_cdf(-d1)


def vanilla_call(s0: float, strike: float, T: float, sigma: float) -> float:
    v = sigma * math.sqrt(T)
    d1 = math.log(s0 / strike) / v + 0.5 * v
    return s0 * norm_cdf(d1) - strike * norm_cdf(d1 - v)


def _haug_factors(s0, strike, barrier, T, sigma, phi, eta):
    """The four standard barrier factors A, B, C, D with drift exponent ``mu = -1/2``."""
    mu = -0.5
    v = sigma * math.sqrt(T)
    x1 = math.log(s0 / strike) / v + (1.0 + mu) * v
    x2 = math.log(s0 / barrier) / v + (1.0 + mu) * v
    y1 = math.log(barrier * barrier / (s0 * strike)) / v + (1.0 + mu) * v
    y2 = math.log(barrier / s0) / v + (1.0 + mu) * v
    ratio = barrier / s0
    up = ratio ** (2.0 * (mu + 1.0))
    dn = ratio ** (2.0 * mu)
    A = phi * s0 * norm_cdf(phi * x1) - phi * strike * norm_cdf(phi * x1 - phi * v)
    B = phi * s0 * norm_cdf(phi * x2) - phi * strike * norm_cdf(phi * x2 - phi * v)
    C = phi * s0 * up * norm_cdf(eta * y1) - phi * strike * dn * norm_cdf(eta * y1 - eta * v)
    D = phi * s0 * up * norm_cdf(eta * y2) - phi * strike * dn * norm_cdf(eta * y2 - eta * v)
    return A, B, C, D


def down_out_put_price(spec: BarrierSpec) -> float:
    """Down-and-out put with no rebate: ``A - B + C - D``."""
    if spec.kind != DOWN_OUT_PUT:
        raise SpecViolationError(f"expected {DOWN_OUT_PUT}, got {spec.kind}")
    if spec.s0 == spec.lower_barrier:
        return 0.0
    if spec.s0 < spec.lower_barrier:
        raise SpecViolationError("s0 must lie above the barrier")
    if spec.strike <= spec.lower_barrier:
        raise SpecViolationError("strike must lie above the barrier")
    A, B, C, D = _haug_factors(spec.s0, spec.strike, spec.lower_barrier, spec.T, spec.sigma,
                               phi=-1.0, eta=1.0)
    return max(0.0, A - B + C - D)


def double_out_call_terms(spec: BarrierSpec, n_terms: int = 5) -> dict[int, float]:
    """Contribution of each series index ``n`` to the double knock-out call."""
    if spec.kind != DOUBLE_OUT_CALL:
        raise SpecViolationError(f"expected {DOUBLE_OUT_CALL}, got {spec.kind}")
    S, K, lo, hi = spec.s0, spec.strike, spec.lower_barrier, spec.upper_barrier
    if not lo < S < hi:
        raise SpecViolationError("need lower barrier < s0 < upper barrier")
    if not math.isfinite(hi):
        raise SpecViolationError("double knock-out needs a finite upper barrier")
    v = spec.sigma * math.sqrt(spec.T)
    half = 0.5 * v * v
    lS, lK, lb, lB = math.log(S), math.log(K), math.log(lo), math.log(hi)
    out = {}
    for n in range(-n_terms, n_terms + 1):
        d1 = (lS + 2 * n * lB - lK - 2 * n * lb + half) / v
        d2 = (lS + (2 * n - 1) * lB - 2 * n * lb + half) / v
        d3 = ((2 * n + 2) * lb - lK - lS - 2 * n * lB + half) / v
        d4 = ((2 * n + 2) * lb - lS - (2 * n + 1) * lB + half) / v
        w1 = math.exp(n * (lB - lb))
        w2 = math.exp((n + 1) * lb - n * lB - lS)
        term = (S * (w1 * _cdf_diff(d1, d2) - w2 * _cdf_diff(d3, d4))
                - K * (_cdf_diff(d1 - v, d2 - v) / w1 - _cdf_diff(d3 - v, d4 - v) / w2))
        out[n] = term
    return out


def double_out_call_price(spec: BarrierSpec, n_terms: int = 5) -> float:
    """Double knock-out call from the image series truncated at ``|n| <= n_terms``."""
    if spec.kind == DOUBLE_OUT_CALL and spec.strike >= spec.upper_barrier:
        return 0.0
    terms = double_out_call_terms(spec, n_terms)
    return max(0.0, math.fsum(terms.values()))
