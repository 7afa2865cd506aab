"""Diffusion dynamics on an interval and the Girsanov drift-removal reduction.

A model is always stored in the coordinate the schemes work in. For
Black-Scholes that is the log price, so barriers given in price space are
converted exactly once, in the constructors below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import DifferentiationError, InvalidDomainError, ParameterError

SIGMA_CONST = 0
SIGMA_HLV = 1


@dataclass(frozen=True)
class Domain:
    """Open interval ``(lower, upper)``; ``upper`` may be ``+inf``.

    ``shift`` records a translation applied to bring the accessible
    endpoint to a convenient origin (zero unless set explicitly).
    """

    lower: float
    upper: float = math.inf
    shift: float = 0.0

    def __post_init__(self):
        lo, hi = float(self.lower), float(self.upper)
        if not math.isfinite(lo):
            raise InvalidDomainError(f"lower endpoint must be finite, got {lo}")
        if math.isnan(hi) or hi == -math.inf or not lo < hi:
            raise InvalidDomainError(f"need lower < upper, got ({lo}, {hi})")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.upper)

    def contains(self, x) -> np.ndarray | bool:
        """Strict interior membership, vectorised."""
        x = np.asarray(x, dtype=float)
        out = (x > self.lower) & (x < self.upper)
        return bool(out) if out.ndim == 0 else out

    def interior_grid(self, n: int = 201, span: float = 50.0) -> np.ndarray:
        """Sample points strictly inside; unbounded domains are cut at ``lower + span``."""
        hi = self.upper if self.bounded else self.lower + span
        return np.linspace(self.lower, hi, n + 2)[1:-1]

    def translated(self, offset: float) -> "Domain":
        return Domain(self.lower - offset, self.upper - offset, self.shift + offset)


@dataclass(frozen=True)
class KernelTag:
    """Closed-form description of a model that the compiled kernels understand.

    ``sigma_kind`` is ``SIGMA_CONST`` (params ``(sigma,)``) or ``SIGMA_HLV``
    (params ``(nu, beta)``). ``drift`` is a constant drift.
    """

    sigma_kind: int
    params: tuple
    drift: float = 0.0


@dataclass(frozen=True)
class DiffusionModel:
    """Scalar SDE ``dX = mu(X) dt + sigma(X) dW`` killed on leaving ``domain``.

    ``sigma`` and ``mu`` must accept numpy arrays. ``drift_potential`` is an
    optional antiderivative of ``mu / sigma**2``; ``drift_ratio_prime`` an
    optional derivative of the same ratio. When absent they are obtained by
    quadrature and central differences in :func:`remove_drift`.
    """

    sigma: Callable
    mu: Callable
    domain: Domain
    coordinate: str = "natural"
    name: str = "custom"
    tag: Optional[KernelTag] = None
    drift_potential: Optional[Callable] = None
    drift_ratio_prime: Optional[Callable] = None

    def __post_init__(self):
        if self.coordinate not in ("natural", "log"):
            raise ParameterError(f"coordinate must be 'natural' or 'log', got {self.coordinate!r}")

    @property
    def driftless(self) -> bool:
        if self.tag is not None:
            return self.tag.drift == 0.0
        grid = self.domain.interior_grid(64)
        return bool(np.all(np.asarray(self.mu(grid)) == 0.0))

    def check_sigma(self, n: int = 513, span: float = 20.0) -> tuple[float, float]:
        """Sample sigma on the interior and return ``(min, max)``.

        Raises ParameterError if sigma is not strictly positive and finite
        on the sample. Used to confirm barrier placement keeps the
        volatility bounded away from zero.
        """
        grid = self.domain.interior_grid(n, span)
        s = np.broadcast_to(np.asarray(self.sigma(grid), dtype=float), grid.shape)
        if not np.all(np.isfinite(s)) or np.any(s <= 0.0):
            bad = grid[~(np.isfinite(s) & (s > 0.0))][0]
            raise ParameterError(f"sigma not positive at x={bad:.6g}")
        return float(s.min()), float(s.max())


def _const(value):
    def f(x):
        return np.full(np.shape(x), value, dtype=float) if np.ndim(x) else float(value)
    return f


def bs_log_model(sigma: float, lower: float, upper: float = math.inf) -> DiffusionModel:
    """Driftless constant-volatility model in log-price coordinates.

    ``lower`` and ``upper`` are already log barriers. This is the measure
    after the Girsanov step; use :func:`bs_log_price_model` for the
    risk-neutral dynamics with drift ``-sigma**2/2``.
    """
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    return DiffusionModel(
        sigma=_const(sigma),
        mu=_const(0.0),
        domain=Domain(lower, upper),
        coordinate="log",
        name="bs",
        tag=KernelTag(SIGMA_CONST, (float(sigma),), 0.0),
        drift_potential=_const(0.0),
        drift_ratio_prime=_const(0.0),
    )


def bs_log_price_model(sigma: float, lower: float, upper: float = math.inf) -> DiffusionModel:
    """Risk-neutral Black-Scholes log price: ``dX = -sigma**2/2 dt + sigma dW``."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    drift = -0.5 * sigma * sigma
    return DiffusionModel(
        sigma=_const(sigma),
        mu=_const(drift),
        domain=Domain(lower, upper),
        coordinate="log",
        name="bs",
        tag=KernelTag(SIGMA_CONST, (float(sigma),), drift),
        drift_potential=lambda x: -0.5 * np.asarray(x, dtype=float),
        drift_ratio_prime=_const(0.0),
    )


def bs_log_from_prices(sigma: float, lower_barrier: float, upper_barrier: float = math.inf,
                       drifted: bool = False) -> DiffusionModel:
    """Build the log model from barriers quoted in price space."""
    if not lower_barrier > 0:
        raise InvalidDomainError(f"lower barrier must be positive, got {lower_barrier}")
    lo = math.log(lower_barrier)
    hi = math.log(upper_barrier) if math.isfinite(upper_barrier) else math.inf
    make = bs_log_price_model if drifted else bs_log_model
    return make(sigma, lo, hi)


def _check_hlv(nu, beta):
    if not nu > 0:
        raise ParameterError(f"nu must be positive, got {nu}")
    if not 0.0 < beta <= 1.0:
        raise ParameterError(f"beta must lie in (0, 1], got {beta}")


def hlv_sigma(nu: float, beta: float, x):
    """Hyperbolic local volatility ``sigma(x)`` in price coordinates.

    The defining expression

        nu * [(1 - beta + beta**2) / beta * x + (beta - 1) / beta * (s - beta)],
        s = sqrt(x**2 + beta**2 (1 - x)**2),

    cancels badly for small ``beta``. It is evaluated in the equivalent form
    ``nu * [beta x + (1 - beta) - beta (1 - beta) (1 - x)**2 / (x + s)]``, which
    gives exactly ``nu * x`` at ``beta = 1`` and ``nu`` at ``x = 1``.
    """
    _check_hlv(nu, beta)
    x = np.asarray(x, dtype=float)
    u = 1.0 - x
    s = np.sqrt(x * x + beta * beta * u * u)
    out = nu * (beta * x + (1.0 - beta) - beta * (1.0 - beta) * u * u / (x + s))
    return float(out) if out.ndim == 0 else out


def hlv_model(nu: float, beta: float, lower: float, upper: float = math.inf) -> DiffusionModel:
    """Driftless HLV dynamics ``dX = sigma(X) dW`` in price coordinates."""
    _check_hlv(nu, beta)
    if not lower > 0:
        raise InvalidDomainError(f"HLV domain must stay in x > 0, got lower={lower}")
    return DiffusionModel(
        sigma=lambda x: hlv_sigma(nu, beta, x),
        mu=_const(0.0),
        domain=Domain(lower, upper),
        coordinate="natural",
        name="hlv",
        tag=KernelTag(SIGMA_HLV, (float(nu), float(beta)), 0.0),
        drift_potential=_const(0.0),
        drift_ratio_prime=_const(0.0),
    )


def hlv_log_model(nu: float, beta: float, lower_barrier: float,
                  upper_barrier: float = math.inf) -> DiffusionModel:
    """HLV written for ``Y = log X``: ``dY = s(Y) dW - s(Y)**2/2 dt`` with ``s(y) = sigma(e^y) e^-y``.

    No kernel tag; schemes run it through the generic numpy path.
    """
    _check_hlv(nu, beta)

    def s(y):
        ey = np.exp(np.asarray(y, dtype=float))
        return hlv_sigma(nu, beta, ey) / ey

    hi = math.log(upper_barrier) if math.isfinite(upper_barrier) else math.inf
    return DiffusionModel(
        sigma=s,
        mu=lambda y: -0.5 * s(y) ** 2,
        domain=Domain(math.log(lower_barrier), hi),
        coordinate="log",
        name="hlv-log",
    )


@dataclass(frozen=True)
class DriftRemoval:
    """Result of removing the drift by a change of measure.

    The original price is recovered as

        prefactor(x0, T) * E_Q[ g(X_T) exp(int_0^T sigma^2 b dt) 1{T < zeta} ]

    where ``g = payoff_transform(g_tilde)`` and ``b = residual_b``. The
    time-dependent part of the correction always sits in the exponential
    weight; ``prefactor`` is ``exp(-F(x0))``.
    """

    driftless: DiffusionModel
    prefactor: Callable[[float, float], float]
    payoff_transform: Callable[[Callable], Callable]
    residual_b: Callable
    residual_b_const: Optional[float] = None
    potential: Callable = field(default=None, repr=False)


def _fd_step(x):
    return 1e-6 * np.maximum(1.0, np.abs(x))


def remove_drift(model: DiffusionModel, payoff: Callable, x0: float, T: float) -> DriftRemoval:
    """Girsanov reduction of a drifted model to the driftless form the schemes use.

    Parameters
    ----------
    model : DiffusionModel
        Dynamics under the pricing measure.
    payoff : callable
        Payoff ``g_tilde`` in the model coordinate. Only used to validate
        that it is callable; the transform is returned as a function.
    x0, T : float
        Start point and horizon, kept so callers can evaluate the prefactor
        at the run point.

    Returns
    -------
    DriftRemoval
    """
    if not callable(payoff):
        raise TypeError("payoff must be callable")
    if not T > 0:
        raise ParameterError(f"T must be positive, got {T}")
    sigma, mu = model.sigma, model.mu
    c = float(x0)

    def ratio(x):
        s = np.asarray(sigma(x), dtype=float)
        return np.asarray(mu(x), dtype=float) / (s * s)

    if model.drift_potential is not None:
        F = model.drift_potential
    else:
        def F(x):
            xs = np.atleast_1d(np.asarray(x, dtype=float))
            out = np.array([integrate.quad(lambda y: float(ratio(y)), c, xi, epsabs=1e-13, epsrel=1e-12)[0]
                            for xi in xs])
            return out.reshape(np.shape(x)) if np.ndim(x) else float(out[0])

    if model.drift_ratio_prime is not None:
        ratio_prime = model.drift_ratio_prime
    else:
        def ratio_prime(x):
            x = np.asarray(x, dtype=float)
            step = _fd_step(x)
            d = (ratio(x + step) - ratio(x - step)) / (2.0 * step)
            if not np.all(np.isfinite(d)):
                raise DifferentiationError("finite-difference derivative of mu/sigma^2 is not finite")
            return d

    def residual_b(x):
        r = ratio(x)
        out = -0.5 * (np.asarray(ratio_prime(x), dtype=float) + r * r)
        return float(out) if np.ndim(out) == 0 else out

    const_b = None
    tag = model.tag
    if tag is not None and tag.sigma_kind == SIGMA_CONST:
        s = tag.params[0]
        const_b = -0.5 * (tag.drift / (s * s)) ** 2

    probe = residual_b(np.asarray(model.domain.interior_grid(9)))
    if not np.all(np.isfinite(probe)):
        raise DifferentiationError("residual potential is not finite on the domain interior")

    driftless = DiffusionModel(
        sigma=sigma,
        mu=_const(0.0),
        domain=model.domain,
        coordinate=model.coordinate,
        name=model.name,
        tag=None if tag is None else KernelTag(tag.sigma_kind, tag.params, 0.0),
        drift_potential=_const(0.0),
        drift_ratio_prime=_const(0.0),
    )

    def prefactor(x, T_=T):
        return math.exp(-float(F(x)))

    def payoff_transform(g_tilde):
        def g(x):
            return g_tilde(x) * np.exp(F(x))
        return g

    return DriftRemoval(driftless, prefactor, payoff_transform, residual_b, const_b, F)
