"""Path discretisations for killed diffusions.

Three schemes are provided, each in two forms: a scalar single-path
function that reads an explicit sequence of standard normals (the
reference), and a batch kernel object used by the Monte Carlo engine.

``bem``
    Drift-implicit Euler under an h-transform. Every step solves
    ``H(x) = x_n + sigma(x_n) dW`` with ``z = dt sigma(x_n)**2``; paths never
    leave the domain and carry an exponential weight.
``euler``
    Explicit Euler, killed at the first grid time outside the barriers.
``bridge``
    Explicit Euler without killing, weighted by Brownian-bridge no-hit
    probabilities between grid points.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _fallback
from .errors import BracketError, DomainViolationError, ParameterError
from .htransform import HMap, HTransform, InverseGrid, build_inverse_grid, invert_big_h
from .models import DiffusionModel, Domain

try:
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover - exercised only without a build
    _compiled = None

SOLVERS = {"newton": 0, "bisection": 1, "grid": 2}
DEFAULT_SERIES_TERMS = 5


def default_backend() -> str:
    """``"compiled"`` when the extension imported, else ``"python"``.

    ``KILLEDSDE_BACKEND=python`` forces the numpy fallback.
    """
    forced = os.environ.get("KILLEDSDE_BACKEND", "").strip().lower()
    if forced in ("python", "numpy"):
        return "python"
    if forced == "compiled" and _compiled is None:
        raise ImportError("KILLEDSDE_BACKEND=compiled but killedsde._kernels is not built")
    return "compiled" if _compiled is not None else "python"


BACKEND = default_backend()


@dataclass(frozen=True)
class StepGrid:
    """Uniform time grid ``t_n = n T / N``."""

    T: float
    N: int

    def __post_init__(self):
        if not self.T > 0:
            raise ParameterError(f"T must be positive, got {self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise ParameterError(f"N must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def dt(self) -> float:
        return self.T / self.N

    def time(self, n: int) -> float:
        return n * self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.T / self.N


@dataclass(frozen=True)
class PathOutcome:
    terminal: float
    weight: float
    killed: bool = False


# ----------------------------------------------------------------- single path

def bem_step(transform: HTransform, sigma_n: float, x_n: float, dW: float, dt: float,
             method: str = "bisection") -> float:
    """One implicit step: the interior root of ``H(x) = x_n + sigma_n dW``.

    ``dW`` is the Brownian increment itself (variance ``dt``), not a
    standardised normal.
    """
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    transform.check_interior(x_n)
    hmap = HMap(transform, dt * sigma_n * sigma_n)
    x = invert_big_h(hmap, x_n + sigma_n * dW, method=method, start=x_n)
    transform.check_interior(x)
    return float(x)


def bem_path(model: DiffusionModel, transform: HTransform, residual_b: Callable,
             grid: StepGrid, normals: Sequence[float], x0: float,
             method: str = "bisection") -> PathOutcome:
    """Iterate :func:`bem_step`, accumulating the exponential weight.

    The weight is ``exp(sum_n dt sigma(x_n)**2 [b(x_n) + h''(x_n) / (2 h(x_n))])``
    over left endpoints ``n = 0 .. N-1``.
    """
    normals = np.asarray(normals, dtype=float)
    if normals.shape != (grid.N,):
        raise ParameterError(f"need {grid.N} normals, got shape {normals.shape}")
    dt = grid.dt
    sq = math.sqrt(dt)
    x = float(x0)
    transform.check_interior(x)
    expo = 0.0
    for zn in normals:
        s = float(model.sigma(x))
        expo += dt * s * s * (float(residual_b(x)) + 0.5 * float(transform.curvature(x)))
        x = bem_step(transform, s, x, sq * zn, dt, method)
    return PathOutcome(x, math.exp(expo), False)


def euler_path(model: DiffusionModel, grid: StepGrid, normals: Sequence[float],
               barriers: Domain, x0: float) -> PathOutcome:
    """Explicit Euler, killed at the first grid time outside ``barriers``."""
    normals = np.asarray(normals, dtype=float)
    if normals.shape != (grid.N,):
        raise ParameterError(f"need {grid.N} normals, got shape {normals.shape}")
    dt = grid.dt
    sq = math.sqrt(dt)
    x = float(x0)
    for zn in normals:
        x = x + float(model.mu(x)) * dt + float(model.sigma(x)) * sq * zn
        if not barriers.lower < x < barriers.upper:
            return PathOutcome(x, 0.0, True)
    return PathOutcome(x, 1.0, False)


def no_hit_prob_single(x_i: float, x_ip1: float, l: float, sigma_i: float, dt: float) -> float:
    """Probability a Brownian bridge from ``x_i`` to ``x_ip1`` stays above ``l``."""
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if x_i <= l or x_ip1 <= l:
        return 0.0
    return -math.expm1(-2.0 * (x_i - l) * (x_ip1 - l) / (sigma_i * sigma_i * dt))


def no_hit_prob_double(x_i: float, x_ip1: float, l: float, r: float, sigma_i: float,
                       dt: float, n_terms: int = DEFAULT_SERIES_TERMS) -> float:
    """Probability a Brownian bridge stays inside ``(l, r)``; image series with
    ``n = -n_terms .. n_terms``, clamped to ``[0, 1]``."""
    if not l < r:
        raise ParameterError(f"need l < r, got ({l}, {r})")
    if n_terms < 1:
        raise ParameterError(f"n_terms must be at least 1, got {n_terms}")
    if not (l < x_i < r and l < x_ip1 < r):
        return 0.0
    L = r - l
    v = sigma_i * sigma_i * dt
    tot = math.fsum(
        math.exp(-2.0 * k * L * (k * L + x_ip1 - x_i) / v)
        - math.exp(-2.0 * (k * L + x_i - r) * (k * L + x_ip1 - r) / v)
        for k in range(-n_terms, n_terms + 1)
    )
    return min(1.0, max(0.0, tot))


def bridge_path(model: DiffusionModel, grid: StepGrid, normals: Sequence[float],
                barriers: Domain, x0: float, n_terms: int = DEFAULT_SERIES_TERMS) -> PathOutcome:
    """Euler recursion weighted by the product of per-step no-hit probabilities."""
    normals = np.asarray(normals, dtype=float)
    if normals.shape != (grid.N,):
        raise ParameterError(f"need {grid.N} normals, got shape {normals.shape}")
    dt = grid.dt
    sq = math.sqrt(dt)
    x = float(x0)
    w = 1.0
    l, r = barriers.lower, barriers.upper
    for zn in normals:
        s = float(model.sigma(x))
        xn = x + float(model.mu(x)) * dt + s * sq * zn
        if math.isfinite(r):
            p = no_hit_prob_double(x, xn, l, r, s, dt, n_terms)
        else:
            p = no_hit_prob_single(x, xn, l, s, dt)
        w *= p
        x = xn
    return PathOutcome(x, w, False)


# --------------------------------------------------------------- batch kernels

@dataclass
class Batch:
    """Terminal states and weights of a contiguous block of paths."""

    terminal: np.ndarray
    weight: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _tag_args(model: DiffusionModel):
    tag = model.tag
    p = tuple(tag.params) + (0.0,) * (2 - len(tag.params))
    return tag.sigma_kind, float(p[0]), float(p[1]), float(tag.drift)


@dataclass
class BemKernel:
    """Batch drift-implicit Euler kernel.

    ``residual_b`` may be a float (constant potential, eligible for the
    compiled kernel) or a callable. ``solver`` is ``newton``, ``bisection``
    or ``grid``; ``grid`` tabulates ``H`` once and therefore needs constant
    sigma and a bounded domain.
    """

    model: DiffusionModel
    transform: HTransform
    grid: StepGrid
    x0: float
    residual_b: float | Callable = 0.0
    solver: str = "newton"
    backend: Optional[str] = None
    grid_points: int = 20001
    _inverse: Optional[InverseGrid] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ParameterError(f"unknown solver {self.solver!r}")
        self.transform.check_interior(self.x0)
        td, md = self.transform.domain, self.model.domain
        if (td.lower, td.upper) != (md.lower, md.upper):
            raise ParameterError("transform and model domains differ")
        if self.backend is None:
            self.backend = BACKEND
        if self.solver == "grid":
            tag = self.model.tag
            if tag is None or tag.sigma_kind != 0:
                raise ParameterError("grid inverse needs constant sigma")
            s = tag.params[0]
            self._inverse = build_inverse_grid(self.transform, self.grid.dt * s * s, self.grid_points)

    @property
    def compiled(self) -> bool:
        return (self.backend == "compiled" and _compiled is not None
                and self.model.tag is not None and not callable(self.residual_b))

    def __call__(self, key: int, path_start: int, n_paths: int, normals=None) -> Batch:
        out_x = np.empty(n_paths)
        out_w = np.empty(n_paths)
        tr = self.transform
        if self.compiled:
            sk, s0, s1, _ = _tag_args(self.model)
            gh = gx = None
            if self._inverse is not None:
                gh, gx = self._inverse.hx, self._inverse.x
            ittot, itmax, bad = _compiled.bem_paths(
                tr.code, tr.domain.lower, tr.domain.upper, sk, s0, s1, float(self.residual_b),
                float(self.x0), float(self.grid.T), self.grid.N, key, path_start, n_paths,
                SOLVERS[self.solver],
                None if normals is None else np.ascontiguousarray(normals, dtype=float),
                gh, gx, out_x, out_w)
        else:
            b = self.residual_b
            b_fn = b if callable(b) else (lambda x, _b=float(b): _b)
            out_x, out_w, ittot, itmax, bad = _fallback.bem_batch(
                tr, self.model.sigma, b_fn, self.x0, self.grid.T, self.grid.N, key, path_start,
                n_paths, self.solver, normals, self._inverse)
        if bad >= 0:
            raise BracketError(f"implicit step failed on path {path_start + bad}")
        return Batch(out_x, out_w, {"solver_iterations": int(ittot), "solver_max_iterations": int(itmax)})


@dataclass
class EulerKernel:
    """Batch explicit Euler with grid-time killing."""

    model: DiffusionModel
    grid: StepGrid
    barriers: Domain
    x0: float
    backend: Optional[str] = None

    def __post_init__(self):
        if self.backend is None:
            self.backend = BACKEND

    @property
    def compiled(self) -> bool:
        return self.backend == "compiled" and _compiled is not None and self.model.tag is not None

    def __call__(self, key: int, path_start: int, n_paths: int, normals=None) -> Batch:
        l, r = self.barriers.lower, self.barriers.upper
        if self.compiled:
            sk, s0, s1, mu = _tag_args(self.model)
            out_x = np.empty(n_paths)
            out_w = np.empty(n_paths)
            killed = _compiled.euler_paths(
                sk, s0, s1, mu, float(self.x0), float(self.grid.T), self.grid.N, l, r, key,
                path_start, n_paths,
                None if normals is None else np.ascontiguousarray(normals, dtype=float),
                out_x, out_w)
        else:
            out_x, out_w, killed = _fallback.euler_batch(
                self.model.sigma, self.model.mu, self.x0, self.grid.T, self.grid.N, l, r, key,
                path_start, n_paths, normals)
        return Batch(out_x, out_w, {"killed": int(killed)})


@dataclass
class BridgeKernel:
    """Batch Euler with Brownian-bridge no-hit weights."""

    model: DiffusionModel
    grid: StepGrid
    barriers: Domain
    x0: float
    n_terms: int = DEFAULT_SERIES_TERMS
    backend: Optional[str] = None

    def __post_init__(self):
        if self.backend is None:
            self.backend = BACKEND
        if self.n_terms < 1:
            raise ParameterError(f"n_terms must be at least 1, got {self.n_terms}")

    @property
    def compiled(self) -> bool:
        return self.backend == "compiled" and _compiled is not None and self.model.tag is not None

    def __call__(self, key: int, path_start: int, n_paths: int, normals=None) -> Batch:
        l, r = self.barriers.lower, self.barriers.upper
        if self.compiled:
            sk, s0, s1, mu = _tag_args(self.model)
            out_x = np.empty(n_paths)
            out_w = np.empty(n_paths)
            clamped = _compiled.bridge_paths(
                sk, s0, s1, mu, float(self.x0), float(self.grid.T), self.grid.N, l, r,
                int(self.n_terms), key, path_start, n_paths,
                None if normals is None else np.ascontiguousarray(normals, dtype=float),
                out_x, out_w)
        else:
            out_x, out_w, clamped = _fallback.bridge_batch(
                self.model.sigma, self.model.mu, self.x0, self.grid.T, self.grid.N, l, r,
                int(self.n_terms), key, path_start, n_paths, normals)
        return Batch(out_x, out_w, {"clamped": int(clamped)})
