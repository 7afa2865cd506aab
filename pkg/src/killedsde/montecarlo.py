"""Deterministic path-averaging engine.

Paths are cut into fixed-size blocks of consecutive indices. Each block is
simulated independently (optionally on a thread pool; the compiled kernels
release the GIL) and reduced to exact partial sums with ``math.fsum``. The
final reduction is again an exactly rounded sum, so results do not depend
on the worker count or on completion order.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NonFiniteEstimatorError
from .htransform import HTransform
from .rng import RngSpec

DEFAULT_PATHS = 1_000_000
BLOCK_SIZE = 16384


@dataclass(frozen=True)
class McResult:
    mean: float
    stderr: float
    n_paths: int
    diagnostics: dict = field(default_factory=dict, compare=False)
    total: float = 0.0
    total_sq: float = 0.0
    wall_time: float = field(default=0.0, compare=False)

    @classmethod
    def from_sums(cls, total: float, total_sq: float, n: int, diagnostics=None, wall_time=0.0):
        mean = total / n
        if n > 1:
            var = max(0.0, (total_sq - total * mean) / (n - 1))
            stderr = math.sqrt(var / n)
        else:
            stderr = 0.0
        return cls(mean, stderr, n, dict(diagnostics or {}), total, total_sq, wall_time)


def _merge_diag(parts: Sequence[dict]) -> dict:
    out: dict = {}
    for d in parts:
        for k, v in d.items():
            if k.endswith("max_iterations"):
                out[k] = max(out.get(k, 0), v)
            elif isinstance(v, (int, float)):
                out[k] = out.get(k, 0) + v
    return out


def combine(partials: Sequence[McResult]) -> McResult:
    """Pool results over disjoint path sets."""
    partials = list(partials)
    if not partials:
        raise ValueError("combine needs at least one partial result")
    if len(partials) == 1:
        return partials[0]
    n = sum(p.n_paths for p in partials)
    total = math.fsum(p.total for p in partials)
    total_sq = math.fsum(p.total_sq for p in partials)
    return McResult.from_sums(total, total_sq, n, _merge_diag([p.diagnostics for p in partials]),
                              sum(p.wall_time for p in partials))


def _block_sums(values: np.ndarray, start: int):
    bad = ~np.isfinite(values)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise NonFiniteEstimatorError(start + i, float(values[i]))
    return math.fsum(values), math.fsum(values * values)


def run_mc_multi(path_fn: Callable, payoffs: Sequence[Callable], prefactor: float = 1.0,
                 h_at_terminal: Optional[HTransform] = None, rng: RngSpec = RngSpec(),
                 n_paths: int = DEFAULT_PATHS, workers: int = 1,
                 block_size: int = BLOCK_SIZE, path_start: int = 0) -> list[McResult]:
    """Run one set of paths and price several payoffs on it.

    Per path the estimator is

        prefactor * h(x0) * payoff(X_T) / h(X_T) * weight

    when ``h_at_terminal`` is given, and ``prefactor * payoff(X_T) * weight``
    otherwise. ``path_fn`` is a batch kernel from :mod:`killedsde.schemes`
    (anything with an ``x0`` attribute and ``__call__(key, start, count)``).
    """
    if n_paths < 2:
        raise ValueError(f"n_paths must be at least 2, got {n_paths}")
    if workers < 1:
        raise ValueError("workers must be at least 1")
    key = rng.key
    factor = float(prefactor)
    if h_at_terminal is not None:
        factor *= float(h_at_terminal.h(path_fn.x0))
    starts = list(range(path_start, path_start + n_paths, block_size))

    def work(start):
        count = min(block_size, path_start + n_paths - start)
        batch = path_fn(key, start, count)
        x, w = batch.terminal, batch.weight
        live = w != 0.0
        sums = []
        for payoff in payoffs:
            vals = np.zeros(count)
            if np.any(live):
                xl = x[live]
                g = np.asarray(payoff(xl), dtype=float)
                if h_at_terminal is not None:
                    g = g / np.asarray(h_at_terminal.h(xl), dtype=float)
                vals[live] = factor * g * w[live]
            sums.append(_block_sums(vals, start))
        return sums, batch.diagnostics

    t0 = time.perf_counter()
    if workers == 1:
        parts = [work(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, starts))
    wall = time.perf_counter() - t0
    diag = _merge_diag([p[1] for p in parts])
    diag["blocks"] = len(starts)
    results = []
    for j in range(len(payoffs)):
        total = math.fsum(p[0][j][0] for p in parts)
        total_sq = math.fsum(p[0][j][1] for p in parts)
        results.append(McResult.from_sums(total, total_sq, n_paths, diag, wall))
    return results


def run_mc(path_fn: Callable, payoff: Callable, prefactor: float = 1.0,
           h_at_terminal: Optional[HTransform] = None, rng: RngSpec = RngSpec(),
           n_paths: int = DEFAULT_PATHS, workers: int = 1,
           block_size: int = BLOCK_SIZE) -> McResult:
    """Single-payoff form of :func:`run_mc_multi`."""
    return run_mc_multi(path_fn, [payoff], prefactor, h_at_terminal, rng, n_paths,
                        workers, block_size)[0]
