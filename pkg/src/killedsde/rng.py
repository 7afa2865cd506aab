"""Counter-based normal streams.

The normal used by path ``p`` at step ``n`` is a pure function of
``(seed, p, n)``:

    key     = mix64(seed + GAMMA)
    counter = (p << 32) | n
    bits    = mix64(key + (counter + 1) * GAMMA)        (mod 2**64)
    u       = ((bits >> 11) + 0.5) * 2**-53             in (0, 1)
    Z       = Phi^{-1}(u)

``mix64`` is the SplitMix64 output function, so each path reads a
disjoint window of one SplitMix64 sequence. Nothing depends on how paths
are split across workers or on the number of steps a path takes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
MAX_STEPS = 1 << 32


def mix64(x):
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * _M1
        x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def stream_key(seed: int) -> int:
    with np.errstate(over="ignore"):
        return int(mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + GAMMA))


@dataclass(frozen=True)
class RngSpec:
    """Seed plus the documented ``(seed, path, step) -> normal`` derivation."""

    seed: int = 0

    @property
    def key(self) -> int:
        return stream_key(self.seed)

    def derive(self, salt: int) -> "RngSpec":
        """A statistically unrelated stream, used e.g. for self-benchmarks."""
        return RngSpec(int(mix64(np.uint64((self.seed ^ (salt * 0x2545F4914F6CDD1D)) & 0xFFFFFFFFFFFFFFFF))))

    def uniforms(self, path_start: int, n_paths: int, n_steps: int) -> np.ndarray:
        return uniforms(self.key, path_start, n_paths, n_steps)

    def normals(self, path_start: int, n_paths: int, n_steps: int) -> np.ndarray:
        return ndtri(self.uniforms(path_start, n_paths, n_steps))


def uniforms(key: int, path_start: int, n_paths: int, n_steps: int) -> np.ndarray:
    """Array of shape ``(n_paths, n_steps)`` of open-interval uniforms."""
    if n_steps >= MAX_STEPS:
        raise ValueError("too many steps for the counter layout")
    paths = np.arange(path_start, path_start + n_paths, dtype=np.uint64)
    steps = np.arange(n_steps, dtype=np.uint64)
    counter = (paths[:, None] << np.uint64(32)) | steps[None, :]
    with np.errstate(over="ignore"):
        state = np.uint64(key) + (counter + np.uint64(1)) * GAMMA
    bits = mix64(state)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
