"""Dense float64 arithmetic and seedable, named random streams.

Matrices are plain ``numpy.ndarray`` objects of dtype float64; the helpers
here add the shape checks and the frozen Gaussian transform the rest of the
package relies on.
"""

from __future__ import annotations

import math
import zlib

import numpy as np


class ShapeError(ValueError):
    """Raised when array dimensions are incompatible."""


def as_matrix(a, name="array") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit shape check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def l2_norm(v) -> float:
    """Euclidean norm, rescaled by max |v_i| so tiny or huge entries
    neither underflow nor overflow when squared."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        return 0.0
    m = float(np.max(np.abs(v)))
    if m == 0 or not np.isfinite(m):
        return m
    u = v / m
    return m * float(np.sqrt(np.dot(u, u)))


class Rng:
    """Root seed plus independent named streams.

    Each stream is a PCG64 generator whose seed sequence is keyed by the
    root seed and a CRC32 of the stream name, so streams never share state
    and the draws of one stream do not depend on how often others are used.
    """

    def __init__(self, seed: int):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        gen = self._streams.get(name)
        if gen is None:
            key = zlib.crc32(name.encode("utf-8"))
            ss = np.random.SeedSequence(self.seed, spawn_key=(key,))
            gen = np.random.Generator(np.random.PCG64(ss))
            self._streams[name] = gen
        return gen


def _standard_normal(gen: np.random.Generator, n: int) -> np.ndarray:
    # Box-Muller on PCG64 doubles; frozen so draws are reproducible across
    # numpy versions (unlike Generator.standard_normal's ziggurat tables).
    m = (n + 1) // 2
    u1 = 1.0 - gen.random(m)  # (0, 1]
    u2 = gen.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * math.pi * u2
    out = np.empty(2 * m)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:n]


def gaussian_sample(gen, n: int, std: float = 1.0) -> np.ndarray:
    """Draw ``n`` i.i.d. N(0, std**2) values from a stream.

    ``gen`` may be an :class:`Rng` (its ``"noise"`` stream is used) or a
    generator obtained from :meth:`Rng.stream`.
    """
    if std < 0 or not math.isfinite(std):
        raise ValueError(f"std must be a finite nonnegative number, got {std}")
    if isinstance(gen, Rng):
        gen = gen.stream("noise")
    if std == 0:
        return np.zeros(n)
    return std * _standard_normal(gen, n)
