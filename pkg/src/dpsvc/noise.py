"""Seeded noise sources.

Every random quantity in the package is derived from a stream of uniform
doubles on the open interval (0, 1), produced by a PCG64 generator keyed by
``numpy.random.SeedSequence(seed, spawn_key=stream)``. Laplace and Gaussian
draws use the inverse CDF of one uniform each, so scalar and block draws
consume the stream identically and reruns are bit-stable across platforms.

A source in ``"zero"`` mode returns 0 for every noise draw and the identity
permutation. It turns every mechanism into a deterministic function of its
input, which is what the whole-pipeline oracle tests rely on.

Sources are not thread-safe; build one per trial with :meth:`NoiseSource.for_trial`.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtri

from .exceptions import InvalidParameterError

RANDOM = "random"
ZERO = "zero"

_HALF_ULP = 2.0**-54
_BLOCK = 4096


def _check_positive(name, value):
    if not (isinstance(value, (int, float, np.integer, np.floating)) and math.isfinite(value) and value > 0):
        raise InvalidParameterError(f"{name} must be a positive finite number, got {value!r}")


def laplace_from_uniform(u, scale):
    """Inverse Laplace CDF applied to uniforms in (0, 1)."""
    v = np.asarray(u, dtype=float) - 0.5
    return -scale * np.sign(v) * np.log1p(-2.0 * np.abs(v))


class NoiseSource:
    """Deterministic supplier of Laplace/Gaussian draws and permutations.

    Parameters
    ----------
    seed : int
        Non-negative 64-bit seed.
    mode : {"random", "zero"}
        ``"zero"`` makes every draw exactly 0 and every permutation the identity.
    stream : tuple of int
        Stream path; distinct paths under one seed are independent.
    """

    def __init__(self, seed=0, mode=RANDOM, stream=()):
        if mode not in (RANDOM, ZERO):
            raise InvalidParameterError(f"mode must be 'random' or 'zero', got {mode!r}")
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise InvalidParameterError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = seed
        self.mode = mode
        self.stream = tuple(int(s) for s in stream)
        seq = np.random.SeedSequence(seed, spawn_key=self.stream)
        self._rng = np.random.Generator(np.random.PCG64(seq))
        self._buf = np.empty(0)
        self._pos = 0

    @classmethod
    def for_trial(cls, master_seed, trial, mode=RANDOM):
        """Source for one Monte Carlo trial; safe to call from any thread."""
        return cls(master_seed, mode, (trial,))

    def spawn(self, index):
        """Independent child source on stream ``self.stream + (index,)``."""
        return NoiseSource(self.seed, self.mode, self.stream + (index,))

    @property
    def zero(self):
        return self.mode == ZERO

    def __repr__(self):
        return f"NoiseSource(seed={self.seed}, mode={self.mode!r}, stream={self.stream})"

    # -- raw uniform stream -------------------------------------------------

    def peek(self, n):
        """Next ``n`` uniforms without consuming them."""
        avail = len(self._buf) - self._pos
        if avail < n:
            fresh = self._rng.random(max(_BLOCK, n - avail)) + _HALF_ULP
            self._buf = np.concatenate([self._buf[self._pos:], fresh])
            self._pos = 0
        return self._buf[self._pos:self._pos + n]

    def advance(self, n):
        if n > len(self._buf) - self._pos:
            self.peek(n)
        self._pos += n

    def uniforms(self, n):
        out = self.peek(n).copy()
        self._pos += n
        return out

    def uniform(self):
        return float(self.uniforms(1)[0])

    # -- noise --------------------------------------------------------------

    def laplace(self, scale):
        """One draw from Lap(scale), density exp(-|x|/scale) / (2 scale)."""
        _check_positive("scale", scale)
        if self.zero:
            return 0.0
        return float(laplace_from_uniform(self.uniforms(1), scale)[0])

    def laplace_array(self, scale, n):
        _check_positive("scale", scale)
        if self.zero:
            return np.zeros(n)
        return laplace_from_uniform(self.uniforms(n), scale)

    def gaussian(self, sigma):
        """One draw from N(0, sigma**2)."""
        _check_positive("sigma", sigma)
        if self.zero:
            return 0.0
        return float(sigma * ndtri(self.uniforms(1)[0]))

    def gaussian_array(self, sigma, n):
        _check_positive("sigma", sigma)
        if self.zero:
            return np.zeros(n)
        return sigma * ndtri(self.uniforms(n))

    def permutation(self, k):
        """Uniform permutation of ``range(k)``; identity in zero mode."""
        if isinstance(k, bool) or int(k) != k or k < 1:
            raise InvalidParameterError(f"k must be a positive integer, got {k!r}")
        k = int(k)
        if self.zero:
            return np.arange(k)
        return self._rng.permutation(k)
