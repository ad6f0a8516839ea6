"""AboveThreshold, its permuted variant, and multi-round sparse-vector correction.

Indices are 0-based. A selector returns the chosen index, or ``None`` when no
query clears the noisy threshold.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from . import _engine
from .accounting import advanced_compose, basic_compose
from .exceptions import InvalidParameterError
from .noise import laplace_from_uniform

__all__ = [
    "GapView",
    "above_threshold",
    "permuted_above_threshold",
    "sample_permuted_above_threshold",
    "sv_correct",
    "sv_round_epsilon",
    "sv_budget",
    "sufficient_alpha",
]


class GapView:
    """Read-only, index-addressable view of query values.

    ``+inf`` marks a coordinate with no released answer yet; it clears any
    threshold.
    """

    def __init__(self, values):
        arr = np.array(values, dtype=float)
        if arr.ndim != 1:
            raise InvalidParameterError("gap values must be one-dimensional")
        if np.isnan(arr).any():
            raise InvalidParameterError("gap values must not be NaN")
        arr.setflags(write=False)
        self._values = arr

    def __len__(self):
        return len(self._values)

    def __getitem__(self, i):
        return float(self._values[i])

    def to_array(self):
        return self._values


class _PermutedView:
    def __init__(self, gaps, perm):
        self._gaps = gaps
        self._perm = perm

    def __len__(self):
        return len(self._perm)

    def __getitem__(self, j):
        return self._gaps[int(self._perm[j])]


def _check_eps(epsilon):
    if not (math.isfinite(epsilon) and epsilon > 0):
        raise InvalidParameterError(f"epsilon must be positive and finite, got {epsilon!r}")


def _scan_array(gaps, level, nu_scale, source):
    # Same stream consumption as the lazy loop: one uniform per scanned index.
    k = len(gaps)
    start, chunk = 0, 64
    while start < k:
        stop = min(k, start + chunk)
        if source.zero:
            nu = 0.0
        else:
            nu = laplace_from_uniform(source.peek(stop - start), nu_scale)
        hits = np.flatnonzero(gaps[start:stop] + nu >= level)
        if hits.size:
            if not source.zero:
                source.advance(int(hits[0]) + 1)
            return start + int(hits[0])
        if not source.zero:
            source.advance(stop - start)
        start = stop
        chunk = min(chunk * 4, 1 << 16)
    return None


def above_threshold(gaps, T, epsilon, source):
    """Index of the first query whose noisy value clears a noisy threshold.

    Draws ``rho ~ Lap(2/epsilon)`` once, then for i = 0, 1, ... draws
    ``nu_i ~ Lap(4/epsilon)`` and stops at the first i with
    ``gaps[i] + nu_i >= T + rho``. Queries past the returned index are never
    read. A ``numpy.ndarray`` is scanned in vectorised blocks that consume
    the noise stream exactly as the scalar loop would.

    Returns
    -------
    int or None
    """
    _check_eps(epsilon)
    k = len(gaps)
    if k < 1:
        raise InvalidParameterError("need at least one query")
    level = T + source.laplace(2.0 / epsilon)
    nu_scale = 4.0 / epsilon
    if isinstance(gaps, np.ndarray):
        return _scan_array(np.asarray(gaps, dtype=float), level, nu_scale, source)
    for i in range(k):
        if gaps[i] + source.laplace(nu_scale) >= level:
            return i
    return None


def permuted_above_threshold(gaps, T, epsilon, source):
    """:func:`above_threshold` over a uniformly permuted query order.

    The returned index refers to the original (unpermuted) order. In zero
    mode the permutation is the identity.
    """
    _check_eps(epsilon)
    k = len(gaps)
    if k < 1:
        raise InvalidParameterError("need at least one query")
    perm = source.permutation(k)
    if isinstance(gaps, np.ndarray):
        view = np.asarray(gaps, dtype=float)[perm]
    else:
        view = _PermutedView(gaps, perm)
    j = above_threshold(view, T, epsilon, source)
    return None if j is None else int(perm[j])


def sample_permuted_above_threshold(gaps, T, epsilon, source):
    """Draw from the output law of :func:`permuted_above_threshold` in sublinear time.

    Uses the compiled selector of the iterative corrector. Same distribution
    as the literal algorithm, different consumption of the noise stream.
    Zero mode returns the first index clearing ``T``, as the literal version
    does under the identity permutation.
    """
    _check_eps(epsilon)
    err = np.array(gaps, dtype=float)
    k = len(err)
    if k < 1:
        raise InvalidParameterError("need at least one query")
    if source.zero:
        idx = _engine._select_zero(err, k, T)
        return None if idx < 0 else int(idx)
    size = _engine.tree_size(k)
    tree = _engine.build_tree(err, size)
    unset = np.flatnonzero(np.isinf(err)).astype(np.int64)
    u = source.peek(_engine.reserve(k, size))
    level = T + float(laplace_from_uniform(u[:1], 2.0 / epsilon)[0])
    seen = np.empty(_engine.SCAN, dtype=np.int64)
    fires = np.empty(k, dtype=np.int64)
    stack = np.empty((128, 3), dtype=np.int64)
    idx, cur = _engine._select(err, k, tree, size, unset, len(unset), level, 4.0 / epsilon, u, 1, seen, fires, stack)
    source.advance(cur)
    return None if idx < 0 else int(idx)


def sv_round_epsilon(c_sv, epsilon_sv, delta_sv):
    """Per-round epsilon: half of ``epsilon_sv`` spread over ``c_sv`` rounds by advanced composition."""
    return (epsilon_sv / 2.0) / math.sqrt(8.0 * c_sv * math.log(2.0 / delta_sv))


def sv_budget(c_sv, epsilon_sv, delta_sv):
    """Budget consumed by :func:`sv_correct`: selector rounds plus answer releases."""
    eps_r = sv_round_epsilon(c_sv, epsilon_sv, delta_sv)
    half = (advanced_compose(c_sv, eps_r, delta_sv / 2.0), delta_sv / 2.0)
    return basic_compose([half, half])


def sufficient_alpha(k, c_sv, epsilon_sv, delta_sv, beta_sv):
    """An ``alpha_sv`` for which :func:`sv_correct` meets its guarantee with probability ``1 - beta_sv``.

    Union bound over all noise draws of at most ``c_sv`` rounds: with
    probability ``1 - beta_sv`` every threshold draw, scan draw and answer
    draw stays below ``alpha_sv / 4`` in total, which keeps coordinates at
    or below ``alpha_sv / 2`` from firing and caps every final residual at
    ``alpha_sv``.
    """
    eps_r = sv_round_epsilon(c_sv, epsilon_sv, delta_sv)
    n_rho = (2.0 / eps_r) * math.log(3.0 * c_sv / beta_sv)
    n_nu = (4.0 / eps_r) * math.log(3.0 * c_sv * k / beta_sv)
    return 4.0 * (n_rho + n_nu)


def _sv_correct(gaps, c_sv, epsilon_sv, delta_sv, alpha_sv, source, beta_sv=None):
    g = np.array(gaps, dtype=float)
    k = len(g)
    if isinstance(c_sv, bool) or int(c_sv) != c_sv or c_sv < 1:
        raise InvalidParameterError(f"c_sv must be a positive integer, got {c_sv!r}")
    if c_sv > k:
        raise InvalidParameterError(f"c_sv={c_sv} exceeds the number of queries k={k}")
    _check_eps(epsilon_sv)
    if not (0.0 < delta_sv < 1.0):
        raise InvalidParameterError(f"delta_sv must lie in (0, 1), got {delta_sv!r}")
    if not alpha_sv > 0:
        raise InvalidParameterError(f"alpha_sv must be positive, got {alpha_sv!r}")
    if beta_sv is not None:
        need = sufficient_alpha(k, c_sv, epsilon_sv, delta_sv, beta_sv)
        if alpha_sv < need:
            warnings.warn(
                f"alpha_sv={alpha_sv:.4g} is below the sufficient {need:.4g} for beta_sv={beta_sv:g}",
                stacklevel=3,
            )

    eps_r = sv_round_epsilon(int(c_sv), epsilon_sv, delta_sv)
    threshold = 0.75 * alpha_sv
    b = np.zeros(k)
    noise = np.zeros(k)
    fired = []
    residual = np.abs(g)
    for _ in range(int(c_sv)):
        i = above_threshold(residual, threshold, eps_r, source)
        if i is None:
            break
        z = source.laplace(1.0 / eps_r)
        noise[i] = z
        b[i] = g[i] + z
        residual[i] = abs(z)
        fired.append(i)
    return b, np.array(fired, dtype=np.int64), noise


def sv_correct(gaps, c_sv, epsilon_sv, delta_sv, alpha_sv, source, beta_sv=None):
    """Privately repair the few large entries of a signed gap vector.

    Runs at most ``c_sv`` AboveThreshold rounds over the residual magnitudes
    with threshold ``3 * alpha_sv / 4``. When index i fires, ``b[i]`` is set
    to ``gaps[i]`` plus Laplace noise and the residual becomes that noise.
    The first round in which nothing fires ends the loop.

    If at most ``c_sv`` entries exceed ``alpha_sv / 2`` in magnitude and
    ``alpha_sv >= sufficient_alpha(...)``, then with probability at least
    ``1 - beta_sv`` every ``|gaps[i] - b[i]| <= alpha_sv``. The call is
    ``(epsilon_sv, delta_sv)``-DP (see :func:`sv_budget`).

    Parameters
    ----------
    gaps : array-like of float
        Signed gaps ``q_i - a_i``; infinite entries always fire.
    beta_sv : float, optional
        If given, warn when ``alpha_sv`` is below :func:`sufficient_alpha`.

    Returns
    -------
    numpy.ndarray
        Corrections ``b``; zero where nothing was corrected.
    """
    return _sv_correct(gaps, c_sv, epsilon_sv, delta_sv, alpha_sv, source, beta_sv)[0]
