"""Compiled inner loop of the iterative corrector.

A permuted AboveThreshold call with threshold T, selector noise rho and
per-position noise nu returns the first firing position of a uniform random
order. Once rho is fixed, coordinate i fires independently with probability
``P[nu >= T + rho - gap_i]``, and the firing set is independent of the
order, so the returned index is a uniform element of the firing set (or
nothing when it is empty). :func:`_select` samples exactly that law without
touching all k coordinates:

1. probe up to ``SCAN`` coordinates in uniform order (drawing with
   replacement and reusing outcomes of repeats gives a uniform
   first-appearance order); return the first one that fires;
2. otherwise generate the remaining firing set by thinning against subtree
   maxima of a segment tree over the finite gaps and pick uniformly from it
   together with the still-unanswered coordinates, which always fire.

Every random choice consumes uniforms from a caller-supplied buffer, so the
run is a deterministic function of the uniform stream.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

SCAN = 32


@njit(cache=True, inline="always")
def _lap(u, scale):
    v = u - 0.5
    if v >= 0.0:
        return -scale * math.log1p(-2.0 * v)
    return scale * math.log1p(2.0 * v)


@njit(cache=True, inline="always")
def _sf(x, scale):
    # P[Lap(scale) >= x]
    if x >= 0.0:
        return 0.5 * math.exp(-x / scale)
    return 1.0 - 0.5 * math.exp(x / scale)


@njit(cache=True)
def build_tree(err, size):
    tree = np.full(2 * size, -np.inf)
    for i in range(err.shape[0]):
        g = abs(err[i])
        if g != np.inf:
            tree[size + i] = g
    for node in range(size - 1, 0, -1):
        tree[node] = max(tree[2 * node], tree[2 * node + 1])
    return tree


@njit(cache=True, inline="always")
def _tree_set(tree, size, i, value):
    node = size + i
    tree[node] = value
    node //= 2
    while node >= 1:
        tree[node] = max(tree[2 * node], tree[2 * node + 1])
        node //= 2


@njit(cache=True)
def _select(err, k, tree, size, unset, n_unset, level, nu_scale, u, cur, seen, fires, stack):
    """One permuted-AboveThreshold selection in random mode.

    Returns (index or -1, new cursor).
    """
    n_seen = 0
    for _ in range(SCAN):
        idx = int(u[cur] * k)
        cur += 1
        if idx >= k:
            idx = k - 1
        repeat = False
        for s in range(n_seen):
            if seen[s] == idx:
                repeat = True
                break
        if repeat:
            continue
        g = abs(err[idx])
        if g == np.inf:
            return idx, cur
        nu = _lap(u[cur], nu_scale)
        cur += 1
        if g + nu >= level:
            return idx, cur
        seen[n_seen] = idx
        n_seen += 1

    n_fire = 0
    top = 0
    stack[0, 0] = 1
    stack[0, 1] = 0
    stack[0, 2] = size
    top = 1
    while top > 0:
        top -= 1
        node = stack[top, 0]
        lo = stack[top, 1]
        hi = stack[top, 2]
        gmax = tree[node]
        if gmax == -np.inf or lo >= k:
            continue
        p = _sf(level - gmax, nu_scale)
        if p <= 0.0:
            continue
        if node >= size or (hi - lo) * p <= 1.0:
            log_q = math.log1p(-p) if p < 1.0 else -np.inf
            j = lo - 1
            while True:
                if p < 1.0:
                    skip = math.log(u[cur]) / log_q
                    cur += 1
                    if j + 1 + skip >= hi:
                        break
                    j = j + 1 + int(skip)
                else:
                    j += 1
                    if j >= hi:
                        break
                if j >= k:
                    break
                g = tree[size + j]
                if g == -np.inf:
                    continue
                accept = _sf(level - g, nu_scale) / p
                hit = u[cur] < accept
                cur += 1
                if not hit:
                    continue
                known = False
                for s in range(n_seen):
                    if seen[s] == j:
                        known = True
                        break
                if not known:
                    fires[n_fire] = j
                    n_fire += 1
        else:
            mid = (lo + hi) // 2
            stack[top, 0] = 2 * node
            stack[top, 1] = lo
            stack[top, 2] = mid
            stack[top + 1, 0] = 2 * node + 1
            stack[top + 1, 1] = mid
            stack[top + 1, 2] = hi
            top += 2

    total = n_unset + n_fire
    if total == 0:
        return -1, cur
    r = int(u[cur] * total)
    cur += 1
    if r >= total:
        r = total - 1
    if r < n_unset:
        return unset[r], cur
    return fires[r - n_unset], cur


@njit(cache=True)
def _select_zero(err, k, level):
    for i in range(k):
        if abs(err[i]) >= level:
            return i
    return -1


def reserve(k, size):
    """Uniforms one selection-plus-resample step may consume, at most."""
    return 4 * size + 4 * k + 2 * SCAN + 16


@njit(cache=True)
def run_steps(err, tree, size, unset, where, n_unset, n_steps, T, sel_eps, ans_eps, u, cur, limit, zero):
    """Run up to ``n_steps`` select-and-resample steps of one stage.

    Stops early when fewer than ``limit`` uniforms remain past ``cur``.
    Returns (steps done, cursor, unset count, none count).
    """
    k = err.shape[0]
    rho_scale = 2.0 / sel_eps
    nu_scale = 4.0 / sel_eps
    z_scale = 2.0 / ans_eps
    seen = np.empty(SCAN, dtype=np.int64)
    fires = np.empty(k, dtype=np.int64)
    stack = np.empty((128, 3), dtype=np.int64)
    n_none = 0
    done = 0
    while done < n_steps:
        if not zero and u.shape[0] - cur < limit:
            break
        if zero:
            idx = _select_zero(err, k, T)
        else:
            level = T + _lap(u[cur], rho_scale)
            cur += 1
            idx, cur = _select(err, k, tree, size, unset, n_unset, level, nu_scale, u, cur, seen, fires, stack)
        done += 1
        if idx < 0:
            n_none += 1
            continue
        if zero:
            z = 0.0
        else:
            z = _lap(u[cur], z_scale)
            cur += 1
        if abs(err[idx]) == np.inf:
            pos = where[idx]
            last = unset[n_unset - 1]
            unset[pos] = last
            where[last] = pos
            n_unset -= 1
            where[idx] = -1
        err[idx] = z
        _tree_set(tree, size, idx, abs(z))
    return done, cur, n_unset, n_none


def tree_size(k):
    return 1 << max(0, int(k - 1).bit_length())
