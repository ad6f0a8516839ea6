"""Mechanisms that release k sensitivity-1 query answers under (epsilon, delta)-DP.

Each mechanism sees the workload only through its true answers and returns an
:class:`AnswerVector` whose ``budget_spent`` is recomputed from the
sub-calls it actually made.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _engine
from .accounting import (
    PrivacyBudget,
    advanced_compose,
    basic_compose,
    bound,
    build_schedule,
    get_constants,
)
from .exceptions import InfeasibleScheduleError, InvalidParameterError
from .sparse_vector import _sv_correct, sv_budget

__all__ = [
    "Workload",
    "AnswerVector",
    "iterative_svc",
    "high_prob_answer",
    "expected_error_answer",
    "gaussian_mechanism",
    "gaussian_sigma",
    "laplace_split_baseline",
    "laplace_split_epsilon",
    "sv_capacity",
]


@dataclass(frozen=True)
class Workload:
    """True answers ``q_1(X), ..., q_k(X)`` of k sensitivity-1 queries."""

    true_answers: np.ndarray

    def __post_init__(self):
        arr = np.array(self.true_answers, dtype=float)
        if arr.ndim != 1 or arr.size < 1:
            raise InvalidParameterError("true_answers must be a non-empty 1-D sequence")
        if not np.isfinite(arr).all():
            raise InvalidParameterError("true_answers must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "true_answers", arr)

    @property
    def k(self):
        return self.true_answers.size


@dataclass
class AnswerVector:
    answers: np.ndarray
    budget_spent: tuple
    info: dict = field(default_factory=dict)


def _as_budget(budget):
    return budget if isinstance(budget, PrivacyBudget) else PrivacyBudget(*budget)


def _as_workload(workload):
    return workload if isinstance(workload, Workload) else Workload(workload)


def iterative_svc(workload, budget, schedule=None, source=None, *, constants=None, observer=None):
    """Iterative sparse-vector correction.

    Starts from all answers unset (``+inf``). In stage l it performs ``m_l``
    steps; each step picks a coordinate by permuted AboveThreshold on
    ``|q_i - a_i|`` with threshold ``T_l`` and budget ``eps_l / 2``, then
    re-releases it as ``q_i + Lap(2 / eps_l)``. A step whose selector fires
    on nothing releases nothing.

    Parameters
    ----------
    schedule : Schedule, optional
        Built from ``budget`` and ``constants`` when omitted; must match
        ``workload.k`` and ``budget`` otherwise.
    observer : callable, optional
        Called as ``observer(stage_index, answers)`` after every stage with
        a copy of the answers so far.
    """
    workload = _as_workload(workload)
    budget = _as_budget(budget)
    if schedule is None:
        schedule = build_schedule(workload.k, budget, constants)
    if schedule.k != workload.k:
        raise InvalidParameterError(f"schedule built for k={schedule.k}, workload has k={workload.k}")
    if schedule.budget != budget:
        raise InvalidParameterError(f"schedule built for {schedule.budget}, requested {budget}")
    if source is None:
        raise InvalidParameterError("a NoiseSource is required")

    k = workload.k
    q = workload.true_answers
    err = np.full(k, np.inf)
    size = _engine.tree_size(k)
    tree = _engine.build_tree(err, size)
    unset = np.arange(k, dtype=np.int64)
    where = np.arange(k, dtype=np.int64)
    n_unset = k
    limit = _engine.reserve(k, size)
    chunk = max(4 * limit, 1 << 16)
    empty = np.empty(0)
    nones = []

    for stage in schedule.stages:
        remaining = stage.m
        none_count = 0
        while remaining:
            if source.zero:
                done, _, n_unset, nn = _engine.run_steps(
                    err, tree, size, unset, where, n_unset, remaining,
                    stage.T, 0.5 * stage.eps, stage.eps, empty, 0, 0, True,
                )
            else:
                u = source.peek(chunk)
                done, cur, n_unset, nn = _engine.run_steps(
                    err, tree, size, unset, where, n_unset, remaining,
                    stage.T, 0.5 * stage.eps, stage.eps, u, 0, limit, False,
                )
                source.advance(cur)
            remaining -= done
            none_count += nn
        nones.append(none_count)
        if observer is not None:
            observer(stage.index, q + err)

    return AnswerVector(q + err, schedule.spent(), {"none_steps": nones, "unset": int(n_unset)})


def sv_capacity(k, c_frac):
    """Corrections allotted to the final sparse-vector pass, clamped to ``[1, k]``."""
    raw = c_frac * k / math.log(k) ** 10 if k > 1 else float(k)
    return int(min(k, max(1, math.ceil(raw))))


def high_prob_answer(workload, budget, source, constants=None, *, iterative=None, observer=None):
    """Iterative correction at half budget followed by one sparse-vector pass.

    The second half of the budget runs :func:`~dpsvc.sparse_vector.sv_correct`
    on the signed residuals with ``c_sv = sv_capacity(k, c_frac)`` and
    ``alpha_sv = alpha_mult * bound(k, epsilon, delta)``.

    ``iterative`` replaces the first stage: any callable
    ``(workload, half_budget, source) -> AnswerVector``.
    """
    workload = _as_workload(workload)
    budget = _as_budget(budget)
    c = constants if constants is not None else get_constants("paper")
    half = budget.split(2)
    k = workload.k
    q = workload.true_answers

    if iterative is None:
        first = iterative_svc(workload, half, None, source.spawn(0), constants=c, observer=observer)
    else:
        first = iterative(workload, half, source.spawn(0))
    a = np.asarray(first.answers, dtype=float)
    if a.shape != q.shape:
        raise InvalidParameterError("first stage returned answers of the wrong length")

    c_sv = sv_capacity(k, c.c_frac)
    alpha = c.alpha_mult * bound(k, budget.epsilon, budget.delta)
    with np.errstate(invalid="ignore"):
        gaps = q - a
    b, fired, noise = _sv_correct(gaps, c_sv, half.epsilon, half.delta, alpha, source.spawn(1))

    with np.errstate(invalid="ignore"):
        out = a + b
    out[fired] = np.where(np.isinf(a[fired]), q[fired] + noise[fired], out[fired])
    spent = basic_compose([first.budget_spent, sv_budget(c_sv, half.epsilon, half.delta)])
    info = {"c_sv": c_sv, "alpha_sv": alpha, "corrected": fired.tolist(), "first": first.info}
    return AnswerVector(out, spent, info)


def gaussian_sigma(k, epsilon, delta):
    return math.sqrt(2.0 * k * math.log(1.25 / delta)) / epsilon


def gaussian_mechanism(workload, budget, source):
    """``a_i = q_i + N(0, sigma^2)`` with ``sigma = sqrt(2 k ln(1.25/delta)) / epsilon``."""
    workload = _as_workload(workload)
    budget = _as_budget(budget)
    sigma = gaussian_sigma(workload.k, budget.epsilon, budget.delta)
    noise = source.gaussian_array(sigma, workload.k)
    return AnswerVector(workload.true_answers + noise, (budget.epsilon, budget.delta), {"sigma": sigma})


def laplace_split_epsilon(k, epsilon, delta, tol=1e-9):
    """Largest per-query epsilon whose k-fold advanced composition at ``delta`` stays within ``epsilon``."""
    lo, hi = 0.0, epsilon
    if advanced_compose(k, hi, delta) <= epsilon:
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if advanced_compose(k, mid, delta) <= epsilon:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    if lo <= 0.0:
        raise InfeasibleScheduleError(f"no positive per-query epsilon fits k={k}, epsilon={epsilon}, delta={delta}")
    return lo


def laplace_split_baseline(workload, budget, source):
    """Laplace noise on every query, budget split by advanced composition."""
    workload = _as_workload(workload)
    budget = _as_budget(budget)
    eps_q = laplace_split_epsilon(workload.k, budget.epsilon, budget.delta)
    noise = source.laplace_array(1.0 / eps_q, workload.k)
    spent = (advanced_compose(workload.k, eps_q, budget.delta), budget.delta)
    return AnswerVector(workload.true_answers + noise, spent, {"per_query_epsilon": eps_q})


def expected_error_answer(workload, budget, source, constants=None, *, high_prob=None, observer=None):
    """Two independent high-probability runs and a Gaussian check that picks between them.

    Runs ``high_prob`` (default :func:`high_prob_answer`) twice at a third
    of the budget each, producing ``a`` and ``b``, and releases
    ``c_i = |q_i - a_i| + N(0, sigma^2)`` with the last third. Outputs ``a``
    when ``max c_i <= k**10 * bound(k, epsilon, delta)``, else ``b``.
    """
    workload = _as_workload(workload)
    budget = _as_budget(budget)
    third = budget.split(3)
    k = workload.k
    q = workload.true_answers

    if high_prob is None:
        def high_prob(w, b, s, obs=None):
            return high_prob_answer(w, b, s, constants, observer=obs)
        first = high_prob(workload, third, source.spawn(0), observer)
    else:
        first = high_prob(workload, third, source.spawn(0))
    second = high_prob(workload, third, source.spawn(1))

    with np.errstate(invalid="ignore"):
        derived = np.abs(q - np.asarray(first.answers, dtype=float))
    sigma = gaussian_sigma(k, third.epsilon, third.delta)
    c = derived + source.spawn(2).gaussian_array(sigma, k)
    threshold = float(k) ** 10 * bound(k, budget.epsilon, budget.delta)
    use_first = bool(np.max(c) <= threshold)

    chosen = first if use_first else second
    spent = basic_compose([first.budget_spent, second.budget_spent, (third.epsilon, third.delta)])
    info = {"branch": "a" if use_first else "b", "max_c": float(np.max(c)), "threshold": threshold}
    return AnswerVector(np.array(chosen.answers, dtype=float), spent, info)
