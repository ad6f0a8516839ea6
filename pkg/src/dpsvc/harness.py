"""Monte Carlo measurement of the release mechanisms.

The harness is the only place that compares released answers with true
answers. Mechanisms receive a :class:`~dpsvc.mechanisms.Workload`; errors,
I-set counts and stage traces are computed here from what they return.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.special import ndtri
from scipy.stats import binomtest

from .accounting import PrivacyBudget, bound, build_schedule, get_constants
from .exceptions import InfeasibleScheduleError, InvalidParameterError
from .mechanisms import (
    Workload,
    expected_error_answer,
    gaussian_mechanism,
    gaussian_sigma,
    high_prob_answer,
    iterative_svc,
    laplace_split_baseline,
)
from .noise import NoiseSource
from .sparse_vector import permuted_above_threshold

__all__ = [
    "MECHANISMS",
    "TrialReport",
    "SweepSummary",
    "make_workload",
    "measure_I_sets",
    "run_trial",
    "run_sweep",
    "summarize",
    "trial_seed",
    "gaussian_p99_ratio",
    "results_csv",
    "summary_csv",
    "RESULT_HEADER",
    "SUMMARY_HEADER",
    "SelectorResult",
    "selector_instance",
    "selector_experiment",
    "SvCalibration",
    "sv_calibration",
    "PlantedResult",
    "planted_experiment",
]

MECHANISMS = ("iterative", "high_prob", "expected", "gaussian", "laplace")

# Successive budget splits on the way from each mechanism to its first iterative run.
_TRACE_SPLIT = {"iterative": (), "high_prob": (2,), "expected": (3, 2)}

RESULT_HEADER = ["mechanism", "k", "epsilon", "delta", "trial", "seed", "linf", "ratio_to_bound", "stage_trace_json", "wall_ms"]
SUMMARY_HEADER = ["mechanism", "k", "epsilon", "delta", "trials", "mean_linf", "median_linf", "p95_linf", "mean_ratio", "fail_freq"]


def make_workload(kind, k, seed=0, low=0.0, high=1.0):
    """Deterministic workload of ``k`` true answers.

    ``"zeros"`` gives all zeros, ``"uniform"`` i.i.d. draws from
    ``[low, high)``, ``"adversarial_spread"`` the values ``0, 1000, 2000, ...``
    so that each coordinate is recognisable in a trace.
    """
    if isinstance(k, bool) or int(k) != k or k < 2:
        raise InvalidParameterError(f"k must be an integer >= 2, got {k!r}")
    k = int(k)
    if kind == "zeros":
        values = np.zeros(k)
    elif kind == "uniform":
        if not high > low:
            raise InvalidParameterError(f"empty range [{low}, {high})")
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0x574B,))))
        values = rng.uniform(low, high, size=k)
    elif kind == "adversarial_spread":
        values = 1000.0 * np.arange(k)
    else:
        raise InvalidParameterError(f"unknown workload kind {kind!r}")
    return Workload(values)


def measure_I_sets(workload, answers, schedule):
    """Counts ``|{i : |q_i - a_i| >= tau_t}|`` for ``t = 0, ..., L``.

    Unset (infinite) answers count against every threshold.
    """
    err = _abs_err(workload, answers)
    return [int(np.count_nonzero(err >= tau)) for tau in schedule.thresholds()]


def _abs_err(workload, answers):
    with np.errstate(invalid="ignore"):
        err = np.abs(np.asarray(answers, dtype=float) - workload.true_answers)
    err[np.isnan(err)] = np.inf
    return err


@dataclass
class TrialReport:
    mechanism: str
    k: int
    epsilon: float
    delta: float
    seed: int
    linf_error: float
    violation_counts: dict
    stage_trace: list
    wall_time: float
    trial: int = 0
    profile: str = "paper"
    error: str = None

    @property
    def ratio(self):
        return self.linf_error / bound(self.k, self.epsilon, self.delta)

    def row(self):
        return [
            self.mechanism,
            self.k,
            repr(float(self.epsilon)),
            repr(float(self.delta)),
            self.trial,
            self.seed,
            repr(float(self.linf_error)),
            repr(float(self.ratio)),
            json.dumps(self.stage_trace, separators=(",", ":")),
            f"{1000.0 * self.wall_time:.3f}",
        ]


def trace_schedule(mechanism, k, budget, constants):
    """Schedule of the iterative stage inside ``mechanism`` (None for baselines)."""
    splits = _TRACE_SPLIT.get(mechanism)
    if splits is None:
        return None
    for parts in splits:
        budget = budget.split(parts)
    return build_schedule(k, budget, constants)


def run_trial(mechanism, workload, budget, seed, constants=None, trial=0, mode="random"):
    """Run one mechanism once and measure it against the workload.

    Mechanism errors are re-raised with the trial context prepended.
    """
    if mechanism not in MECHANISMS:
        raise InvalidParameterError(f"unknown mechanism {mechanism!r}; choose from {MECHANISMS}")
    if not isinstance(workload, Workload):
        workload = Workload(workload)
    budget = budget if isinstance(budget, PrivacyBudget) else PrivacyBudget(*budget)
    c = constants if constants is not None else get_constants("paper")
    k = workload.k
    source = NoiseSource(seed, mode)

    trace = []
    start = time.perf_counter()
    try:
        inner = trace_schedule(mechanism, k, budget, c)
        observer = None
        if inner is not None:
            taus = {st.index: st.tau for st in inner.stages}

            def observer(stage, answers):
                trace.append(int(np.count_nonzero(_abs_err(workload, answers) >= taus[stage])))

        if mechanism == "iterative":
            out = iterative_svc(workload, budget, inner, source, observer=observer)
        elif mechanism == "high_prob":
            out = high_prob_answer(workload, budget, source, c, observer=observer)
        elif mechanism == "expected":
            out = expected_error_answer(workload, budget, source, c, observer=observer)
        elif mechanism == "gaussian":
            out = gaussian_mechanism(workload, budget, source)
        else:
            out = laplace_split_baseline(workload, budget, source)
    except Exception as exc:
        raise type(exc)(f"[{mechanism} k={k} eps={budget.epsilon} delta={budget.delta} seed={seed}] {exc}") from exc
    wall = time.perf_counter() - start

    err = _abs_err(workload, out.answers)
    counts = {}
    measure = inner
    if measure is None:
        try:
            measure = build_schedule(k, budget, c)
        except (InvalidParameterError, InfeasibleScheduleError):
            measure = None
    if measure is not None:
        counts = {f"tau_{t}": n for t, n in enumerate(measure_I_sets(workload, out.answers, measure))}
    counts["bound"] = int(np.count_nonzero(err > bound(k, budget.epsilon, budget.delta)))
    return TrialReport(
        mechanism, k, budget.epsilon, budget.delta, int(seed), float(np.max(err)),
        counts, trace, wall, trial, c.name,
    )


def _cell_key(mechanism, k, epsilon, delta):
    text = f"{mechanism}|{int(k)}|{float(epsilon)!r}|{float(delta)!r}"
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "little")


def trial_seed(master_seed, mechanism, k, epsilon, delta, trial):
    """64-bit seed of one trial; independent of scheduling and of the rest of the grid."""
    state = np.random.SeedSequence([int(master_seed), _cell_key(mechanism, k, epsilon, delta), int(trial)])
    lo, hi = state.generate_state(2, np.uint32)
    return int(lo) | (int(hi) << 32)


def gaussian_p99_ratio(k, epsilon, delta):
    """Exact 99th percentile of the Gaussian baseline's l_inf error, in units of ``bound``."""
    sigma = gaussian_sigma(k, epsilon, delta)
    t = sigma * ndtri(0.5 * (1.0 + 0.99 ** (1.0 / k)))
    return t / bound(k, epsilon, delta)


@dataclass
class SweepSummary:
    mechanism: str
    k: int
    epsilon: float
    delta: float
    trials: int
    mean_linf: float
    median_linf: float
    p95_linf: float
    mean_ratio: float
    fail_freq: float
    target_ratio: float
    failures: list = field(default_factory=list)

    def row(self):
        return [
            self.mechanism, self.k, repr(float(self.epsilon)), repr(float(self.delta)), self.trials,
            repr(float(self.mean_linf)), repr(float(self.median_linf)), repr(float(self.p95_linf)),
            repr(float(self.mean_ratio)), repr(float(self.fail_freq)),
        ]


def summarize(reports, target_ratio=None):
    """Aggregate reports per (mechanism, k, epsilon, delta); order of ``reports`` is irrelevant."""
    cells = {}
    for r in reports:
        cells.setdefault((r.mechanism, r.k, r.epsilon, r.delta), []).append(r)
    out = []
    for key in sorted(cells, key=lambda t: (MECHANISMS.index(t[0]), t[1], t[2], t[3])):
        rs = sorted(cells[key], key=lambda r: r.trial)
        ok = [r for r in rs if r.error is None]
        if not ok:
            continue
        mech, k, eps, delta = key
        linf = np.array([r.linf_error for r in ok])
        ratios = np.array([r.ratio for r in ok])
        target = target_ratio if target_ratio is not None else gaussian_p99_ratio(k, eps, delta)
        out.append(SweepSummary(
            mech, k, eps, delta, len(ok),
            float(np.mean(linf)), float(np.median(linf)), float(np.percentile(linf, 95)),
            float(np.mean(ratios)), float(np.mean(ratios > target)), float(target),
            [(r.trial, r.error) for r in rs if r.error is not None],
        ))
    return out


def _run_task(task):
    mech, k, eps, delta, trial, seed, constants, workload = task
    try:
        return run_trial(mech, workload, PrivacyBudget(eps, delta), seed, constants, trial)
    except Exception as exc:  # recorded per cell; the sweep goes on
        return TrialReport(mech, k, eps, delta, seed, math.nan, {}, [], 0.0, trial, constants.name, str(exc))


def default_jobs():
    try:
        return max(1, int(os.environ.get("DPSVC_JOBS", "1")))
    except ValueError:
        return 1


def run_sweep(grid, trials, master_seed, jobs=1, constants=None, workload_kind="zeros", return_reports=False,
              workload_range=(0.0, 1.0)):
    """Run ``trials`` seeded trials for every (mechanism, k, epsilon, delta) cell of ``grid``.

    Returns summaries (and the per-trial reports when ``return_reports``).
    Results do not depend on ``jobs``.
    """
    grid = list(grid)
    if not grid:
        raise InvalidParameterError("empty grid")
    c = constants if constants is not None else get_constants("paper")
    tasks = []
    for mech, k, eps, delta in grid:
        if mech not in MECHANISMS:
            raise InvalidParameterError(f"unknown mechanism {mech!r}")
        workload = make_workload(workload_kind, k, master_seed, *workload_range)
        for t in range(trials):
            tasks.append((mech, int(k), float(eps), float(delta), t, trial_seed(master_seed, mech, k, eps, delta, t), c, workload))
    if jobs <= 1:
        reports = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    summaries = summarize(reports)
    return (summaries, reports) if return_reports else summaries


def results_csv(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_HEADER)
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def summary_csv(summaries):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for s in summaries:
        w.writerow(s.row())
    return buf.getvalue()


# -- permuted AboveThreshold utility experiment --------------------------------


@dataclass
class SelectorResult:
    k: int
    n_good: int
    n_bad: int
    gamma: float
    epsilon: float
    T: float
    w: float
    trials: int
    successes: int
    ci_low: float
    ci_high: float
    violated: list
    outcomes: list = field(default_factory=list, repr=False)

    @property
    def rate(self):
        return self.successes / self.trials

    @property
    def conditions_hold(self):
        return not self.violated


def selector_instance(k, n_good, n_bad, T, w):
    """Gaps with ``n_good`` entries at ``T + w``, ``n_bad`` spread inside ``(T - w, T + w)``, rest 0.

    Good coordinates come first, then bad ones.
    """
    if n_good < 0 or n_bad < 0 or n_good + n_bad > k:
        raise InvalidParameterError(f"cannot place {n_good} good and {n_bad} bad coordinates among {k}")
    gaps = np.zeros(k)
    gaps[:n_good] = T + w
    gaps[n_good:n_good + n_bad] = T - w + 2.0 * w * np.arange(1, n_bad + 1) / (n_bad + 1)
    return gaps


def selector_conditions(k, n_good, n_bad, gamma, epsilon, w):
    """Names of the violated preconditions (empty when all hold)."""
    bad = []
    if n_good < gamma * k:
        bad.append("(i) |I_good| >= gamma*k")
    if w < 8.0 / epsilon * math.log(400.0 / gamma):
        bad.append("(ii) w >= (8/eps) ln(400/gamma)")
    if n_good < 2 * n_bad:
        bad.append("(iii) |I_good| >= 2|I_bad|")
    return bad


def _selector_trial(args, t):
    gaps, T, epsilon, n_good, seed, mode = args
    i = permuted_above_threshold(gaps, T, epsilon, NoiseSource.for_trial(seed, t, mode))
    return -1 if i is None else int(i)


def _map_trials(fn, args, trials, jobs):
    if jobs <= 1:
        return [fn(args, t) for t in range(trials)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(partial(fn, args), range(trials), chunksize=max(1, trials // (4 * jobs))))


def selector_experiment(k=100_000, n_good=1000, n_bad=500, gamma=0.01, epsilon=1.0, T=100.0, w=None,
                      trials=2000, seed=0, mode="random", jobs=1):
    """Empirical ``Pr[selected index is good]`` for permuted AboveThreshold.

    ``outcomes`` holds the selected index of every trial (-1 for none).
    """
    if w is None:
        w = 8.0 / epsilon * math.log(400.0 / gamma)
    gaps = selector_instance(k, n_good, n_bad, T, w)
    violated = selector_conditions(k, n_good, n_bad, gamma, epsilon, w)
    picks = _map_trials(_selector_trial, (gaps, T, epsilon, n_good, seed, mode), trials, jobs)
    wins = sum(0 <= i < n_good for i in picks)
    ci = binomtest(wins, trials).proportion_ci(0.95, method="wilson")
    return SelectorResult(k, n_good, n_bad, gamma, epsilon, T, w, trials, wins, ci.low, ci.high, violated, picks)


# -- constants of the final sparse-vector pass ---------------------------------


@dataclass
class SvCalibration:
    k: int
    c_sv: int
    alpha_sv: float
    counts: list
    c2_empirical: float
    min_alpha_mult: float

    @property
    def covered(self):
        """Fraction of trials with at most ``c_sv`` coordinates above ``alpha_sv / 2``."""
        return float(np.mean(np.asarray(self.counts) <= self.c_sv))


def sv_calibration(k_values, budget, constants, trials=10, seed=0):
    """Measure how many coordinates the iterative stage of the high-probability mechanism leaves large.

    For every k this runs the iterative corrector at half of ``budget`` (as
    :func:`~dpsvc.mechanisms.high_prob_answer` does) and counts coordinates
    with error above ``alpha_sv / 2``, where ``alpha_sv = alpha_mult * bound``.
    ``c2_empirical`` is the largest count times ``(ln k)^10 / k``, the
    smallest ``c_frac`` that would have covered every trial, and
    ``min_alpha_mult`` the smallest ``alpha_mult`` for which the configured
    ``c_sv`` covers every trial.
    """
    from .mechanisms import sv_capacity

    budget = budget if isinstance(budget, PrivacyBudget) else PrivacyBudget(*budget)
    half = budget.split(2)
    out = []
    for k in k_values:
        B = bound(k, budget.epsilon, budget.delta)
        c_sv = sv_capacity(k, constants.c_frac)
        alpha = constants.alpha_mult * B
        workload = make_workload("zeros", k)
        counts, needed = [], []
        for t in range(trials):
            res = iterative_svc(workload, half, None, NoiseSource.for_trial(seed, t), constants=constants)
            err = np.sort(_abs_err(workload, res.answers))[::-1]
            counts.append(int(np.count_nonzero(err > alpha / 2.0)))
            needed.append(2.0 * err[c_sv] / B if c_sv < k else 0.0)
        out.append(SvCalibration(
            int(k), c_sv, alpha, counts,
            max(counts) * math.log(k) ** 10 / k, max(needed),
        ))
    return out


# -- sparse-vector corrector on planted violations -----------------------------


@dataclass
class PlantedResult:
    k: int
    c_sv: int
    n_planted: int
    alpha_sv: float
    beta_sv: float
    trials: int
    failures: int
    max_residual: float
    residuals: list = field(default_factory=list, repr=False)

    @property
    def fail_freq(self):
        return self.failures / self.trials


def _planted_trial(args, t):
    from .sparse_vector import sv_correct

    gaps, c_sv, epsilon_sv, delta_sv, alpha_sv, seed, mode = args
    b = sv_correct(gaps, c_sv, epsilon_sv, delta_sv, alpha_sv, NoiseSource.for_trial(seed, t, mode))
    return float(np.max(np.abs(gaps - b)))


def planted_experiment(k=10_000, c_sv=50, n_planted=30, scale=5.0, epsilon_sv=0.5, delta_sv=2.0**-20,
                       beta_sv=1e-3, alpha_sv=None, trials=2000, seed=0, mode="random", jobs=1):
    """Run the corrector on gaps with ``n_planted`` entries of magnitude ``scale * alpha_sv`` and zeros elsewhere.

    ``alpha_sv`` defaults to :func:`~dpsvc.sparse_vector.sufficient_alpha`.
    A trial fails when some ``|g_i - b_i|`` exceeds ``alpha_sv``.
    """
    from .sparse_vector import sufficient_alpha

    if alpha_sv is None:
        alpha_sv = sufficient_alpha(k, c_sv, epsilon_sv, delta_sv, beta_sv)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0x5056,))))
    gaps = np.zeros(k)
    where = rng.choice(k, size=n_planted, replace=False)
    gaps[where] = scale * alpha_sv * rng.choice([-1.0, 1.0], size=n_planted)
    res = _map_trials(_planted_trial, (gaps, c_sv, epsilon_sv, delta_sv, alpha_sv, seed, mode), trials, jobs)
    failures = sum(r > alpha_sv for r in res)
    return PlantedResult(k, c_sv, n_planted, alpha_sv, beta_sv, trials, failures, max(res), res)
