import math

import numpy as np
import pytest
from scipy.special import ndtri

from dpsvc.accounting import PrivacyBudget, basic_compose, bound, build_schedule, get_constants
from dpsvc.exceptions import InvalidParameterError
from dpsvc.mechanisms import (
    AnswerVector,
    Workload,
    expected_error_answer,
    gaussian_mechanism,
    gaussian_sigma,
    high_prob_answer,
    iterative_svc,
    laplace_split_baseline,
    laplace_split_epsilon,
    sv_capacity,
)
from dpsvc.noise import NoiseSource
from dpsvc.sparse_vector import sufficient_alpha

BUDGET = PrivacyBudget(1.0, 2.0**-20)


@pytest.mark.parametrize("k", [16, 1024])
@pytest.mark.parametrize("profile", ["paper", "practical"])
def test_zero_mode_exact(k, profile):
    q = np.linspace(-5, 5, k)
    c = get_constants(profile)
    for fn in (
        lambda w, s: iterative_svc(w, BUDGET, None, s, constants=c),
        lambda w, s: high_prob_answer(w, BUDGET, s, c),
        lambda w, s: expected_error_answer(w, BUDGET, s, c),
        lambda w, s: gaussian_mechanism(w, BUDGET, s),
        lambda w, s: laplace_split_baseline(w, BUDGET, s),
    ):
        out = fn(Workload(q), NoiseSource(0, "zero"))
        assert np.array_equal(out.answers, q)


def test_one_step_trace():
    c = get_constants("paper", kappa=0.5)
    s = build_schedule(2, BUDGET, c)
    assert s.L == 1 and s.stages[0].m == 1
    out = iterative_svc(Workload([7.0, -3.0]), BUDGET, s, NoiseSource(0, "zero"))
    assert out.answers[0] == 7.0 and out.answers[1] == math.inf
    assert out.info["unset"] == 1


def test_budget_audit():
    for fn in (
        lambda s: iterative_svc(Workload(np.zeros(256)), BUDGET, None, s),
        lambda s: high_prob_answer(Workload(np.zeros(256)), BUDGET, s),
        lambda s: expected_error_answer(Workload(np.zeros(256)), BUDGET, s),
        lambda s: gaussian_mechanism(Workload(np.zeros(256)), BUDGET, s),
        lambda s: laplace_split_baseline(Workload(np.zeros(256)), BUDGET, s),
    ):
        e, d = fn(NoiseSource(1)).budget_spent
        assert e <= 1.0 and d <= 2.0**-20


def test_three_way_split_composes_exactly():
    third = BUDGET.split(3)
    e, d = basic_compose([third] * 3)
    assert math.isclose(e, 1.0, rel_tol=1e-15) and math.isclose(d, 2.0**-20, rel_tol=1e-15)


def test_translation_invariance():
    k = 512
    shift = np.random.default_rng(1).uniform(-100, 100, k)
    for fn in (iterative_svc, high_prob_answer, expected_error_answer):
        if fn is iterative_svc:
            a = fn(Workload(np.zeros(k)), BUDGET, None, NoiseSource(5)).answers
            b = fn(Workload(shift), BUDGET, None, NoiseSource(5)).answers
        else:
            a = fn(Workload(np.zeros(k)), BUDGET, NoiseSource(5)).answers
            b = fn(Workload(shift), BUDGET, NoiseSource(5)).answers
        assert np.allclose(b - shift, a, rtol=0, atol=1e-6 * np.max(np.abs(a)))


def test_seed_determinism():
    w = Workload(np.zeros(300))
    a = high_prob_answer(w, BUDGET, NoiseSource(8)).answers
    b = high_prob_answer(w, BUDGET, NoiseSource(8)).answers
    assert np.array_equal(a, b)


def test_observer_sees_every_stage():
    seen = []
    s = build_schedule(200, BUDGET)
    iterative_svc(Workload(np.zeros(200)), BUDGET, s, NoiseSource(2), observer=lambda l, a: seen.append(l))
    assert seen == list(range(1, s.L + 1))


def test_schedule_mismatch_rejected():
    s = build_schedule(100, BUDGET)
    with pytest.raises(InvalidParameterError):
        iterative_svc(Workload(np.zeros(99)), BUDGET, s, NoiseSource(0))
    with pytest.raises(InvalidParameterError):
        iterative_svc(Workload(np.zeros(100)), PrivacyBudget(0.5, 2.0**-20), s, NoiseSource(0))


def test_workload_validation():
    with pytest.raises(InvalidParameterError):
        Workload([])
    with pytest.raises(InvalidParameterError):
        Workload([1.0, math.nan])
    w = Workload([1.0, 2.0])
    with pytest.raises(ValueError):
        w.true_answers[0] = 5.0


def test_sv_capacity_clamped():
    assert sv_capacity(1000, 1.0) == 1
    assert sv_capacity(1000, 1e12) == 1000


def test_high_prob_seam_repairs_planted_residuals():
    k, n_viol = 10_000, 20
    half = BUDGET.split(2)
    c_frac = 30 * math.log(k) ** 10 / k
    c_sv = sv_capacity(k, c_frac)
    alpha = sufficient_alpha(k, c_sv, half.epsilon, half.delta, 1e-3)
    c = get_constants("paper", c_frac=c_frac, alpha_mult=alpha / bound(k, 1.0, 2.0**-20))
    q = np.zeros(k)
    where = np.random.default_rng(0).choice(k, n_viol, replace=False)
    stub = q.copy()
    stub[where] = 3 * alpha

    def iterative(w, b, s):
        return AnswerVector(stub.copy(), (0.0, 0.0))

    ok = 0
    for t in range(500):
        out = high_prob_answer(Workload(q), BUDGET, NoiseSource.for_trial(9, t), c, iterative=iterative)
        ok += np.max(np.abs(out.answers - q)) <= alpha
    assert ok / 500 >= 0.99


def test_high_prob_fills_unset_coordinates(zero):
    q = np.arange(6.0)
    stub = q.copy()
    stub[2] = math.inf
    c = get_constants("paper", c_frac=1e9)
    out = high_prob_answer(Workload(q), BUDGET, zero, c, iterative=lambda w, b, s: AnswerVector(stub, (0.0, 0.0)))
    assert np.array_equal(out.answers, q)


def test_expected_error_branches(zero):
    k = 8
    q = np.zeros(k)
    B = bound(k, 1.0, 2.0**-20)
    calls = []

    def high_prob(w, b, s):
        calls.append(b)
        a = q.copy()
        if len(calls) == 1:
            a[3] = 2 * float(k) ** 10 * B
        return AnswerVector(a, (b.epsilon, b.delta))

    out = expected_error_answer(Workload(q), BUDGET, zero, high_prob=high_prob)
    assert out.info["branch"] == "b"
    assert np.array_equal(out.answers, q)
    assert calls == [BUDGET.split(3)] * 2
    out = expected_error_answer(Workload(q), BUDGET, zero)
    assert out.info["branch"] == "a"


def test_gaussian_single_query_median():
    eps = math.sqrt(2 * math.log(1.25 / 2.0**-20)) / 10.0
    assert math.isclose(gaussian_sigma(1, eps, 2.0**-20), 10.0)
    errs = [abs(gaussian_mechanism(Workload([0.0]), (eps, 2.0**-20), NoiseSource.for_trial(1, t)).answers[0]) for t in range(10_000)]
    assert abs(np.median(errs) - 10 * ndtri(0.75)) <= 0.2


def test_gaussian_max_sanity_band():
    k = 1024
    sigma = gaussian_sigma(k, 1.0, 2.0**-20)
    noise = NoiseSource(3).gaussian_array(1.0, 1000 * k).reshape(1000, k)
    ratio = np.mean(np.max(np.abs(noise), axis=1))
    assert abs(ratio / math.sqrt(2 * math.log(k)) - 1) <= 0.15
    out = [np.max(np.abs(gaussian_mechanism(Workload(np.zeros(k)), BUDGET, NoiseSource.for_trial(2, t)).answers)) for t in range(1000)]
    assert abs(np.mean(out) / sigma / math.sqrt(2 * math.log(k)) - 1) <= 0.15


def test_laplace_split_bisection():
    from dpsvc.accounting import advanced_compose

    for k in (10, 1024, 10**5):
        e = laplace_split_epsilon(k, 1.0, 2.0**-20)
        assert 1.0 * (1 - 1e-6) <= advanced_compose(k, e, 2.0**-20) <= 1.0


def test_laplace_worse_than_gaussian():
    k = 1024
    lap = [np.max(np.abs(laplace_split_baseline(Workload(np.zeros(k)), BUDGET, NoiseSource.for_trial(4, t)).answers)) for t in range(1000)]
    gau = [np.max(np.abs(gaussian_mechanism(Workload(np.zeros(k)), BUDGET, NoiseSource.for_trial(5, t)).answers)) for t in range(1000)]
    assert np.mean(lap) >= 1.5 * np.mean(gau)
