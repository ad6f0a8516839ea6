import math

import numpy as np
import pytest
from scipy import integrate, stats

from dpsvc.accounting import PrivacyBudget, bound, build_schedule, get_constants
from dpsvc.exceptions import InvalidParameterError
from dpsvc.harness import (
    RESULT_HEADER,
    SUMMARY_HEADER,
    gaussian_p99_ratio,
    make_workload,
    measure_I_sets,
    results_csv,
    run_sweep,
    run_trial,
    summary_csv,
    sv_calibration,
    trial_seed,
)
from dpsvc.mechanisms import Workload, gaussian_sigma

BUDGET = PrivacyBudget(1.0, 2.0**-20)


def expected_gaussian_max(k):
    """E[max_i |Z_i|] for k i.i.d. standard normals, by quadrature."""
    f = lambda t: 1.0 - (2.0 * stats.norm.cdf(t) - 1.0) ** k
    return integrate.quad(f, 0, 40, limit=200)[0]


def test_make_workload():
    assert list(make_workload("zeros", 4).true_answers) == [0, 0, 0, 0]
    a = make_workload("uniform", 50, seed=3, low=0, high=1).true_answers
    assert np.array_equal(a, make_workload("uniform", 50, seed=3).true_answers)
    assert a.min() >= 0 and a.max() < 1
    assert len(set(make_workload("adversarial_spread", 3).true_answers)) == 3
    with pytest.raises(InvalidParameterError):
        make_workload("spiky", 4)
    with pytest.raises(InvalidParameterError):
        make_workload("zeros", 1)


def test_measure_I_sets():
    k = 64
    s = build_schedule(k, BUDGET)
    w = make_workload("zeros", k)
    assert set(measure_I_sets(w, np.zeros(k), s)) == {0}
    assert set(measure_I_sets(w, np.full(k, np.inf), s)) == {k}
    a = np.zeros(k)
    a[5] = s.thresholds()[2]
    counts = measure_I_sets(w, a, s)
    assert counts[:3] == [1, 1, 1] and set(counts[3:]) == {0}


def test_zero_mode_trial():
    w = make_workload("uniform", 128, seed=1)
    for mech in ("iterative", "high_prob", "expected", "gaussian", "laplace"):
        r = run_trial(mech, w, BUDGET, 5, mode="zero")
        assert r.linf_error == 0.0


def test_trial_reproducible():
    w = make_workload("zeros", 256)
    a = run_trial("high_prob", w, BUDGET, 17, get_constants("practical"))
    b = run_trial("high_prob", w, BUDGET, 17, get_constants("practical"))
    assert a.row()[:-1] == b.row()[:-1]
    assert a.violation_counts == b.violation_counts


def test_stage_trace_length_and_monotone_counts():
    w = make_workload("zeros", 512)
    for mech, parts in (("iterative", []), ("high_prob", [2]), ("expected", [3, 2])):
        r = run_trial(mech, w, BUDGET, 2)
        b = BUDGET
        for p in parts:
            b = b.split(p)
        assert len(r.stage_trace) == build_schedule(512, b).L
        counts = [r.violation_counts[f"tau_{t}"] for t in range(len(r.stage_trace) + 1)]
        assert all(x >= y for x, y in zip(counts, counts[1:]))
        assert r.linf_error >= 0


def test_errors_carry_trial_context():
    c = get_constants("paper", eps0_divisor=0.5)
    with pytest.raises(Exception) as info:
        run_trial("iterative", make_workload("zeros", 100), BUDGET, 3, c)
    assert "seed=3" in str(info.value)
    with pytest.raises(InvalidParameterError):
        run_trial("magic", make_workload("zeros", 4), BUDGET, 0)


def test_single_query_gaussian_median():
    eps = math.sqrt(2 * math.log(1.25 / 2.0**-20)) / 10.0
    med = np.median([run_trial("gaussian", Workload([0.0]), (eps, 2.0**-20), t).linf_error for t in range(10_000)])
    assert abs(med - 6.745) <= 0.2


def test_sweep_single_cell_is_run_trial():
    grid = [("iterative", 300, 1.0, 2.0**-20)]
    _, (rep,) = run_sweep(grid, 1, 42, return_reports=True)
    seed = trial_seed(42, "iterative", 300, 1.0, 2.0**-20, 0)
    direct = run_trial("iterative", make_workload("zeros", 300), BUDGET, seed)
    assert rep.row()[:-1] == direct.row()[:-1]


def test_sweep_parallelism_invariant():
    grid = [(m, k, 1.0, 2.0**-20) for m in ("iterative", "gaussian") for k in (256, 512)]
    s1, r1 = run_sweep(grid, 3, 7, jobs=1, return_reports=True)
    s8, r8 = run_sweep(grid, 3, 7, jobs=8, return_reports=True)
    assert summary_csv(s1) == summary_csv(s8)
    strip = lambda text: [line.rsplit(",", 1)[0] for line in text.splitlines()]
    assert strip(results_csv(r1)) == strip(results_csv(r8))
    assert len(s1) == 4


def test_sweep_records_partial_failures():
    c = get_constants("paper", eps0_divisor=0.5)
    grid = [("iterative", 100, 1.0, 2.0**-20), ("gaussian", 100, 1.0, 2.0**-20)]
    summaries, reports = run_sweep(grid, 2, 0, constants=c, return_reports=True)
    assert [s.mechanism for s in summaries] == ["gaussian"]
    assert sum(r.error is not None for r in reports) == 2


def test_csv_headers():
    _, reports = run_sweep([("gaussian", 16, 1.0, 2.0**-20)], 2, 0, return_reports=True)
    text = results_csv(reports)
    assert text.splitlines()[0] == ",".join(RESULT_HEADER)
    assert RESULT_HEADER == "mechanism,k,epsilon,delta,trial,seed,linf,ratio_to_bound,stage_trace_json,wall_ms".split(",")
    assert SUMMARY_HEADER == "mechanism,k,epsilon,delta,trials,mean_linf,median_linf,p95_linf,mean_ratio,fail_freq".split(",")
    assert text.splitlines()[1].split(",")[8] == "[]"


def test_gaussian_cell_matches_oracle():
    # mean l_inf / bound for the Gaussian baseline at k = 2^10, against quadrature
    k, delta = 1024, 2.0**-20
    oracle = gaussian_sigma(k, 1.0, delta) * expected_gaussian_max(k) / bound(k, 1.0, delta)
    (s,) = run_sweep([("gaussian", k, 1.0, delta)], 1000, 11)
    assert abs(s.mean_ratio / oracle - 1) <= 0.03


def test_gaussian_p99_target():
    k, delta = 64, 1e-5
    ratios = []
    for t in range(4000):
        r = run_trial("gaussian", make_workload("zeros", k), (1.0, delta), t)
        ratios.append(r.ratio)
    assert abs(np.mean(np.array(ratios) > gaussian_p99_ratio(k, 1.0, delta)) - 0.01) <= 0.006


def test_sv_calibration_reports():
    (r,) = sv_calibration([256], BUDGET, get_constants("practical"), trials=2)
    assert r.k == 256 and len(r.counts) == 2
    assert r.c2_empirical >= 0 and r.min_alpha_mult >= 0
