import json
import math

import numpy as np
import pytest
from scipy import optimize, stats

from asymtail.asymptotics import approx_max_tail
from asymtail.simulate import (CSV_HEADER, RegimeError, SimulationError, StopRule,
                               clopper_pearson, estimate_tail_prob, estimate_tail_prob_tilted,
                               likelihood_ratio_mean, log_escape_bound, simulate_max,
                               simulate_maxima, skip_free_maxima, stop_barrier)
from asymtail.solvers import solve_boundary
from asymtail.tail_models import builtin_models, drifted

MODELS = builtin_models()


@pytest.fixture(scope="module")
def pareto():
    return drifted(MODELS["Pareto"], 0.05)


def level_for(inc, p):
    return optimize.brentq(lambda x: approx_max_tail(inc, x).log_total - math.log(p), 1.0, 1e4)


def test_bit_identical_across_workers(pareto):
    xs = [2.0, 5.0, 10.0]
    runs = [estimate_tail_prob(pareto, xs, 20_000, 99, workers=w) for w in (1, 3, 4)]
    for r in runs[1:]:
        assert [e.p_hat for e in r] == [e.p_hat for e in runs[0]]
        assert [e.steps for e in r] == [e.steps for e in runs[0]]
    B = runs[0][0].stop_barrier
    m1, _ = simulate_maxima(pareto, StopRule(B), 5, 5000, workers=1)
    m4, _ = simulate_maxima(pareto, StopRule(B), 5, 5000, workers=4)
    assert np.array_equal(m1, m4)


def test_replication_streams_are_addressable(pareto):
    B, _ = stop_barrier(pareto, 1e-6)
    m, _ = simulate_maxima(pareto, StopRule(B), 17, 50)
    assert simulate_max(pareto, StopRule(B), (17, 31)) == m[31]
    block, _ = simulate_maxima(pareto, StopRule(B), 17, 10, first=40)
    assert np.array_equal(block, m[40:])


def test_maxima_nonnegative(pareto):
    B, _ = stop_barrier(pareto, 1e-6)
    m, steps = simulate_maxima(pareto, StopRule(B), 3, 10_000)
    assert np.all(m >= 0) and np.all(steps >= 1)


def test_common_random_numbers_monotone(pareto):
    xs = np.linspace(0.1, 30.0, 60)
    est = estimate_tail_prob(pareto, xs, 20_000, 4)
    p = [e.p_hat for e in est]
    assert all(b <= a for a, b in zip(p, p[1:]))


def test_exceedance_at_zero(pareto):
    below = estimate_tail_prob(pareto, -1e-12, 5000, 8)
    assert below.p_hat == 1.0
    at = estimate_tail_prob(pareto, 0.0, 5000, 8)
    assert 0.0 < at.p_hat < 1.0


def test_estimate_fields(pareto):
    e = estimate_tail_prob(pareto, 5.0, 10_000, 12)
    assert e.ci_low <= e.p_hat <= e.ci_high
    assert (e.ci_low, e.ci_high) == clopper_pearson(e.hits, e.n)
    assert e.truncation_bias_bound <= 0.01 * max(e.p_hat, 1.0 / e.n)
    d = json.loads(e.to_json())
    assert d["p_hat"] == e.p_hat and d["seed"] == 12
    assert dict(zip(CSV_HEADER, e.csv_row()))["p_hat"] == e.p_hat


def test_bias_bound_enforced_when_estimate_is_far_below_formula():
    # formula overestimates Weibull at a = 0.3 for small x, forcing the rerun
    inc = drifted(MODELS["Weibull"], 0.3)
    e = estimate_tail_prob(inc, 5.0, 20_000, 1)
    assert e.truncation_bias_bound <= 0.01 * max(e.p_hat, 1.0 / e.n)


def test_small_n_rejected(pareto):
    with pytest.raises(ValueError):
        estimate_tail_prob(pareto, 1.0, 999, 1)


def test_step_budget(pareto):
    with pytest.raises(SimulationError):
        simulate_maxima(pareto, StopRule(1e6, max_steps=100), 1, 10)


def test_clopper_pearson_edges():
    assert clopper_pearson(0, 10)[0] == 0.0
    assert clopper_pearson(10, 10)[1] == 1.0
    lo, hi = clopper_pearson(30, 100)
    ref = stats.binomtest(30, 100).proportion_ci(0.95, method="exact")
    assert lo == pytest.approx(ref.low, rel=1e-12) and hi == pytest.approx(ref.high, rel=1e-12)


def test_gamblers_ruin_oracle():
    prob, n = 0.4, 10 ** 6
    m = skip_free_maxima(prob, n, 2024)
    assert np.all(m == np.floor(m)) and m.min() == 0
    # Bonferroni over the eight levels keeps the family-wise level at 95%
    level = 1.0 - 0.05 / 8
    for k in range(1, 9):
        hits = int(np.count_nonzero(m >= k))
        lo, hi = clopper_pearson(hits, n, level)
        assert lo <= (prob / (1 - prob)) ** k <= hi


def test_skip_free_deterministic_across_workers():
    assert np.array_equal(skip_free_maxima(0.3, 5000, 1), skip_free_maxima(0.3, 5000, 1, workers=3))


@pytest.mark.parametrize("name", ["Pareto", "Weibull"])
def test_escape_bound_monotone(name):
    inc = drifted(MODELS[name], 0.02)
    Bs = np.geomspace(1.0, 1e5, 60)
    vals = [log_escape_bound(inc, B) for B in Bs]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    prev = 0.0
    for eps in (1e-3, 1e-6, 1e-9):
        B, bound = stop_barrier(inc, eps)
        assert B > prev and bound <= eps
        assert bound == pytest.approx(eps, rel=1e-6)
        prev = B


def test_likelihood_ratio_has_mean_one(pareto):
    mean, se, positive = likelihood_ratio_mean(pareto, 40, 200_000, 3)
    assert positive
    assert abs(mean - 1.0) <= 4.0 * se


def test_tilted_matches_crude_near_1e3():
    inc = drifted(MODELS["Pareto"], 0.05)
    x = level_for(inc, 1e-3)
    crude = estimate_tail_prob(inc, x, 400_000, 21)
    tilt = estimate_tail_prob_tilted(inc, x, 50_000, 22)
    se = math.hypot(crude.std_error, tilt.std_error)
    assert abs(crude.p_hat - tilt.p_hat) <= 3.0 * se


def test_tilted_effective_near_1e5():
    # at this level a crude run of the same size sees a handful of hits; its
    # Clopper-Pearson width follows from p and n, so it is computed, not run
    inc = drifted(MODELS["Pareto"], 0.01)
    x = level_for(inc, 1e-5)
    assert x < solve_boundary(inc).x_a
    n = 20_000
    tilt = estimate_tail_prob_tilted(inc, x, n, 32)
    p = tilt.p_hat
    lo, hi = clopper_pearson(round(n * p), n) if n * p >= 1 else (0.0, 3.0 / n)
    crude_rel = 0.5 * (hi - lo) / p
    assert tilt.half_width / p <= 0.2 * crude_rel
    assert tilt.ci_low <= 1.5 * approx_max_tail(inc, x).total


def test_tilted_is_deterministic_across_workers(pareto):
    a = estimate_tail_prob_tilted(pareto, 10.0, 4000, 5, workers=1)
    b = estimate_tail_prob_tilted(pareto, 10.0, 4000, 5, workers=3)
    assert a.p_hat == b.p_hat and a.ci_low == b.ci_low


def test_tilted_refusals():
    inc = drifted(MODELS["Pareto"], 0.05)
    x_a = solve_boundary(inc).x_a
    with pytest.raises(RegimeError):
        estimate_tail_prob_tilted(inc, 1.5 * x_a, 1000, 1)
    with pytest.raises(RegimeError):
        estimate_tail_prob_tilted(inc, 50.0 * x_a, 1000, 1)
    # heavy-traffic level where jumps above 1/a carry the probability
    w = drifted(MODELS["Weibull"], 0.02)
    with pytest.raises(RegimeError):
        estimate_tail_prob_tilted(w, 20.0 * math.log(10) / 0.04, 1000, 1)
