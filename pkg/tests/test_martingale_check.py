import csv
import io
import json
import math

import numpy as np
import pytest

from asymtail.martingale_check import (G, G_hat, G_tilde, GridSpec, compare_variants, drift_grid,
                                       drift_sub, drift_super, expected_G, expected_G_mc,
                                       make_params, verify_proposition)
from asymtail.solvers import LVariant, solve_boundary
from asymtail.tail_models import builtin_models, drifted

MODELS = builtin_models()


@pytest.fixture(scope="module")
def pareto():
    inc = drifted(MODELS["Pareto"], 0.05)
    return inc, make_params(inc), make_params(inc, sign=+1)


def test_G_examples(pareto):
    _, p, _ = pareto
    assert G(p, -5.0) == 1.0
    assert G(p, 0.0) == 1.0 and G(p, 1e-300) == pytest.approx(1.0)
    x = np.linspace(1e-3, 50.0, 200)
    assert np.all(np.diff(G(p, x)) < 0)
    assert p.rate == pytest.approx(p.theta - p.c_a)


def test_G_hat_examples(pareto):
    inc, p, _ = pareto
    m = inc.model
    assert G_hat(p, p.cutoff * (1 - 1e-12), 0.9, m) == 0.0
    at = G_hat(p, p.cutoff, 0.9, m)
    assert at == pytest.approx(m.integrated_tail(p.cutoff) / (p.a * 0.9), rel=1e-12)
    x = p.cutoff * np.geomspace(1.0, 1e6, 100)
    v = G_hat(p, x, 0.9, m)
    assert np.all(np.diff(v) <= 0) and v[-1] < 1e-12 * v[0]


def test_G_tilde_examples(pareto):
    _, _, q = pareto
    assert G_tilde(q, -1.0) == pytest.approx(math.e ** q.alpha)
    assert G_tilde(q, 3.0) == pytest.approx(math.exp(-(q.theta + q.c_a) * 3.0), rel=1e-15)
    q0 = type(q)(q.a, q.theta, q.c, q.delta, q.eps, 1e-300, q.L, q.x_a, q.c_a)
    assert G_tilde(q0, -2.0) == G(q, -2.0) == 1.0


def test_pointwise_sanity(pareto):
    inc, p, q = pareto
    x = np.linspace(-20.0, 5.0 * p.x_a, 5000)
    g, gt = G(p, x), G_tilde(q, x)
    lo, hi = G_hat(p, x, 1 - p.eps, inc.model), G_hat(p, x, 1 + p.eps, inc.model)
    assert np.all(g >= 0) and np.all(g <= 1)
    assert np.all(gt >= 0) and np.all(gt <= math.exp(q.alpha))
    assert np.all(lo >= hi) and np.all(hi >= 0)


def test_params_validation():
    inc = drifted(MODELS["Pareto"], 0.05)
    for kw in ({"delta": 1.0}, {"eps": 0.6}, {"alpha": 0.0}):
        with pytest.raises(ValueError):
            make_params(inc, **kw)
    p = make_params(inc)
    assert p.cutoff == 0.25 * p.x_a and p.flipped().c == -p.c


def test_drift_needs_positive_t(pareto):
    inc, p, q = pareto
    for t in (0.0, -1.0):
        with pytest.raises(ValueError):
            drift_super(inc, p, t)
        with pytest.raises(ValueError):
            drift_sub(inc, q, t)


def test_expected_G_quadrature_vs_mc_1e7(pareto):
    inc, p, _ = pareto
    t = 5.0
    mean, se = expected_G_mc(inc, p, t, 10 ** 7, np.random.default_rng(11))
    assert abs(expected_G(inc, p, t) - mean) <= 4.0 * se


@pytest.mark.parametrize("name", ["Pareto", "Weibull"])
def test_expected_G_on_random_grid_points(name):
    inc = drifted(MODELS[name], 0.05 if name == "Pareto" else 0.02)
    p = make_params(inc)
    rng = np.random.default_rng(5)
    n = 10 ** 6
    grid = drift_grid(p)
    # the 4 SE rule needs the jumps past t to show up in the sample at all
    usable = grid[np.array([n * float(inc.tail(t)) >= 100.0 for t in grid])]
    for t in rng.choice(usable, 10, replace=False):
        mean, se = expected_G_mc(inc, p, float(t), n, rng)
        assert abs(expected_G(inc, p, float(t)) - mean) <= 4.0 * se


def _drift_mc(inc, p, t, n, rng, sub):
    # the whole drift, jump part included, straight from the definitions
    y = inc.model.sample(n, rng) - inc.a
    m = inc.model
    if sub:
        head = G_tilde(p, t - y) - G_tilde(p, t)
        fac = 1 + p.eps
    else:
        head = G(p, t - y) - G(p, t)
        fac = 1 - p.eps
    v = head
    if t >= p.cutoff:
        v = v + p.L * (G_hat(p, t - y, fac, m) - G_hat(p, t, fac, m))
    return v.mean(), v.std(ddof=1) / math.sqrt(n)


@pytest.mark.parametrize("t_factor", [0.3, 1.0, 1.5, 3.0])
def test_drifts_against_mc(pareto, t_factor):
    inc, p, q = pareto
    t = t_factor * p.cutoff
    rng = np.random.default_rng(int(100 * t_factor))
    m, se = _drift_mc(inc, p, t, 10 ** 6, rng, sub=False)
    assert abs(drift_super(inc, p, t) - m) <= 4.0 * se
    m, se = _drift_mc(inc, q, t, 10 ** 6, rng, sub=True)
    assert abs(drift_sub(inc, q, t) - m) <= 4.0 * se


def test_alpha_raises_sub_drift_near_zero(pareto):
    inc, _, _ = pareto
    vals = [drift_sub(inc, make_params(inc, alpha=al, sign=+1), 0.5) for al in (0.5, 1.0, 2.0)]
    assert vals[0] < vals[1] < vals[2]


def test_grid_layout(pareto):
    _, p, _ = pareto
    t = drift_grid(p)
    assert t[0] == pytest.approx(1e-3 / p.theta) and t[-1] == pytest.approx(3.0 * p.x_a)
    assert np.all(np.diff(t) > 0) and np.all(t > 0)
    for k in (1.0 / (p.theta - p.c_a), 1.0 / p.a, p.cutoff, p.x_a):
        if t[0] <= k <= t[-1]:
            assert np.any(t == k)
    assert len(drift_grid(p, GridSpec(points=50))) < len(t)


@pytest.fixture(scope="module")
def pareto_report():
    inc = drifted(MODELS["Pareto"], 0.05)
    return verify_proposition(inc, grid_spec=GridSpec(points=120))


def test_report_pass_flag_matches_drifts(pareto_report):
    r = pareto_report
    ok = all(s <= r.slack for s in r.super_margin) and all(s >= -r.slack for s in r.sub_margin)
    assert r.passed == ok
    if not ok:
        t, which, val = r.first_violation
        assert t in r.t_grid and which in ("super", "sub")
    drifts = np.array(r.super_drift) / np.exp(r.log_scale)
    assert np.allclose(drifts, r.super_margin, rtol=1e-12)


def test_report_serialisation(pareto_report):
    r = pareto_report
    d = json.loads(r.to_json())
    assert d["t_grid"] == r.t_grid and d["delta"] == r.delta and d["variant"] == r.variant
    rows = list(csv.reader(io.StringIO(r.to_csv())))
    assert rows[0][:3] == ["t", "super_drift", "sub_drift"]
    assert len(rows) == len(r.t_grid) + 1
    assert float(rows[5][0]) == r.t_grid[4]


def test_pareto_005_passes(pareto_report):
    assert pareto_report.passed


def test_compare_variants_records_both():
    inc = drifted(MODELS["Pareto"], 0.05)
    reports, best = compare_variants(inc, grid_spec=GridSpec(points=40))
    assert set(reports) == set(LVariant) and best in reports
    # L = 1 for Pareto, so the two runs coincide
    a, b = reports.values()
    assert a.super_margin == b.super_margin
