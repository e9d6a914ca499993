import math

import numpy as np
import pytest
from scipy import special, stats

from asymtail.tail_models import (Family, ModelError, TailClass, builtin_models, drifted,
                                  gamma_star_check, integrated_tail, make_model,
                                  model_from_dict, model_to_dict, sample, tail)

MODELS = builtin_models()


def test_class_labels():
    w = make_model("Weibull", gamma=0.5)
    assert w.gamma_star == 0.5 and w.tail_class is TailClass.FAST_GROWTH
    assert make_model("Pareto", r=4).tail_class is TailClass.SLOW_GROWTH
    ln = make_model("LognormalType", r=1, beta=2)
    assert ln.tail_class is TailClass.SLOW_GROWTH and ln.gamma_star == 0.0


@pytest.mark.parametrize("name", MODELS)
def test_tail_limits_and_monotone(name):
    m = MODELS[name]
    assert tail(m, -1e6) == 1.0
    x = np.sort(np.random.default_rng(1).uniform(-2.0, 200.0, 500))
    t = tail(m, x)
    assert np.all((t >= 0) & (t <= 1))
    assert np.all(np.diff(t) <= 0)


def test_weibull_tail_is_exact():
    m = MODELS["Weibull"]
    w = np.array([0.5, 3.0, 50.0, 900.0])
    assert np.allclose(tail(m, w - m.mean_shift), np.exp(-np.sqrt(w)), rtol=1e-14, atol=0)


@pytest.mark.parametrize("name", MODELS)
def test_integrated_tail_derivative(name):
    m = MODELS[name]
    for x in (0.5, 3.0, 20.0, 150.0):
        h = 1e-4 / float(m.dg(x))     # step on the local length scale
        d = (integrated_tail(m, x + h) - integrated_tail(m, x - h)) / (2 * h)
        assert abs(-d / tail(m, x) - 1.0) <= 1e-6


def test_weibull_integrated_tail_asymptotics():
    m = MODELS["Weibull"]
    for w, tol in ((1e3, 0.05), (1e4, 0.01)):
        x = w - m.mean_shift
        ratio = 0.5 * integrated_tail(m, x) / (w ** 0.5 * tail(m, x))
        # the ratio is exactly 1 + w^{-1/2}, which sits on the 1% bound at 1e4
        assert abs(ratio - (1.0 + w ** -0.5)) <= 1e-12
        assert abs(ratio - 1.0) <= tol + 1e-12


def test_pareto_integrated_tail_closed_form():
    m = MODELS["Pareto"]
    for w in (1.5, 10.0, 1e3, 1e6):
        exact = w ** -3.0 / 3.0
        assert abs(integrated_tail(m, w - m.mean_shift) / exact - 1.0) <= 1e-10


def test_integrated_tail_below_support_is_mean_gap():
    m = MODELS["Weibull"]
    # W >= 0, so int_w^inf P(W > u) du = E[W] - w for w <= 0
    assert abs(integrated_tail(m, -m.mean_shift - 1.0) - (m.mean_shift + 1.0)) <= 1e-12


def test_weibull_moments_closed_form():
    m = MODELS["Weibull"]
    assert abs(m.mean_shift - 2.0) <= 1e-14
    assert abs(m.sigma2 - 20.0) <= 1e-12
    k3 = special.gamma(7.0) - 3 * 2.0 * special.gamma(5.0) + 2 * 2.0 ** 3
    assert abs(m.central_moment(3) / k3 - 1.0) <= 1e-9


@pytest.mark.parametrize("name", MODELS)
def test_central_moments_by_quadrature(name):
    m = MODELS[name]
    assert abs(m.central_moment(1)) <= 1e-10 * m.sigma
    assert abs(m.central_moment(2) / m.sigma2 - 1.0) <= 1e-9


def test_regvarying_moments_against_direct_integral():
    # independent route: integrate w^k times the density in w
    m = MODELS["RegVarying"]
    from scipy import integrate
    dens = lambda w: math.exp(m.log_density(w - m.mean_shift))
    mean = integrate.quad(lambda w: w * dens(w), 1.0, np.inf, limit=400, epsabs=0, epsrel=1e-12)[0]
    sq = integrate.quad(lambda w: w * w * dens(w), 1.0, np.inf, limit=400, epsabs=0, epsrel=1e-12)[0]
    assert abs(mean / m.mean_shift - 1.0) <= 1e-8
    assert abs((sq - mean ** 2) / m.sigma2 - 1.0) <= 1e-7


@pytest.mark.slow
@pytest.mark.parametrize("name", MODELS)
def test_sampling_moments_and_tail(name):
    m = MODELS[name]
    n = 10 ** 7
    x = sample(m, n, np.random.default_rng(7))
    assert abs(x.mean()) <= 4.0 * m.sigma / math.sqrt(n)
    assert abs(x.var() / m.sigma2 - 1.0) <= 0.05
    # level with survival 1e-3: g(w) = ln 1000
    level = float(m.quantile_exp(math.log(1000.0)))
    k = int(np.count_nonzero(x > level))
    lo, hi = stats.binomtest(k, n).proportion_ci(0.95, method="exact")
    assert lo <= 1e-3 <= hi


@pytest.mark.parametrize("name", MODELS)
def test_sampling_ks(name):
    m = MODELS[name]
    x = sample(m, 20000, np.random.default_rng(3))
    res = stats.kstest(x, lambda v: 1.0 - tail(m, v))
    assert res.pvalue > 1e-3


def test_gamma_star_weibull():
    assert gamma_star_check(MODELS["Weibull"], 0.01).passed


def test_gamma_star_pareto():
    for d in (0.05, 0.3, 0.9):
        assert gamma_star_check(MODELS["Pareto"], d).passed


def test_gamma_star_semiexp_on_stated_grid():
    grid = np.geomspace(1e2, 1e8, 400)
    assert gamma_star_check(MODELS["Semiexp"], 0.05, grid).passed


def test_gamma_star_semiexp_matches_direct_evaluation():
    m = MODELS["Semiexp"]
    grid = np.geomspace(1e2, 1e8, 400)
    w = grid + m.mean_shift
    upper = np.diff(w ** 0.5 * np.log(w) / grid ** 0.55)
    lower = np.diff(w ** 0.5 * np.log(w) / grid ** 0.45)
    direct = bool(np.all(upper < 0) and np.all(lower > 0))
    assert gamma_star_check(m, 0.05, grid).passed == direct
    # past w = e^20 the ln factor no longer beats x^{-0.05}
    assert gamma_star_check(m, 0.05, np.geomspace(1e9, 1e14, 400)).passed


def test_round_trip_dict():
    for m in MODELS.values():
        assert model_from_dict(model_to_dict(m)) == m


@pytest.mark.parametrize("fam,params", [
    ("Pareto", {"r": 2.0}),
    ("Weibull", {"gamma": 1.2}),
    ("LognormalType", {"r": 1.0, "beta": 0.5}),
    ("RegVarying", {"r": 4.0, "p": 5.0}),
    ("Semiexp", {"gamma": 0.5, "L1": "sqrt"}),
    ("Pareto", {"r": 4.0, "gamma": 0.5}),
    ("CustomG", {"breakpoints": [1.0, 5.0], "exponents": [0.8, 1.5], "coefficients": [1, 1]}),
])
def test_invalid_parameters(fam, params):
    with pytest.raises(ModelError):
        make_model(fam, params)


def test_unknown_family():
    with pytest.raises((ModelError, ValueError)):
        make_model("Cauchy", {})


def test_custom_g_is_continuous_at_breakpoints():
    m = make_model("CustomG", breakpoints=[1.0, 10.0], exponents=[0.9, 0.5],
                   coefficients=[1.0, 10.0 ** 0.4])
    for w in (1.0, 10.0):
        x = w - m.mean_shift
        assert abs(m.g(x - 1e-9) - m.g(x + 1e-9)) <= 1e-7
    assert m.family is Family.CUSTOM_G and m.gamma_star == 0.5


def test_drifted_increment():
    m = MODELS["Pareto"]
    inc = drifted(m, 0.1)
    assert inc.jump_level == 10.0
    assert abs(inc.y_min - (m.support_min - 0.1)) <= 1e-15
    assert inc.tail(3.0) == tail(m, 3.1)
    with pytest.raises(ModelError):
        drifted(m, 0.0)
