"""Two-term approximation of P(M > x) and the family-specific transition points.

    P(M > x) ~ exp(-theta_a x) + (L / a) * Fbar_I(x)

All terms are carried in logs as well, because at x of the order of x(a)
the probabilities routinely fall below the smallest double.
"""
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import optimize

from .quadrature import clustered_edges, integrate_segments
from .solvers import (BoundaryError, DEFAULT_VARIANT, LVariant, compute_L,
                      solve_boundary, solve_theta)
from .tail_models import Family, TailClass


class Regime(str, Enum):
    EXP_DOMINANT = "ExpDominant"
    TAIL_DOMINANT = "TailDominant"
    MIXED = "Mixed"


@dataclass(frozen=True)
class AsymptoticEstimate:
    x: float
    a: float
    exp_term: float
    tail_term: float
    total: float
    regime: Regime
    L: float
    variant: LVariant
    log_exp_term: float = field(repr=False)
    log_tail_term: float = field(repr=False)

    @property
    def log_total(self):
        return float(np.logaddexp(self.log_exp_term, self.log_tail_term))

    @property
    def log_ratio(self):
        """log(tail_term / exp_term)."""
        return self.log_tail_term - self.log_exp_term


def _L_point(inc, x):
    # without a boundary (the tail term already dominates beyond 1/a) L is
    # taken at x itself
    try:
        return max(x, solve_boundary(inc).x_a)
    except BoundaryError:
        return x


def approx_max_tail(inc, x, variant=DEFAULT_VARIANT, threshold=10.0):
    """Evaluate exp(-theta x) + (L/a) Fbar_I(x) and label the dominant term.

    L is taken at max(x, x(a)): below the boundary the exponential term
    dominates anyway and gamma* g(x)/(theta x) can exceed 1 there.  When
    x(a) does not exist L is taken at x.
    """
    if not x > 0:
        raise ValueError("x must be positive")
    variant = LVariant.parse(variant)
    model = inc.model
    theta = solve_theta(inc).theta
    if model.tail_class is TailClass.SLOW_GROWTH:
        L = 1.0
    else:
        L = compute_L(model, theta, _L_point(inc, x), variant)
    log_exp = -theta * x
    log_tail = math.log(L) + float(model.log_integrated_tail(x)) - math.log(inc.a)
    ratio = log_tail - log_exp
    if ratio >= math.log(threshold):
        regime = Regime.TAIL_DOMINANT
    elif ratio <= -math.log(threshold):
        regime = Regime.EXP_DOMINANT
    else:
        regime = Regime.MIXED
    e, t = math.exp(log_exp), math.exp(log_tail)
    return AsymptoticEstimate(x, inc.a, e, t, e + t, regime, L, variant, log_exp, log_tail)


# ---------------------------------------------------------------------------
# transition points


@dataclass(frozen=True)
class TransitionPoint:
    family: Family
    a: float
    x_star: float
    formula_terms: dict
    numeric_cross: float


def closed_form_transition(inc):
    """(x_star, labelled terms) for the five worked families."""
    model = inc.model
    fam = model.family
    a = inc.a
    s2 = model.sigma2
    prm = model.param
    theta = solve_theta(inc).theta
    la = math.log(1.0 / a)
    if fam is Family.PARETO:
        r = prm["r"]
        t1 = (r - 2.0) * s2 / (2.0 * a) * la
        t2 = (r - 1.0) * s2 / (2.0 * a) * math.log(la)
        return t1 + t2, {"t_P1": t1, "t_P2": t2}
    if fam is Family.REG_VARYING:
        x_rv = s2 * (prm["r"] - 2.0) / (2.0 * a) * la
        return x_rv, {"x_RV": x_rv}
    if fam is Family.LOGNORMAL_TYPE:
        x_ln = prm["r"] / theta * math.log(1.0 / theta) ** prm["beta"]
        return x_ln, {"x_LN": x_ln}
    if fam is Family.WEIBULL:
        gam = prm["gamma"]
        lead = (1.0 / theta) ** (1.0 / (1.0 - gam))
        shift = 2.0 / (theta * (1.0 - gam)) * math.log(math.sqrt(2.0 / (gam * s2)) / theta)
        return lead - shift, {"leading": lead, "log_correction": -shift}
    if fam is Family.SEMIEXP:
        lead = (1.0 / theta) ** (1.0 / (1.0 - prm["gamma"]))
        return lead, {"leading": lead}
    return None, {}


def _log_ratio(inc, x, variant):
    return approx_max_tail(inc, x, variant).log_ratio


def numeric_crossing(inc, variant=DEFAULT_VARIANT):
    """Largest x >= 1/a where exp_term = tail_term (root of the log-ratio)."""
    theta = solve_theta(inc).theta
    model = inc.model
    b = 1.0 / inc.a
    candidates = [b * 2.0 ** k for k in range(0, 200)]
    # the minimiser of theta x - g(x) is where the tail term is weakest
    if model.dg(b) > theta:
        hi = 2.0 * b
        while model.dg(hi) > theta and hi < 1e300:
            hi *= 2.0
        x_min = optimize.brentq(lambda x: model.dg(x) - theta, b, hi, rtol=1e-12)
        candidates = sorted(candidates + [x_min])
    prev = None
    seen_negative = False
    for x in candidates:
        if x > 1e300:
            break
        val = _log_ratio(inc, x, variant)
        if val < 0:
            seen_negative = True
            prev = x
        elif seen_negative:
            return optimize.brentq(lambda v: _log_ratio(inc, v, variant), prev, x,
                                   xtol=1e-300, rtol=1e-13)
    raise BoundaryError("no crossing of exp_term and tail_term above 1/a")


def transition_point(inc, variant=DEFAULT_VARIANT):
    x_star, terms = closed_form_transition(inc)
    cross = numeric_crossing(inc, variant)
    if x_star is None:
        x_star = cross
    return TransitionPoint(inc.model.family, inc.a, x_star, terms, cross)


# ---------------------------------------------------------------------------
# regime labels


@dataclass(frozen=True)
class RegimeCase:
    label: str
    expression: str
    coordinate: float


EXP_EXPR = "exp(-theta_a x)"
HT_EXPR = "exp(-2 a x / sigma^2)"
TAIL_EXPR = "Fbar_I(x) / a"


def classify_regime(inc, x, band=0.1, delta=0.1):
    """Piecewise case of the family's asymptotics that applies at (a, x).

    The cases are limits; at finite a a relative band of width
    ``band`` around the transition point is labelled mixed.  ``delta`` is the
    exponent margin of the semiexponential tail-dominant case.
    """
    if not x > 0:
        raise ValueError("x must be positive")
    model = inc.model
    fam = model.family
    exp_expr = HT_EXPR if fam in (Family.PARETO, Family.REG_VARYING,
                                  Family.LOGNORMAL_TYPE) else EXP_EXPR
    mixed_expr = f"{exp_expr} + {TAIL_EXPR}"
    if fam is Family.CUSTOM_G:
        est = approx_max_tail(inc, x)
        label = {Regime.EXP_DOMINANT: "exp-dominant", Regime.TAIL_DOMINANT: "tail-dominant",
                 Regime.MIXED: "mixed"}[est.regime]
        expr = {"exp-dominant": EXP_EXPR, "tail-dominant": "L " + TAIL_EXPR,
                "mixed": f"{EXP_EXPR} + L {TAIL_EXPR}"}[label]
        return RegimeCase(label, expr, est.log_ratio)

    x_star, terms = closed_form_transition(inc)
    if fam is Family.PARETO:
        z = (x - terms["t_P1"]) / terms["t_P2"]
    else:
        z = x / x_star

    if fam is Family.SEMIEXP:
        theta = solve_theta(inc).theta
        gam = model.param["gamma"]
        upper = (1.0 / theta) ** (delta + 1.0 / (1.0 - gam))
        if x >= upper:
            return RegimeCase("tail-dominant", TAIL_EXPR, z)
        if z <= 1.0 + band:
            return RegimeCase("exp-dominant", EXP_EXPR, z)
        return RegimeCase("mixed", mixed_expr, z)

    if z < 1.0 - band:
        return RegimeCase("exp-dominant", exp_expr, z)
    if z > 1.0 + band:
        return RegimeCase("tail-dominant", TAIL_EXPR, z)
    if fam is Family.LOGNORMAL_TYPE:
        # at x = x_LN the tail term wins for beta < 2 and loses for beta >= 2
        if model.param["beta"] < 2.0:
            return RegimeCase("tail-dominant", TAIL_EXPR, z)
        return RegimeCase("exp-dominant", exp_expr, z)
    return RegimeCase("mixed", mixed_expr, z)


# ---------------------------------------------------------------------------
# Weibull: five-case refinement around x(a)


@dataclass(frozen=True)
class PiecewiseCase:
    case: str
    coefficient: float
    base: str          # "exp": multiplies exp(-theta x); "tail": multiplies Fbar_I(x)/a

    def value(self, inc, x):
        if self.base == "exp":
            return self.coefficient * math.exp(-solve_theta(inc).theta * x)
        return self.coefficient * float(inc.model.integrated_tail(x)) / inc.a


def weibull_piecewise(inc, x, K, variant=DEFAULT_VARIANT, match_tol=1e-6,
                      far_left=10.0, far_right=10.0):
    """Which of the five Weibull cases applies at x for offset K >= 0.

    x = x(a) -/+ K/theta is recognised to within ``match_tol`` (in units of
    1/theta).  Otherwise x <= x(a) - far_left/theta counts as far below the
    boundary and x >= far_right * x(a) as far above it.
    """
    model = inc.model
    if model.family is not Family.WEIBULL:
        raise ValueError("weibull_piecewise needs a Weibull model")
    if K < 0:
        raise ValueError("K must be non-negative")
    gam = model.param["gamma"]
    theta = solve_theta(inc).theta
    x_a = solve_boundary(inc).x_a
    k = theta * (x - x_a)
    tol = match_tol * max(1.0, K)
    if K == 0 and abs(k) <= tol:
        return PiecewiseCase("x = x(a)", 1.0 + 1.0 / (1.0 - gam), "exp")
    if K > 0 and abs(k + K) <= tol:
        return PiecewiseCase("x = x(a) - K/theta", 1.0 + math.exp(-K * (1 - gam)) / (1 - gam), "exp")
    if K > 0 and abs(k - K) <= tol:
        return PiecewiseCase("x = x(a) + K/theta", math.exp(-K * (1 - gam)) + 1.0 / (1 - gam), "tail")
    if x >= far_right * x_a:
        return PiecewiseCase("x >> x(a)", 1.0, "tail")
    if k <= -far_left:
        return PiecewiseCase("x << x(a) - 1/theta", 1.0, "exp")
    L = compute_L(model, theta, max(x, x_a), variant)
    return PiecewiseCase("x >> x(a) - 1/theta, x not >> x(a)", L, "tail")


# ---------------------------------------------------------------------------
# Blanchet-Lam style expression


def blanchet_lam(inc, x, log=False):
    """exp(-theta x) + [Fbar_I(x)/a + int_{1/a}^x (1/a + 2(x-y)) e^{-theta(x-y)} Fbar(y) dy] 1{x >= 1/a}.

    The Stieltjes integral against dF_I is taken with the sign that makes the
    bracket non-negative.  With ``log=True`` the natural log is returned.
    """
    theta = solve_theta(inc).theta
    a = inc.a
    b = 1.0 / a
    model = inc.model
    log_exp = -theta * x
    if x < b:
        return log_exp if log else math.exp(log_exp)
    log_itail = float(model.log_integrated_tail(x)) - math.log(a)
    scale = log_itail

    def f(y):
        return math.exp(math.log(1.0 / a + 2.0 * (x - y)) - theta * (x - y)
                        - float(model.g(y)) - scale)

    feature = [1.0 / theta, 1.0 / max(float(model.dg(x)), 1e-300), 1.0]
    edges = clustered_edges(b, x, feature)
    integral, _ = integrate_segments(f, edges, rel_tol=1e-10)
    log_bracket = scale + math.log1p(integral)
    out = float(np.logaddexp(log_exp, log_bracket))
    return out if log else math.exp(out)
