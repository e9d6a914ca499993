"""Test functions of the sandwich martingales and a pointwise drift verifier.

For a state t = x - y > 0 (distance still to climb) the one-step drifts are

    super:  E[G_k(t - Y)] - G_k(t)  +  L (E[Ghat_{1-eps}(t - Y)] - Ghat_{1-eps}(t))
    sub:    E[Gt_l(t - Y)] - Gt_l(t) +  L (E[Ghat_{1+eps}(t - Y)] - Ghat_{1+eps}(t))

with k = theta - c_a, l = theta + c_a and Y = X - a.  The Ghat part only
enters once t >= delta x(a).  Far out in t every term is tiny, so each drift
is computed relative to the scale S(t) = max(a c_a exp(-theta t), Fbar(t))
and only multiplied back at the end.
"""
import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels as K
from .quadrature import clustered_edges, integrate_segments
from .solvers import DEFAULT_VARIANT, LVariant, compute_L, mgf_residual, solve_boundary


@dataclass(frozen=True)
class TestFunctionParams:
    a: float
    theta: float
    c: float            # signed shift of the exponent: -c_a (super) or +c_a (sub)
    delta: float
    eps: float
    alpha: float
    L: float
    x_a: float
    c_a: float

    __test__ = False    # keep pytest from collecting this as a test class

    @property
    def rate(self):
        return self.theta + self.c

    @property
    def cutoff(self):
        return self.delta * self.x_a

    def flipped(self):
        """The same parameters with the sign of c reversed."""
        return TestFunctionParams(self.a, self.theta, -self.c, self.delta, self.eps,
                                  self.alpha, self.L, self.x_a, self.c_a)


def make_params(inc, variant=DEFAULT_VARIANT, delta=0.25, eps=0.1, alpha=1.0, sign=-1):
    """Parameters for the supermartingale (sign=-1) or submartingale (sign=+1)."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if not 0 < eps <= 0.5:
        raise ValueError("eps must lie in (0, 0.5]")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    bp = solve_boundary(inc)
    L = compute_L(inc.model, bp.theta, bp.x_a, variant)
    return TestFunctionParams(inc.a, bp.theta, sign * bp.c_a, delta, eps, alpha, L,
                              bp.x_a, bp.c_a)


# ---------------------------------------------------------------------------
# the three test functions


def G(params, x):
    x = np.asarray(x, dtype=float)
    out = np.where(x <= 0, 1.0, np.exp(-params.rate * np.maximum(x, 0.0)))
    return out if out.ndim else float(out)


def G_tilde(params, x):
    x = np.asarray(x, dtype=float)
    out = np.where(x <= 0, math.exp(params.alpha), np.exp(-params.rate * np.maximum(x, 0.0)))
    return out if out.ndim else float(out)


def G_hat(params, x, factor, model):
    """Fbar_I(x) / (a * factor) beyond delta x(a), zero before it.

    ``factor`` is the literal 1 - eps or 1 + eps.
    """
    x = np.asarray(x, dtype=float)
    on = x >= params.cutoff
    out = np.zeros_like(x)
    if np.any(on):
        out[on] = np.exp(model.log_integrated_tail(x[on])) / (params.a * factor)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# drifts


class _DriftContext:
    """Per-(increment, params) constants shared by all grid points."""

    def __init__(self, inc, params):
        self.inc = inc
        self.p = params
        model = inc.model
        self.model = model
        self.a = inc.a
        self.b = inc.jump_level
        self.y_min = inc.y_min
        self.sigma = model.sigma
        self.kappa = params.theta - params.c_a
        self.lam = params.theta + params.c_a
        self.res_kappa = mgf_residual(inc, self.kappa)
        self.res_lam = mgf_residual(inc, self.lam)
        self.log_ac = math.log(params.a * params.c_a)

    def log_f(self, y):
        return self.model._log_density_scalar(y + self.a)

    def log_tail_y(self, y):
        return -K.g_scalar(self.model.code, self.model.p, y + self.a + self.model.mean_shift)

    def log_tail_x(self, x):
        return -K.g_scalar(self.model.code, self.model.p, x + self.model.mean_shift)

    def log_scale(self, t):
        return max(self.log_ac - self.p.theta * t, self.log_tail_x(t))

    def _scales(self):
        return [1e-3 * self.sigma, self.sigma]

    def exp_part(self, t, rate, residual, ls):
        """E[G_rate(t - Y)] - G_rate(t), divided by exp(ls)."""
        b = self.b
        head = residual * math.exp(-rate * t - ls)
        if t <= b:
            lo = max(t, self.y_min)

            def f(y):
                return math.expm1(rate * (y - t)) * math.exp(self.log_f(y) - ls)

            edges = clustered_edges(lo, b, self._scales() + [1.0 / rate])
            integral, _ = integrate_segments(f, edges, abs_tol=1e-13, rel_tol=1e-11)
            return head - integral + math.exp(self.log_tail_y(b) - ls)

        def f(y):
            return math.exp(-rate * (t - y) + self.log_f(y) - ls)

        edges = clustered_edges(b, t, self._scales() + [1.0 / rate])
        integral, _ = integrate_segments(f, edges, abs_tol=1e-13, rel_tol=1e-11)
        return head + integral + math.exp(self.log_tail_y(t) - ls)

    def jump_part(self, t, ls):
        """a * factor * (E[Ghat(t - Y)] - Ghat(t)) / exp(ls) for t >= delta x(a)."""
        model = self.model
        d = self.p.cutoff
        top = t - d
        lf_t = model._log_itail_scalar(t)
        base = math.exp(lf_t - ls)
        tail_term = base * math.exp(self.log_tail_y(top)) if top > self.y_min else base
        if top <= self.y_min:
            return -tail_term

        def f(y):
            return base * math.expm1(model._log_itail_scalar(t - y) - lf_t) * math.exp(self.log_f(y))

        g1 = model.dg(d) if d > model.support_min else 1.0
        scales = self._scales() + [1.0 / max(g1, 1e-300)]
        edges = clustered_edges(self.y_min, top, scales)
        if self.y_min < 0.0 < top:
            edges = sorted(set(edges) | {0.0})
        integral, _ = integrate_segments(f, edges, abs_tol=1e-13, rel_tol=1e-11)
        return integral - tail_term

    def super_margin(self, t, ls=None):
        if ls is None:
            ls = self.log_scale(t)
        m = self.exp_part(t, self.kappa, self.res_kappa, ls)
        if t >= self.p.cutoff:
            m += self.p.L / (self.a * (1.0 - self.p.eps)) * self.jump_part(t, ls)
        return m

    def sub_margin(self, t, ls=None):
        if ls is None:
            ls = self.log_scale(t)
        m = self.exp_part(t, self.lam, self.res_lam, ls)
        # Gt is e^alpha rather than 1 on the far side of zero
        m += math.expm1(self.p.alpha) * math.exp(self.log_tail_y(t) - ls)
        if t >= self.p.cutoff:
            m += self.p.L / (self.a * (1.0 + self.p.eps)) * self.jump_part(t, ls)
        return m

    def both(self, t):
        """(super, sub) margins sharing the jump part."""
        ls = self.log_scale(t)
        sup = self.exp_part(t, self.kappa, self.res_kappa, ls)
        sub = self.exp_part(t, self.lam, self.res_lam, ls)
        sub += math.expm1(self.p.alpha) * math.exp(self.log_tail_y(t) - ls)
        if t >= self.p.cutoff:
            j = self.p.L / self.a * self.jump_part(t, ls)
            sup += j / (1.0 - self.p.eps)
            sub += j / (1.0 + self.p.eps)
        return sup, sub, ls


def _check_t(t):
    if not t > 0:
        raise ValueError("the drift is only defined for t > 0 (the walk stops at t <= 0)")


def drift_super(inc, params, t):
    _check_t(t)
    ctx = _DriftContext(inc, params)
    ls = ctx.log_scale(t)
    return ctx.super_margin(t, ls) * math.exp(ls)


def drift_sub(inc, params, t):
    _check_t(t)
    ctx = _DriftContext(inc, params)
    ls = ctx.log_scale(t)
    return ctx.sub_margin(t, ls) * math.exp(ls)


def expected_G(inc, params, t):
    """E[G(t - Y)] from the drift quadrature."""
    ctx = _DriftContext(inc, params)
    return ctx.exp_part(t, params.rate, mgf_residual(inc, params.rate), 0.0) + G(params, t)


def expected_G_mc(inc, params, t, n, rng, chunk=1_000_000):
    """Monte Carlo E[G(t - Y)] with its standard error."""
    total = 0.0
    total_sq = 0.0
    left = n
    while left > 0:
        m = min(chunk, left)
        y = inc.model.sample(m, rng) - inc.a
        v = G(params, t - y)
        total += v.sum()
        total_sq += (v * v).sum()
        left -= m
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    return mean, math.sqrt(var / n)


# ---------------------------------------------------------------------------
# grid verification


@dataclass
class DriftReport:
    t_grid: list
    super_drift: list
    sub_drift: list
    super_margin: list
    sub_margin: list
    log_scale: list
    passed: bool
    first_violation: tuple
    light_zone_passed: bool
    light_zone_violation: tuple
    delta: float
    eps: float
    alpha: float
    L: float
    variant: str
    slack: float
    worst_super: float = field(default=math.nan)
    worst_sub: float = field(default=math.nan)

    @property
    def margins(self):
        """Super and sub drifts in units of max(a c_a e^{-theta t}, Fbar(t))."""
        return list(zip(self.super_margin, self.sub_margin))

    def to_json(self):
        return json.dumps(asdict(self), allow_nan=True)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "super_drift", "sub_drift", "super_margin", "sub_margin"])
        for row in zip(self.t_grid, self.super_drift, self.sub_drift,
                       self.super_margin, self.sub_margin):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


@dataclass(frozen=True)
class GridSpec:
    points: int = 400
    lo_factor: float = 1e-3     # grid starts at lo_factor / theta
    hi_factor: float = 3.0      # and ends at hi_factor * x(a)
    knot_C: float = 2.0


def drift_grid(params, spec=GridSpec()):
    lo = spec.lo_factor / params.theta
    hi = spec.hi_factor * params.x_a
    grid = set(np.geomspace(lo, hi, spec.points).tolist())
    kappa = params.theta - params.c_a
    knots = [1.0 / kappa, 1.0 / params.a, params.cutoff,
             params.x_a - spec.knot_C * math.log(1.0 / params.a) / params.theta, params.x_a]
    grid.update(k for k in knots if lo <= k <= hi)
    return np.array(sorted(grid))


def _evaluate(inc, params, spec, slack, light_factor, variant):
    ctx = _DriftContext(inc, params)
    t = drift_grid(params, spec)
    sup = np.empty(t.size)
    sub = np.empty(t.size)
    ls = np.empty(t.size)
    for i, ti in enumerate(t):
        sup[i], sub[i], ls[i] = ctx.both(float(ti))

    first = None
    bad = np.nonzero((sup > slack) | (sub < -slack))[0]
    if bad.size:
        i = int(bad[0])
        which = "super" if sup[i] > slack else "sub"
        first = (float(t[i]), which, float(sup[i] if which == "super" else sub[i]))

    # strengthened bounds where only the exponential part is active
    light_bad = None
    kappa, lam = ctx.kappa, ctx.lam
    for i, ti in enumerate(t):
        if ti <= 1.0 / kappa:
            bound = -light_factor * math.exp(ctx.log_ac - kappa * ti - ls[i])
            if sup[i] > bound:
                light_bad = (float(ti), "super", float(sup[i]), bound)
                break
        if 1.0 / params.a <= ti <= params.cutoff:
            bound = light_factor * math.exp(ctx.log_ac - lam * ti - ls[i])
            if sub[i] < bound:
                light_bad = (float(ti), "sub", float(sub[i]), bound)
                break

    scale = np.exp(ls)
    return DriftReport(
        t_grid=t.tolist(), super_drift=(sup * scale).tolist(), sub_drift=(sub * scale).tolist(),
        super_margin=sup.tolist(), sub_margin=sub.tolist(), log_scale=ls.tolist(),
        passed=first is None, first_violation=first,
        light_zone_passed=light_bad is None, light_zone_violation=light_bad,
        delta=params.delta, eps=params.eps, alpha=params.alpha, L=params.L,
        variant=LVariant.parse(variant).value, slack=slack,
        worst_super=float(sup.max()), worst_sub=float(sub.min()))


def verify_proposition(inc, params=None, grid_spec=GridSpec(), variant=DEFAULT_VARIANT,
                       eps=0.1, alpha=1.0, slack=1e-3, light_factor=0.5):
    """Evaluate both drifts on the grid and report margins.

    With ``params=None`` delta starts at 1/4 and is halved (down to 1/16)
    while the check fails and delta x(a) stays at or beyond 1/a.  The
    returned report carries the delta that was used last.  ``slack`` is
    relative to the scale max(a c_a e^{-theta t}, Fbar(t)).
    """
    if params is not None:
        return _evaluate(inc, params, grid_spec, slack, light_factor, variant)
    report = None
    delta = 0.25
    while delta >= 1.0 / 16.0:
        params = make_params(inc, variant, delta, eps, alpha)
        if report is not None and params.cutoff < 1.0 / inc.a:
            break
        report = _evaluate(inc, params, grid_spec, slack, light_factor, variant)
        if report.passed and report.light_zone_passed:
            break
        delta *= 0.5
    return report


def compare_variants(inc, **kw):
    """Run the verifier for both L variants; returns (reports, better variant)."""
    reports = {v: verify_proposition(inc, variant=v, **kw) for v in LVariant}

    def score(r):
        return min(-r.worst_super, r.worst_sub)

    best = max(reports, key=lambda v: (reports[v].passed, score(reports[v])))
    return reports, best

