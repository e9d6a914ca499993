"""Increment laws with tails of the form exp(-g(x)).

A model is built from a non-negative variable W whose survival function is
exactly exp(-g_W(w)) on its whole support; the centred increment is
X = W - E[W].  Everything public here is expressed in X-coordinates unless a
name says otherwise.
"""
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import special

from . import _kernels as K
from .quadrature import integrate_adaptive, log_upper_gamma


class Family(str, Enum):
    PARETO = "Pareto"
    REG_VARYING = "RegVarying"
    LOGNORMAL_TYPE = "LognormalType"
    WEIBULL = "Weibull"
    SEMIEXP = "Semiexp"
    CUSTOM_G = "CustomG"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).replace("_", "").replace("-", "").lower()
        for fam in cls:
            if fam.value.lower() == key or fam.name.replace("_", "").lower() == key:
                return fam
        raise ValueError(f"unknown family {name!r}")


class TailClass(str, Enum):
    SLOW_GROWTH = "SlowGrowth"
    FAST_GROWTH = "FastGrowth"


_CODES = {
    Family.PARETO: K.PARETO,
    Family.REG_VARYING: K.REG_VARYING,
    Family.LOGNORMAL_TYPE: K.LOGNORMAL_TYPE,
    Family.WEIBULL: K.WEIBULL,
    Family.SEMIEXP: K.SEMIEXP,
    Family.CUSTOM_G: K.CUSTOM_G,
}

_L1_CODES = {"1": K.L1_ONE, "ln": K.L1_LN, "ln^p": K.L1_LN_POW, "lnln": K.L1_LNLN}


class ModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TailModel:
    family: Family
    params: tuple
    match_point: float
    mean_shift: float
    sigma2: float
    gamma_star: float
    tail_class: TailClass
    moment_order: float
    code: int = field(repr=False)
    p: np.ndarray = field(repr=False)

    def _key(self):
        return (self.family, self.params, self.match_point)

    def __eq__(self, other):
        return isinstance(other, TailModel) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    @property
    def param(self):
        return dict(self.params)

    @property
    def sigma(self):
        return math.sqrt(self.sigma2)

    @property
    def w_min(self):
        return K.support_start(self.code, self.p)

    @property
    def support_min(self):
        """Smallest value X can take."""
        return self.w_min - self.mean_shift

    # --- g and friends, X-coordinates ---------------------------------

    def g(self, x):
        return _vectorised(x, lambda v: K.g_scalar(self.code, self.p, v + self.mean_shift),
                           lambda v: K.g_array(self.code, self.p, v + self.mean_shift))

    def dg(self, x):
        return _vectorised(x, lambda v: K.dg_scalar(self.code, self.p, v + self.mean_shift),
                           lambda v: K.dg_array(self.code, self.p, v + self.mean_shift))

    def log_tail(self, x):
        return -self.g(x)

    def tail(self, x):
        return np.exp(-self.g(x))

    def log_density(self, x):
        return _vectorised(x, self._log_density_scalar, None)

    def _log_density_scalar(self, x):
        w = x + self.mean_shift
        if w < self.w_min:
            return -math.inf
        d = K.dg_scalar(self.code, self.p, w)
        if d <= 0.0:
            return -math.inf
        return math.log(d) - K.g_scalar(self.code, self.p, w)

    def density(self, x):
        return np.exp(self.log_density(x))

    def quantile_exp(self, e):
        """Map Exp(1) values to X: x = g^{-1}(e) - E[W]."""
        return _vectorised(e, lambda v: K.ginv_scalar(self.code, self.p, v),
                           lambda v: K.ginv_array(self.code, self.p, v)) - self.mean_shift

    def log_integrated_tail(self, x):
        return _vectorised(x, self._log_itail_scalar, None)

    def integrated_tail(self, x):
        return np.exp(self.log_integrated_tail(x))

    def _log_itail_scalar(self, x):
        w = float(x) + self.mean_shift
        w0 = self.w_min
        if w <= w0:
            # W >= w0, so the integral of the survival function is E[W] - w
            return math.log(self.mean_shift - w)
        fam = self.family
        if fam is Family.PARETO:
            r = self.p[0]
            return (1.0 - r) * math.log(w) - math.log(r - 1.0)
        if fam is Family.WEIBULL or (fam is Family.SEMIEXP and int(self.p[1]) == K.L1_ONE):
            gam = self.p[0]
            return -math.log(gam) + log_upper_gamma(1.0 / gam, w ** gam)
        return -K.g_scalar(self.code, self.p, w) + math.log(self._hazard_integral(w))

    def _hazard_integral(self, w):
        # exp(g(w)) * int_w^inf exp(-g(v)) dv, written in the exponential
        # coordinate s = g(v) - g(w) so the integrand decays like exp(-s)
        code, p = self.code, self.p
        gw = K.g_scalar(code, p, w)

        def f(s):
            if s > 700.0:
                return 0.0
            v = K.ginv_scalar(code, p, gw + s)
            return math.exp(-s) / K.dg_scalar(code, p, v)

        points = None
        if self.family is Family.CUSTOM_G:
            nseg = int(p[2])
            knots = [p[3 + 2 * nseg + i] * p[3 + i] ** p[3 + nseg + i] - gw
                     for i in range(1, nseg)]
            points = [k for k in knots if k > 0]
        if points:
            edges = [0.0] + sorted(points) + [math.inf]
            total = 0.0
            for lo, hi in zip(edges[:-1], edges[1:]):
                total += integrate_adaptive(f, lo, hi, abs_tol=0.0, rel_tol=1e-13).value
            return total
        return integrate_adaptive(f, 0.0, math.inf, abs_tol=0.0, rel_tol=1e-13).value

    # --- moments ---------------------------------------------------------

    def central_moment(self, k):
        """E[X^k] by quadrature in the exponential coordinate."""
        if k >= self.moment_order:
            raise ModelError(f"moment of order {k} is not finite for this model")
        f = _moment_integrand(self.code, self.p, self.mean_shift, k)
        scale = self.sigma2 ** (k / 2.0)
        return integrate_adaptive(f, 0.0, math.inf, abs_tol=1e-13 * scale,
                                  rel_tol=1e-12).value

    def sample(self, count, rng):
        e = rng.standard_exponential(count)
        return K.ginv_array(self.code, self.p, e) - self.mean_shift


def _vectorised(x, scalar_fn, array_fn):
    if np.ndim(x) == 0:
        return scalar_fn(float(x))
    arr = np.asarray(x, dtype=float)
    if array_fn is not None:
        return array_fn(arr.ravel()).reshape(arr.shape)
    return np.array([scalar_fn(v) for v in arr.ravel()]).reshape(arr.shape)


# ---------------------------------------------------------------------------
# construction


def _number(params, name, default=None):
    if name not in params:
        if default is None:
            raise ModelError(f"missing parameter {name!r}")
        return default
    val = params[name]
    try:
        val = float(val)
    except (TypeError, ValueError):
        raise ModelError(f"parameter {name!r} must be a number") from None
    if not math.isfinite(val):
        raise ModelError(f"parameter {name!r} must be finite")
    return val


def _check_keys(params, allowed):
    extra = set(params) - set(allowed)
    if extra:
        raise ModelError(f"unexpected parameters {sorted(extra)}")


def make_model(family, params=None, x0=None, **kw):
    """Build a TailModel from a family name and its parameters.

    Pareto(r), RegVarying(r, p), LognormalType(r, beta), Weibull(gamma),
    Semiexp(gamma, L1 in {"1","ln","ln^p","lnln"}, p) and
    CustomG(breakpoints, exponents, coefficients).
    """
    fam = Family.parse(family)
    params = dict(params or {})
    params.update(kw)

    if fam is Family.PARETO:
        _check_keys(params, ["r"])
        r = _number(params, "r")
        if r <= 2:
            raise ModelError("Pareto needs r > 2, otherwise the variance is not finite")
        p = np.array([r])
        stored = (("r", r),)
        gamma_star, cls, order = 0.0, TailClass.SLOW_GROWTH, r
    elif fam is Family.REG_VARYING:
        _check_keys(params, ["r", "p"])
        r = _number(params, "r")
        q = _number(params, "p", 0.0)
        if r <= 2:
            raise ModelError("RegVarying needs r > 2, otherwise the variance is not finite")
        if q >= r:
            raise ModelError("RegVarying needs p < r so that g is increasing")
        p = np.array([r, q])
        stored = (("p", q), ("r", r))
        gamma_star, cls, order = 0.0, TailClass.SLOW_GROWTH, r
    elif fam is Family.LOGNORMAL_TYPE:
        _check_keys(params, ["r", "beta"])
        r = _number(params, "r")
        beta = _number(params, "beta")
        if r <= 0:
            raise ModelError("LognormalType needs r > 0")
        if beta <= 1:
            raise ModelError("LognormalType needs beta > 1")
        p = np.array([r, beta])
        stored = (("beta", beta), ("r", r))
        gamma_star, cls, order = 0.0, TailClass.SLOW_GROWTH, math.inf
    elif fam is Family.WEIBULL:
        _check_keys(params, ["gamma"])
        gam = _number(params, "gamma")
        if not 0 < gam < 1:
            raise ModelError("Weibull needs 0 < gamma < 1")
        p = np.array([gam])
        stored = (("gamma", gam),)
        gamma_star, cls, order = gam, TailClass.FAST_GROWTH, math.inf
    elif fam is Family.SEMIEXP:
        _check_keys(params, ["gamma", "L1", "p"])
        gam = _number(params, "gamma")
        if not 0 < gam < 1:
            raise ModelError("Semiexp needs 0 < gamma < 1")
        l1 = str(params.get("L1", "ln"))
        if l1 not in _L1_CODES:
            raise ModelError(f"L1 must be one of {sorted(_L1_CODES)}")
        q = _number(params, "p", 1.0)
        if l1 == "ln^p" and q <= 0:
            raise ModelError("Semiexp with L1 = ln^p needs p > 0")
        p = np.array([gam, float(_L1_CODES[l1]), q])
        stored = (("L1", l1), ("gamma", gam)) + ((("p", q),) if l1 == "ln^p" else ())
        gamma_star, cls, order = gam, TailClass.FAST_GROWTH, math.inf
    else:
        _check_keys(params, ["breakpoints", "exponents", "coefficients"])
        p, stored, gamma_star = _custom_params(params, x0)
        cls, order = TailClass.FAST_GROWTH, math.inf

    code = _CODES[fam]
    w_min = K.support_start(code, p)
    if x0 is None:
        x0 = p[0] if fam is Family.CUSTOM_G else max(1.0, w_min)
    x0 = float(x0)
    if fam is Family.CUSTOM_G and x0 != p[0]:
        raise ModelError("for CustomG the match point is the first breakpoint")
    if x0 < w_min:
        raise ModelError(f"match point {x0} lies below the support start {w_min}")

    mean, var = _moments(fam, code, p)
    return TailModel(fam, stored, x0, mean, var, gamma_star, cls, order, code, p)


def _custom_params(params, x0):
    try:
        bps = [float(v) for v in params["breakpoints"]]
        exps = [float(v) for v in params["exponents"]]
        coefs = [float(v) for v in params["coefficients"]]
    except KeyError as exc:
        raise ModelError(f"missing parameter {exc.args[0]!r}") from None
    except (TypeError, ValueError):
        raise ModelError("CustomG parameters must be lists of numbers") from None
    n = len(bps)
    if n == 0 or len(exps) != n or len(coefs) != n:
        raise ModelError("breakpoints, exponents and coefficients need equal, non-zero length")
    if bps[0] <= 0 or any(b2 <= b1 for b1, b2 in zip(bps, bps[1:])):
        raise ModelError("breakpoints must be positive and strictly increasing")
    if any(e <= 0 for e in exps) or any(c <= 0 for c in coefs):
        raise ModelError("exponents and coefficients must be positive (g increasing)")
    if exps[-1] >= 1:
        raise ModelError("the last exponent must lie in (0, 1)")
    for i in range(1, n):
        left = coefs[i - 1] * bps[i] ** exps[i - 1]
        right = coefs[i] * bps[i] ** exps[i]
        if abs(left - right) > 1e-9 * max(abs(left), 1.0):
            raise ModelError(f"g is discontinuous at breakpoint {bps[i]}")
    g_x0 = coefs[0] * bps[0] ** exps[0]
    p = np.array([bps[0], g_x0, float(n)] + bps + exps + coefs)
    stored = (("breakpoints", tuple(bps)), ("coefficients", tuple(coefs)),
              ("exponents", tuple(exps)))
    return p, stored, exps[-1]


def _moments(fam, code, p):
    if fam is Family.PARETO:
        r = p[0]
        return r / (r - 1.0), r / ((r - 1.0) ** 2 * (r - 2.0))
    if fam is Family.WEIBULL or (fam is Family.SEMIEXP and int(p[1]) == K.L1_ONE):
        gam = p[0]
        m1 = special.gamma(1.0 + 1.0 / gam)
        m2 = special.gamma(1.0 + 2.0 / gam)
        return m1, m2 - m1 * m1

    mean = integrate_adaptive(_moment_integrand(code, p, 0.0, 1), 0.0, math.inf,
                              abs_tol=0.0, rel_tol=1e-13).value
    var = integrate_adaptive(_moment_integrand(code, p, mean, 2), 0.0, math.inf,
                             abs_tol=0.0, rel_tol=1e-13).value
    return mean, var


def _moment_integrand(code, p, shift, k):
    # (g^{-1}(e) - shift)^k exp(-e), assembled in logs so that very large e
    # (reached by the infinite-range map) gives 0 rather than inf * 0
    def f(e):
        lw = K.log_ginv_scalar(code, p, e)
        if math.isinf(lw):
            return 0.0
        if lw > 50.0:
            return math.exp(k * (lw + math.log1p(-shift * math.exp(-lw))) - e)
        d = math.exp(lw) - shift
        if d == 0.0:
            return 0.0
        return math.copysign(math.exp(k * math.log(abs(d)) - e), d ** k)
    return f


def model_from_dict(spec):
    """Model from the JSON layout {"family": ..., "params": {...}, "x0": ...}."""
    if not isinstance(spec, dict) or "family" not in spec:
        raise ModelError("model spec needs a 'family' field")
    return make_model(spec["family"], spec.get("params", {}), x0=spec.get("x0"))


def model_to_dict(model):
    params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in model.params}
    return {"family": model.family.value, "params": params, "x0": model.match_point}


# the parameter choices used by the examples and checks
def builtin_models():
    return {
        "Pareto": make_model("Pareto", r=4.0),
        "RegVarying": make_model("RegVarying", r=4.0, p=1.0),
        "LognormalType": make_model("LognormalType", r=1.0, beta=2.0),
        "Weibull": make_model("Weibull", gamma=0.5),
        "Semiexp": make_model("Semiexp", gamma=0.5, L1="ln"),
    }


# ---------------------------------------------------------------------------
# the drifted increment X - a


@dataclass(frozen=True)
class DriftedIncrement:
    model: TailModel
    a: float

    def __post_init__(self):
        if not (self.a > 0 and math.isfinite(self.a)):
            raise ModelError("the drift a must be positive")

    @property
    def y_min(self):
        return self.model.support_min - self.a

    @property
    def jump_level(self):
        """Truncation level 1/a used in the definition of theta."""
        return 1.0 / self.a

    def tail(self, y):
        return self.model.tail(np.asarray(y) + self.a)

    def log_tail(self, y):
        return self.model.log_tail(np.asarray(y) + self.a)

    def log_density(self, y):
        return self.model.log_density(np.asarray(y) + self.a)

    def integrated_tail(self, y):
        return self.model.integrated_tail(np.asarray(y) + self.a)

    def log_integrated_tail(self, y):
        return self.model.log_integrated_tail(np.asarray(y) + self.a)


def drifted(model, a):
    return DriftedIncrement(model, float(a))


def tail(model, x):
    return model.tail(x)


def integrated_tail(model, x):
    return model.integrated_tail(x)


def sample(model, count, rng):
    return model.sample(count, rng)


# ---------------------------------------------------------------------------
# growth exponent check


@dataclass(frozen=True)
class GammaCheck:
    passed: bool
    gamma_star: float
    delta: float
    violation: tuple = None    # first grid pair (x_i, x_{i+1}) that breaks monotonicity
    which: str = ""


def default_check_grid(model, delta, points=400):
    u_lo = max(math.log(100.0 * (1.0 + model.mean_shift)), 4.0 / delta)
    u_lo = min(u_lo, 500.0)
    return np.exp(np.linspace(u_lo, u_lo + 14.0, points))


def gamma_star_check(model, delta, grid=None):
    """Check on a grid that g(x)/x^(gamma*+delta) decreases and, for the
    fast-growth class, that g(x)/x^(gamma*-delta) increases."""
    if not 0 < delta < 1:
        raise ModelError("delta must lie in (0, 1)")
    x = default_check_grid(model, delta) if grid is None else np.asarray(grid, dtype=float)
    if np.any(np.diff(x) <= 0) or x[0] <= 0:
        raise ModelError("grid must be positive and strictly increasing")
    gx = model.g(x)
    if np.any(gx <= 0):
        raise ModelError("grid must lie where g is positive")
    lg = np.log(gx)
    lx = np.log(x)
    checks = [("upper", model.gamma_star + delta, -1.0)]
    if model.tail_class is TailClass.FAST_GROWTH:
        checks.append(("lower", model.gamma_star - delta, 1.0))
    for name, power, sign in checks:
        q = lg - power * lx
        step = sign * np.diff(q)
        tol = 1e-12 * np.maximum(1.0, np.abs(q[1:]))
        bad = np.nonzero(step <= -tol)[0]
        if bad.size:
            i = int(bad[0])
            return GammaCheck(False, model.gamma_star, delta, (float(x[i]), float(x[i + 1])), name)
    return GammaCheck(True, model.gamma_star, delta)
