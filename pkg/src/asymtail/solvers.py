"""Root finding for the Cramer-type exponent theta_a and the boundary x(a).

theta_a is the positive root of E[exp(theta Y); Y <= 1/a] = 1 with Y = X - a.
The residual is evaluated in a rearranged form (expm1 inside, integration by
parts against the survival function) so that it stays accurate when
theta is tiny and the naive expression cancels to nothing.
"""
import functools
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import optimize

from .quadrature import integrate_adaptive
from .tail_models import TailClass


class ThetaError(RuntimeError):
    pass


class BoundaryError(RuntimeError):
    pass


class LError(ValueError):
    """gamma* g(x)/(theta x) >= 1, where the L factor blows up."""


class LVariant(str, Enum):
    PROOF_SQUARED = "ProofSquared"
    EXAMPLE_FIRST_POWER = "ExampleFirstPower"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        for v in cls:
            if v.value.lower() == str(name).lower() or v.name.lower() == str(name).lower():
                return v
        raise ValueError(f"unknown L variant {name!r}")


DEFAULT_VARIANT = LVariant.EXAMPLE_FIRST_POWER


# ---------------------------------------------------------------------------
# theta_a


def mgf_residual(inc, theta):
    """E[exp(theta Y); Y <= 1/a] - 1, computed without cancellation.

    Integration by parts against the survival function of Y gives
        exp(theta y0) - 1 + int_{y0}^{b} theta e^{theta y} Fbar(y) dy - e^{theta b} Fbar(b),
    which is rearranged with expm1 so that the O(theta) pieces cancel
    analytically (E[Y] = -a is used exactly).
    """
    b = inc.jump_level
    a = inc.a
    y0 = inc.y_min
    model = inc.model

    def f(y):
        return theta * math.expm1(theta * y) * math.exp(-model.g(y + a))

    pts = [p for p in (0.0, model.match_point - model.mean_shift - a) if y0 < p < b]
    integral = integrate_adaptive(f, y0, b, abs_tol=0.0, rel_tol=1e-13,
                                  points=pts or None).value
    phi0 = math.expm1(theta * y0) - theta * y0
    tail_b = math.exp(theta * b - model.g(b + a))
    return phi0 + integral - theta * a - theta * float(inc.integrated_tail(b)) - tail_b


def truncated_mgf(inc, theta):
    return 1.0 + mgf_residual(inc, theta)


@dataclass(frozen=True)
class ThetaSolution:
    a: float
    theta: float
    residual: float
    asymptotic_ref: float          # 2a / sigma^2
    bracket: tuple
    iterations: int
    expansion: tuple = field(default=None)

    @property
    def normalised(self):
        """theta sigma^2 / (2a); tends to 1 as a -> 0."""
        return self.theta / self.asymptotic_ref


def solve_theta(inc, tol=1e-12):
    """Positive root of the truncated moment generating function equation."""
    return _solve_theta_cached(inc, float(tol))


@functools.lru_cache(maxsize=256)
def _solve_theta_cached(inc, tol):
    sigma2 = inc.model.sigma2
    a = inc.a
    ref = 2.0 * a / sigma2

    def r(t):
        return mgf_residual(inc, t)

    lo, hi = 0.5 * ref, 4.0 * ref
    r_lo = r(lo)
    for _ in range(80):
        if r_lo < 0:
            break
        lo *= 0.5
        r_lo = r(lo)
    else:
        raise ThetaError("no negative residual found below the asymptotic root")
    r_hi = r(hi)
    for _ in range(80):
        if r_hi > 0:
            break
        lo, r_lo = hi, r_hi
        hi *= 2.0
        r_hi = r(hi)
    else:
        raise ThetaError("no sign change found above the asymptotic root")

    root, info = optimize.brentq(r, lo, hi, xtol=1e-300, rtol=8.9e-16,
                                 maxiter=200, full_output=True, disp=False)
    if not info.converged:
        raise ThetaError(f"root finder did not converge after {info.iterations} iterations")
    res = r(root)
    if abs(res) > tol:
        raise ThetaError(f"residual {res:.3g} above tolerance {tol:.3g}")
    return ThetaSolution(a, root, res, ref, (lo, hi), info.iterations)


def cumulants(model, order):
    """kappa_1..kappa_order of X from its central moments (kappa_1 = 0)."""
    mom = [1.0, 0.0] + [model.central_moment(k) for k in range(2, order + 1)]
    kap = [0.0] * (order + 1)
    for n in range(1, order + 1):
        s = mom[n]
        for k in range(1, n):
            s -= math.comb(n - 1, k - 1) * kap[k] * mom[n - k]
        kap[n] = s
    return kap[1:]


def theta_expansion(model, order):
    """Coefficients (c_1, ..., c_order) with theta_a = sum_k c_k a^k + o(a^order).

    Obtained by reverting the cumulant series K(theta)/theta = a, so
    c_1 = 2/sigma^2 and c_2 = -4 kappa_3 / (3 sigma^6).  The truncation at
    1/a does not enter at any finite order when enough moments exist.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if model.moment_order <= order + 1:
        raise ValueError(f"model has finite moments only below order {model.moment_order}")
    kap = cumulants(model, order + 1)
    # f(t) = sum_{j>=1} kappa_{j+1}/(j+1)! t^j
    f = np.zeros(order + 1)
    for j in range(1, order + 1):
        f[j] = kap[j] / math.factorial(j + 1)
    c = np.zeros(order + 1)
    c[1] = 1.0 / f[1]
    for n in range(2, order + 1):
        # coefficient of a^n in f(sum_{k<n} c_k a^k)
        comp = np.zeros(order + 1)
        power = np.zeros(order + 1)
        power[0] = 1.0
        for j in range(1, n + 1):
            power = np.convolve(power, c)[: order + 1]
            comp += f[j] * power
        c[n] = -comp[n] / f[1]
    return tuple(c[1:])


# ---------------------------------------------------------------------------
# boundary x(a)


@dataclass(frozen=True)
class BoundaryPoint:
    a: float
    theta: float
    x_a: float
    c_a: float
    kappa: float
    lam: float
    mono_ratio: float
    residual: float


def boundary_function(inc, theta, x):
    """theta x - g(x) - log(a theta); x(a) is its largest root."""
    return theta * x - inc.model.g(x) - math.log(inc.a * theta)


def solve_boundary(inc, theta=None):
    return _solve_boundary_cached(inc, theta)


@functools.lru_cache(maxsize=256)
def _solve_boundary_cached(inc, theta):
    if theta is None:
        theta = solve_theta(inc).theta
    model = inc.model
    a = inc.a
    b = 1.0 / a

    def h(x):
        return boundary_function(inc, theta, x)

    # h is convex where g is concave: start from its minimiser on [1/a, inf)
    start = b
    if model.dg(b) > theta:
        hi = 2.0 * b
        while model.dg(hi) > theta:
            hi *= 2.0
            if hi > 1e300:
                raise BoundaryError("g' never drops below theta")
        start = optimize.brentq(lambda x: model.dg(x) - theta, b, hi, rtol=1e-14)
    if h(start) >= 0:
        raise BoundaryError("theta x - g(x) - log(a theta) has no sign change beyond 1/a")
    hi = 2.0 * start
    while h(hi) <= 0:
        hi *= 2.0
        if hi > 1e300:
            raise BoundaryError("no upper bracket for x(a)")
    x_a = optimize.brentq(h, start, hi, xtol=1e-300, rtol=8.9e-16, maxiter=200)
    c_a = 1.0 / (math.log(1.0 / a) * x_a)
    log_ratio = math.log(a) - theta * x_a - float(model.log_integrated_tail(x_a))
    return BoundaryPoint(a, theta, x_a, c_a, theta - c_a, theta + c_a,
                         math.exp(log_ratio), h(x_a))


# ---------------------------------------------------------------------------
# the L factor


def growth_ratio(model, theta, x):
    """gamma* g(x) / (theta x)."""
    return model.gamma_star * float(model.g(x)) / (theta * x)


def compute_L(model, theta, x, variant=DEFAULT_VARIANT):
    variant = LVariant.parse(variant)
    if model.tail_class is TailClass.SLOW_GROWTH:
        return 1.0
    rho = growth_ratio(model, theta, x)
    if rho <= 0.01:
        return 1.0
    if rho >= 1.0:
        raise LError(f"gamma* g(x)/(theta x) = {rho:.4g} >= 1 at x = {x:.6g}")
    if variant is LVariant.PROOF_SQUARED:
        return 1.0 / (1.0 - rho) ** 2
    return 1.0 / (1.0 - rho)
