"""Numerical integration helpers.

``integrate_adaptive`` is the workhorse (adaptive Gauss-Kronrod from QUADPACK
via scipy) with an explicit map for half-infinite ranges and a panel budget
that can be raised from the environment.  ``trapezoid`` is a deliberately
plain fixed-grid rule kept around as an independent cross-check.
"""
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

BUDGET_ENV = "ASYMTAIL_QUAD_BUDGET"
DEFAULT_BUDGET = 1_000_000


class QuadratureError(RuntimeError):
    """Raised when the requested accuracy is not reached within the budget."""


@dataclass(frozen=True)
class QuadResult:
    value: float
    error: float
    panels: int


def panel_budget():
    raw = os.environ.get(BUDGET_ENV)
    if raw is None:
        return DEFAULT_BUDGET
    try:
        budget = int(raw)
    except ValueError:
        raise ValueError(f"{BUDGET_ENV} must be an integer, got {raw!r}") from None
    if budget < 1:
        raise ValueError(f"{BUDGET_ENV} must be positive")
    return budget


def _quad_once(f, lo, hi, abs_tol, rel_tol, limit, points):
    # with full_output quad reports trouble through a fourth return value
    out = integrate.quad(f, lo, hi, epsabs=abs_tol, epsrel=rel_tol,
                         limit=limit, points=points, full_output=1)
    val, err, info = out[:3]
    return QuadResult(val, err, info["last"]), len(out) == 3


def integrate_adaptive(f, lo, hi, abs_tol=1e-14, rel_tol=1e-12, points=None,
                       strict=True):
    """Integrate ``f`` over [lo, hi]; ``hi`` may be ``inf``.

    A half-infinite range is mapped to [0, 1) with u = lo + s/(1-s).  The
    panel limit starts small and grows geometrically up to the budget.  With
    ``strict=False`` the best available value is returned instead of raising.
    """
    if hi == lo:
        return QuadResult(0.0, 0.0, 0)
    if math.isinf(hi):
        if points:
            raise ValueError("break points are not supported on infinite ranges")

        def g(s):
            one_minus = 1.0 - s
            return f(lo + s / one_minus) / (one_minus * one_minus)

        f_eval, a, b = g, 0.0, 1.0
    else:
        f_eval, a, b = f, lo, hi
    if points is not None:
        points = [p for p in points if a < p < b] or None

    budget = panel_budget()
    limit = min(200, budget)
    while True:
        res, ok = _quad_once(f_eval, a, b, abs_tol, rel_tol, limit, points)
        if ok or limit >= budget:
            break
        limit = min(budget, limit * 8)
    if ok:
        return res
    if strict and res.error > max(abs_tol, rel_tol * abs(res.value)) * 1e3:
        raise QuadratureError(
            f"quadrature on [{lo}, {hi}] stalled at error {res.error:.3g} "
            f"(value {res.value:.6g}) after {limit} panels")
    return res


def integrate_segments(f, edges, abs_tol=1e-300, rel_tol=1e-12):
    """Sum of adaptive integrals over consecutive ``edges`` (last may be inf).

    Used for integrands with structure at several very different scales,
    where a single adaptive call can step over a narrow peak.
    """
    total = 0.0
    err = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        r = integrate_adaptive(f, lo, hi, abs_tol=abs_tol, rel_tol=rel_tol,
                               strict=False)
        total += r.value
        err += r.error
    return total, err


def clustered_edges(lo, hi, scales, ends="both"):
    """Break points for [lo, hi] that cluster geometrically at the ends.

    ``scales`` are the smallest feature widths expected near the ends.
    """
    width = hi - lo
    if width <= 0:
        return [lo, hi]
    offsets = set()
    for s in scales:
        s = min(max(s, width * 1e-12), width / 2)
        while s < width / 2:
            offsets.add(s)
            s *= 4.0
    offsets.add(width / 2)
    pts = {lo, hi}
    for d in offsets:
        if ends in ("both", "left"):
            pts.add(lo + d)
        if ends in ("both", "right"):
            pts.add(hi - d)
    return sorted(pts)


def trapezoid(f, lo, hi, nodes=1_000_001):
    """Composite trapezoid rule on an equispaced grid (vectorised ``f``)."""
    x = np.linspace(lo, hi, nodes)
    y = f(x)
    h = (hi - lo) / (nodes - 1)
    return h * (y.sum() - 0.5 * (y[0] + y[-1]))


def log_upper_gamma(s, z):
    """log of the upper incomplete gamma function Gamma(s, z), z >= 0."""
    if z < 0:
        raise ValueError("z must be non-negative")
    if z < max(30.0, s + 1.0):
        q = special.gammaincc(s, z)
        if q > 0:
            return math.log(q) + special.gammaln(s)
    # continued fraction (modified Lentz), good for z > s + 1
    tiny = 1e-300
    b = z + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return -z + s * math.log(z) + math.log(h)
