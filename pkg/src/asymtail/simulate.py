"""Monte Carlo for P(M > x), M the all-time maximum of the walk with steps X - a.

Every replication draws from its own counter-based stream keyed by
(seed, replication index), so the estimates do not depend on how the index
range is split between worker threads.

A crude path is stopped once it has fallen B below its running maximum,
where B is chosen so that, by the two-term approximation, the chance of
climbing back up is at most eps_stop.  It is also stopped as soon as the
running maximum passes the largest level of interest.
"""
import functools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit, uint64
from scipy import optimize, stats

from . import _kernels as K
from .asymptotics import Regime, approx_max_tail
from .solvers import (BoundaryError, LError, LVariant, compute_L, mgf_residual, solve_boundary,
                      solve_theta)
from .tail_models import TailClass

MAX_STEPS = 1_000_000_000
BIG_JUMP_LIMIT = 0.5     # tilted estimator refuses beyond this, see big_jumps_expected


class SimulationError(RuntimeError):
    pass


class RegimeError(ValueError):
    """Tilted estimator asked for a level where the tail term dominates."""


@dataclass(frozen=True)
class McEstimate:
    p_hat: float
    n: int
    ci_low: float
    ci_high: float
    seed: int
    workers: int
    stop_barrier: float
    truncation_bias_bound: float
    x: float = math.nan
    a: float = math.nan
    hits: int = -1
    steps: int = 0
    method: str = "crude"
    std_error: float = field(default=math.nan)

    @property
    def half_width(self):
        return 0.5 * (self.ci_high - self.ci_low)

    def to_json(self):
        return json.dumps(asdict(self))

    def csv_row(self):
        return [self.a, self.x, self.n, self.p_hat, self.ci_low, self.ci_high, self.seed]


CSV_HEADER = ["a", "x", "n", "p_hat", "ci_low", "ci_high", "seed"]


def clopper_pearson(k, n, level=0.95):
    alpha = 1.0 - level
    lo = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


# ---------------------------------------------------------------------------
# stopping barrier


def _log_L_max(inc, theta, x):
    model = inc.model
    if model.tail_class is TailClass.SLOW_GROWTH:
        return 0.0
    try:
        x_eval = max(x, solve_boundary(inc).x_a)
    except BoundaryError:
        x_eval = x
    try:
        # 1/(1-rho)^2 >= 1/(1-rho), so the squared variant is the larger one
        return math.log(compute_L(model, theta, x_eval, LVariant.PROOF_SQUARED))
    except LError:
        return math.inf


def log_escape_bound(inc, B):
    """log of exp(-theta B) + (L_max/a) Fbar_I(B)."""
    theta = solve_theta(inc).theta
    log_l = _log_L_max(inc, theta, B)
    if math.isinf(log_l):
        return math.inf
    tail = log_l - math.log(inc.a) + float(inc.model.log_integrated_tail(B))
    return float(np.logaddexp(-theta * B, tail))


def stop_barrier(inc, eps_stop):
    """Smallest B (to 1e-10 relative) with escape bound <= eps_stop."""
    if not 0 < eps_stop < 1:
        raise ValueError("eps_stop must lie in (0, 1)")
    theta = solve_theta(inc).theta
    target = math.log(eps_stop)

    def h(B):
        return min(log_escape_bound(inc, B), 700.0) - target

    lo = 1.0 / theta
    while h(lo) <= 0:
        lo *= 0.5
        if lo < 1e-12:
            return lo, math.exp(log_escape_bound(inc, lo))
    hi = 2.0 * lo
    while h(hi) > 0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise SimulationError("no finite stopping barrier reaches the requested bias")
    B = optimize.brentq(h, lo, hi, rtol=1e-10)
    # land on the safe side of the root, as reported
    while math.exp(log_escape_bound(inc, B)) > eps_stop:
        B *= 1.0 + 1e-9
    return B, math.exp(log_escape_bound(inc, B))


# ---------------------------------------------------------------------------
# compiled kernels


@functools.lru_cache(maxsize=None)
def _kernels(code):
    """Walk kernels compiled for one family (see make_ginv)."""
    ginv = K.make_ginv(code)

    @njit(nogil=True)
    def crude(p, shift, a, barrier, x_stop, seed, r0, r1, max_steps, ke, we, fe,
              out_m, out_steps):
        for r in range(r0, r1):
            key = K.stream_key(seed, r)
            ctr = uint64(0)
            s = 0.0
            m = 0.0
            n = 0
            while True:
                e, ctr = K.draw_exponential(key, ctr, ke, we, fe)
                s += ginv(p, e) - shift - a
                n += 1
                if s > m:
                    m = s
                    if m > x_stop:
                        break
                elif s <= m - barrier:
                    break
                if n >= max_steps:
                    n = -1
                    break
            out_m[r] = m
            out_steps[r] = n

    @njit(nogil=True, inline="always")
    def draw_tilted(key, ctr, p, shift, a, theta, cw, e_lo, e_hi, y_hi):
        # cell chosen with weight P(cell) e^{theta y_hi}, then f restricted to
        # the cell by inversion in E = g(w), then accept with e^{theta (y - y_hi)}
        while True:
            u = K.bits_to_unit(K.draw_bits(key, ctr))
            ctr += uint64(1)
            j = np.searchsorted(cw, u)
            if j >= cw.shape[0]:
                j = cw.shape[0] - 1
            u = K.bits_to_unit(K.draw_bits(key, ctr))
            ctr += uint64(1)
            span = e_hi[j] - e_lo[j]
            e = e_lo[j] - math.log1p(u * math.expm1(-span))
            y = min(ginv(p, e) - shift - a, y_hi[j])
            u = K.bits_to_unit(K.draw_bits(key, ctr))
            ctr += uint64(1)
            if u <= math.exp(theta * (y - y_hi[j])):
                return y, ctr

    @njit(nogil=True)
    def tilted(p, shift, a, theta, eta, log_big, e_b, x, fixed_steps, seed, r0, r1,
               max_steps, ke, we, fe, cw, e_lo, e_hi, y_hi, out_w, out_steps):
        # proposal: (1 - eta) tilted law on y <= 1/a, eta original law above 1/a.
        # With fixed_steps > 0 the walk runs that many steps instead of to x.
        log_small = -math.log1p(-eta)
        for r in range(r0, r1):
            key = K.stream_key(seed, r)
            ctr = uint64(0)
            s = 0.0
            log_w = 0.0
            n = 0
            while (s <= x) if fixed_steps == 0 else (n < fixed_steps):
                u = K.bits_to_unit(K.draw_bits(key, ctr))
                ctr += uint64(1)
                if u < eta:
                    ex, ctr = K.draw_exponential(key, ctr, ke, we, fe)
                    y = ginv(p, e_b + ex) - shift - a
                    log_w += log_big
                else:
                    y, ctr = draw_tilted(key, ctr, p, shift, a, theta, cw, e_lo, e_hi, y_hi)
                    log_w += log_small - theta * y
                s += y
                n += 1
                if n >= max_steps:
                    n = -1
                    break
            out_w[r] = math.exp(log_w)
            out_steps[r] = n

    return crude, tilted


@njit(cache=True, nogil=True)
def _skip_free_block(prob, barrier, x_stop, seed, r0, r1, max_steps, out_m, out_steps):
    for r in range(r0, r1):
        key = K.stream_key(seed, r)
        ctr = uint64(0)
        s = 0.0
        m = 0.0
        n = 0
        while True:
            u = K.bits_to_unit(K.draw_bits(key, ctr))
            ctr += uint64(1)
            s += 1.0 if u < prob else -1.0
            n += 1
            if s > m:
                m = s
                if m > x_stop:
                    break
            elif s <= m - barrier:
                break
            if n >= max_steps:
                n = -1
                break
        out_m[r] = m
        out_steps[r] = n


# ---------------------------------------------------------------------------
# orchestration


def _split(n, workers):
    edges = np.linspace(0, n, workers + 1).astype(np.int64)
    return [(int(lo), int(hi)) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]


def _run_blocks(fn, n, workers, *args):
    """Run fn(r0, r1) over a fixed partition of range(n) on worker threads."""
    workers = max(1, int(workers))
    parts = _split(n, workers)
    if workers == 1:
        for r0, r1 in parts:
            fn(r0, r1, *args)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(lambda lr: fn(lr[0], lr[1], *args), parts))


def _check_steps(steps):
    if np.any(steps < 0):
        raise SimulationError(f"a replication exceeded {MAX_STEPS} steps without "
                              "reaching the stopping barrier")


@dataclass(frozen=True)
class StopRule:
    barrier: float
    x_stop: float = math.inf
    max_steps: int = MAX_STEPS


def simulate_maxima(inc, stop, seed, n, workers=1, first=0):
    """Maxima of replications first .. first+n-1 (and their step counts)."""
    model = inc.model
    out_m = np.empty(first + n)
    out_steps = np.empty(first + n, dtype=np.int64)

    crude = _kernels(model.code)[0]

    def block(r0, r1):
        crude(model.p, model.mean_shift, inc.a, stop.barrier, stop.x_stop, seed,
              first + r0, first + r1, stop.max_steps, K.ZIG_K, K.ZIG_W, K.ZIG_F,
              out_m, out_steps)

    _run_blocks(block, n, workers)
    _check_steps(out_steps[first:])
    return out_m[first:], out_steps[first:]


def simulate_max(inc, stop, stream):
    """One replication; ``stream`` is (seed, replication index)."""
    seed, rep = stream
    m, _ = simulate_maxima(inc, stop, seed, 1, first=rep)
    return float(m[0])


def _target_scale(inc, xs, n):
    try:
        p = min(approx_max_tail(inc, x).total for x in xs if x > 0)
    except (LError, BoundaryError, ValueError):
        p = 1.0 / n
    return min(max(p, 1.0 / n), 1.0)


def estimate_tail_prob(inc, x, n, seed, workers=1, eps_rel=1e-4):
    """Crude estimate of P(M > x); ``x`` may be a sequence (common random numbers).

    The barrier is set from eps_stop = eps_rel * (smallest approximate
    probability over x, floored at 1/n).  If the resulting bias bound is not
    below 1% of max(p_hat, 1/n) the run is repeated with a tighter barrier.
    """
    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if n < 1000:
        raise ValueError("n must be at least 1000")
    target = _target_scale(inc, xs, n)
    while True:
        B, bound = stop_barrier(inc, eps_rel * target)
        stop = StopRule(B, float(xs.max()))
        m, steps = simulate_maxima(inc, stop, seed, n, workers)
        out = []
        for xi in xs:
            k = int(np.count_nonzero(m > xi))
            lo, hi = clopper_pearson(k, n)
            p_hat = k / n
            out.append(McEstimate(p_hat, n, lo, hi, seed, workers, B, bound, float(xi), inc.a,
                                  k, int(steps.sum()), "crude",
                                  math.sqrt(p_hat * (1 - p_hat) / n)))
        floor = min(max(e.p_hat, 1.0 / n) for e in out)
        if bound <= 0.01 * floor:
            break
        target = floor
    return out[0] if scalar else out


# ---------------------------------------------------------------------------
# skip-free +1/-1 walk (gambler's ruin check)


def skip_free_maxima(prob, n, seed, eps_stop=1e-12, workers=1):
    if not 0 < prob < 0.5:
        raise ValueError("need 0 < p < 1/2 for a negative drift")
    rate = math.log((1 - prob) / prob)
    barrier = math.log(1.0 / eps_stop) / rate
    out_m = np.empty(n)
    out_steps = np.empty(n, dtype=np.int64)

    def block(r0, r1):
        _skip_free_block(prob, barrier, math.inf, seed, r0, r1, MAX_STEPS, out_m, out_steps)

    _run_blocks(block, n, workers)
    _check_steps(out_steps)
    return out_m


# ---------------------------------------------------------------------------
# exponentially tilted estimator


@dataclass(frozen=True)
class TiltedSampler:
    theta: float
    eta: float          # weight of the above-1/a component in the proposal
    log_big: float      # log LR of a step above 1/a
    e_b: float          # g at the truncation level, W-coordinates
    cw: np.ndarray
    e_lo: np.ndarray
    e_hi: np.ndarray
    y_hi: np.ndarray
    drift: float        # mean step of the tilted law


def tilted_sampler(inc, x, cell_width=0.05, max_cells=200_000):
    """Cells on [y_min, 1/a] narrow enough that e^{theta y} varies by < 5% within each."""
    model = inc.model
    theta = solve_theta(inc).theta
    b = inc.jump_level
    y0 = inc.y_min
    cells = int(min(max(math.ceil(theta * (b - y0) / cell_width), 1), max_cells))
    edges = np.linspace(y0, b, cells + 1)
    e_edges = model.g(edges + inc.a)
    e_edges[0] = 0.0
    e_lo, e_hi = e_edges[:-1], e_edges[1:]
    # weight of each cell: P(cell) * e^{theta y_hi}, in logs
    log_mass = -e_lo + np.log(-np.expm1(-(e_hi - e_lo)))
    log_w = log_mass + theta * edges[1:]
    w = np.exp(log_w - log_w.max())
    cw = np.cumsum(w)
    cw /= cw[-1]
    cw[-1] = 1.0

    # mean of the tilted law: d/dtheta E[e^{theta Y}; Y <= b]
    h = 1e-6 * theta
    drift = (mgf_residual(inc, theta + h) - mgf_residual(inc, theta - h)) / (2 * h)

    tail_b = math.exp(-float(model.g(b + inc.a)))
    k_est = max(x, 1.0) / max(drift, 1e-300) + 1.0
    eta = min(max(tail_b, 0.1 / k_est), 0.5)
    log_big = math.log(tail_b) - math.log(eta) if tail_b > 0 else -math.inf
    return TiltedSampler(theta, eta, log_big, float(model.g(b + inc.a)), cw,
                         np.ascontiguousarray(e_lo), np.ascontiguousarray(e_hi),
                         np.ascontiguousarray(edges[1:]), drift)


def big_jumps_expected(inc, smp, x):
    """Mean number of steps above 1/a, under F, over the length of a typical Q-path to x."""
    return max(x, 1.0) / max(smp.drift, 1e-300) * float(inc.tail(inc.jump_level))


def _check_tilted_regime(inc, x, smp=None):
    est = approx_max_tail(inc, x)
    if est.regime is Regime.TAIL_DOMINANT:
        raise RegimeError("tilting is not used where the integrated-tail term dominates")
    try:
        x_a = solve_boundary(inc).x_a
    except BoundaryError:
        x_a = math.inf
    if x > x_a:
        raise RegimeError(f"x = {x:.6g} lies beyond the boundary x(a) = {x_a:.6g}")
    # Q rarely jumps above 1/a; if P(M > x) is carried by such jumps the
    # weights become heavy-tailed and the batch interval is meaningless
    k = big_jumps_expected(inc, smp if smp is not None else tilted_sampler(inc, x), x)
    if k > BIG_JUMP_LIMIT:
        raise RegimeError(f"about {k:.3g} jumps above 1/a are expected on the way to x; "
                          "use the crude estimator")


def estimate_tail_prob_tilted(inc, x, n, seed, workers=1, batches=100):
    """P(M > x) = E_Q[1{S crosses x} dP/dQ] with Q the defensive mixture.

    Q draws with probability 1 - eta from the law e^{theta y} F(dy) on
    y <= 1/a (a probability law because theta solves the truncated equation)
    and with probability eta from F restricted to y > 1/a.  Under Q the walk
    drifts upward, so every path crosses and the estimator has no truncation
    at all.  The interval comes from ``batches`` batch means.
    """
    if not x > 0:
        raise ValueError("x must be positive")
    smp = tilted_sampler(inc, x)
    _check_tilted_regime(inc, x, smp)
    out_w = np.empty(n)
    out_steps = np.empty(n, dtype=np.int64)

    _run_tilted(inc, smp, x, 0, seed, n, workers, out_w, out_steps)
    _check_steps(out_steps)
    p_hat, se = _batch_mean(out_w, batches)
    q = float(stats.t.ppf(0.975, batches - 1))
    return McEstimate(p_hat, n, max(p_hat - q * se, 0.0), p_hat + q * se, seed, workers,
                      math.inf, 0.0, float(x), inc.a, -1, int(out_steps.sum()), "tilted", se)


def _batch_mean(values, batches):
    n = values.size
    batches = max(2, min(batches, n))
    means = np.array([values[lo:hi].mean() for lo, hi in _split(n, batches)])
    return float(values.mean()), float(means.std(ddof=1) / math.sqrt(batches))


def likelihood_ratio_mean(inc, steps, n, seed, x_hint=None, workers=1):
    """Mean of dP/dQ over ``steps`` proposal steps; equals 1 exactly in expectation."""
    smp = tilted_sampler(inc, x_hint if x_hint is not None else steps * inc.a)
    out_w = np.empty(n)
    out_steps = np.empty(n, dtype=np.int64)
    _run_tilted(inc, smp, math.inf, steps, seed, n, workers, out_w, out_steps)
    return float(out_w.mean()), float(out_w.std(ddof=1) / math.sqrt(n)), bool(np.all(out_w > 0))


def _run_tilted(inc, smp, x, fixed_steps, seed, n, workers, out_w, out_steps):
    model = inc.model
    tilted = _kernels(model.code)[1]

    def block(r0, r1):
        tilted(model.p, model.mean_shift, inc.a, smp.theta, smp.eta, smp.log_big, smp.e_b,
               x, fixed_steps, seed, r0, r1, MAX_STEPS, K.ZIG_K, K.ZIG_W, K.ZIG_F,
               smp.cw, smp.e_lo, smp.e_hi, smp.y_hi, out_w, out_steps)

    _run_blocks(block, n, workers)
