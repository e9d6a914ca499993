"""Compiled scalar kernels shared by the tail models and the simulators.

Every family is described by an integer code and a flat float64 parameter
vector so that the same ``g`` / ``g'`` / ``g^{-1}`` code runs inside numba
loops and from plain Python.  All functions work in W-coordinates (the
uncentred variable).
"""
import math

import numpy as np
from numba import njit, uint64

PARETO = 0
REG_VARYING = 1
LOGNORMAL_TYPE = 2
WEIBULL = 3
SEMIEXP = 4
CUSTOM_G = 5

# slowly varying factor used by the semiexponential family
L1_ONE = 0
L1_LN = 1
L1_LN_POW = 2
L1_LNLN = 3


@njit(cache=True)
def support_start(code, p):
    if code == WEIBULL:
        return 0.0
    if code == SEMIEXP:
        kind = int(p[1])
        if kind == L1_ONE:
            return 0.0
        if kind == L1_LNLN:
            return math.e
        return 1.0
    if code == CUSTOM_G:
        return 0.0
    return 1.0


@njit(cache=True)
def _custom_segment(p, w):
    nseg = int(p[2])
    i = nseg - 1
    while i > 0 and w < p[3 + i]:
        i -= 1
    return i


@njit(cache=True)
def g_scalar(code, p, w):
    if w <= support_start(code, p):
        return 0.0
    if code == PARETO:
        return p[0] * math.log(w)
    if code == REG_VARYING:
        u = math.log(w)
        return p[0] * u - p[1] * math.log1p(u)
    if code == LOGNORMAL_TYPE:
        return p[0] * math.log(w) ** p[1]
    if code == WEIBULL:
        return w ** p[0]
    if code == SEMIEXP:
        kind = int(p[1])
        base = w ** p[0]
        if kind == L1_ONE:
            return base
        if kind == L1_LN:
            return base * math.log(w)
        if kind == L1_LN_POW:
            return base * math.log(w) ** p[2]
        return base * math.log(math.log(w))
    # custom piecewise power law with a linear body on [0, x0]
    x0 = p[0]
    if w < x0:
        return p[1] * w / x0
    nseg = int(p[2])
    i = _custom_segment(p, w)
    return p[3 + 2 * nseg + i] * w ** p[3 + nseg + i]


@njit(cache=True)
def dg_scalar(code, p, w):
    if w < support_start(code, p):
        return 0.0
    if code == PARETO:
        return p[0] / w
    if code == REG_VARYING:
        return (p[0] - p[1] / (1.0 + math.log(w))) / w
    if code == LOGNORMAL_TYPE:
        u = math.log(w)
        if u <= 0.0:
            return 0.0 if p[1] > 1.0 else p[0] * p[1] / w
        return p[0] * p[1] * u ** (p[1] - 1.0) / w
    if code == WEIBULL:
        if w == 0.0:
            return math.inf if p[0] < 1.0 else p[0]
        return p[0] * w ** (p[0] - 1.0)
    if code == SEMIEXP:
        gam = p[0]
        kind = int(p[1])
        if w == 0.0:
            return math.inf
        base = w ** (gam - 1.0)
        if kind == L1_ONE:
            return gam * base
        u = math.log(w)
        if kind == L1_LN:
            return base * (gam * u + 1.0)
        if kind == L1_LN_POW:
            if u <= 0.0:
                return 0.0
            return base * u ** (p[2] - 1.0) * (gam * u + p[2])
        return base * (gam * math.log(u) + 1.0 / u)
    x0 = p[0]
    if w < x0:
        return p[1] / x0
    nseg = int(p[2])
    i = _custom_segment(p, w)
    e = p[3 + nseg + i]
    return p[3 + 2 * nseg + i] * e * w ** (e - 1.0)


@njit(cache=True)
def _ginv_search(code, p, E):
    # g(e^u) = E solved in u = log w; log g is close to linear in u for
    # every family here, so Newton converges in a handful of steps
    w0 = support_start(code, p)
    u_lo = math.log(w0) if w0 > 0.0 else -50.0
    u_hi = max(u_lo, 0.0) + 1.0
    while g_scalar(code, p, math.exp(u_hi)) < E:
        u_hi = 2.0 * u_hi + 1.0
        if u_hi > 700.0:
            return math.inf
    target = math.log(E)
    u = 0.5 * (u_lo + u_hi)
    for _ in range(200):
        w = math.exp(u)
        gv = g_scalar(code, p, w)
        if gv <= 0.0:
            u_lo = u
            u = 0.5 * (u_lo + u_hi)
            continue
        f = math.log(gv) - target
        if f > 0.0:
            u_hi = u
        else:
            u_lo = u
        slope = w * dg_scalar(code, p, w) / gv
        if slope > 0.0 and math.isfinite(slope):
            u_new = u - f / slope
        else:
            u_new = 0.5 * (u_lo + u_hi)
        if not (u_lo < u_new < u_hi):
            u_new = 0.5 * (u_lo + u_hi)
        if abs(u_new - u) <= 4e-16 * max(1.0, abs(u)):
            u = u_new
            break
        u = u_new
    return math.exp(u)


@njit(cache=True)
def ginv_scalar(code, p, E):
    """Smallest w with g(w) = E, i.e. the quantile map from Exp(1)."""
    if E <= 0.0:
        return support_start(code, p)
    if code == PARETO:
        return math.exp(E / p[0])
    if code == LOGNORMAL_TYPE:
        return math.exp((E / p[0]) ** (1.0 / p[1]))
    if code == WEIBULL:
        return E ** (1.0 / p[0])
    if code == SEMIEXP and int(p[1]) == L1_ONE:
        return E ** (1.0 / p[0])
    if code == CUSTOM_G:
        x0 = p[0]
        if E < p[1]:
            return E * x0 / p[1]
        nseg = int(p[2])
        i = nseg - 1
        while i > 0:
            b = p[3 + i]
            if p[3 + 2 * nseg + i] * b ** p[3 + nseg + i] <= E:
                break
            i -= 1
        return (E / p[3 + 2 * nseg + i]) ** (1.0 / p[3 + nseg + i])
    return _ginv_search(code, p, E)


def make_ginv(code):
    """Inverse of g specialised to one family, for use inside walk loops.

    Passing the family code at run time leaves the generic search in every
    loop body, which costs several times the price of a step, so each walk
    kernel is compiled against one of these instead.
    """
    if code == PARETO:
        @njit(inline="always")
        def ginv(p, E):
            return math.exp(E / p[0])
    elif code == WEIBULL:
        @njit(inline="always")
        def ginv(p, E):
            if p[0] == 0.5:
                return E * E
            return E ** (1.0 / p[0])
    elif code == LOGNORMAL_TYPE:
        @njit(inline="always")
        def ginv(p, E):
            return math.exp((E / p[0]) ** (1.0 / p[1]))
    else:
        @njit
        def ginv(p, E):
            return ginv_scalar(code, p, E)
    return ginv


@njit(cache=True)
def log_ginv_scalar(code, p, E):
    """log g^{-1}(E) without overflow for the closed-form families."""
    if E <= 0.0:
        w0 = support_start(code, p)
        return math.log(w0) if w0 > 0.0 else -math.inf
    if code == PARETO:
        return E / p[0]
    if code == LOGNORMAL_TYPE:
        return (E / p[0]) ** (1.0 / p[1])
    if code == WEIBULL or (code == SEMIEXP and int(p[1]) == L1_ONE):
        return math.log(E) / p[0]
    return math.log(ginv_scalar(code, p, E))


@njit(cache=True)
def g_array(code, p, w):
    out = np.empty(w.shape[0])
    for i in range(w.shape[0]):
        out[i] = g_scalar(code, p, w[i])
    return out


@njit(cache=True)
def dg_array(code, p, w):
    out = np.empty(w.shape[0])
    for i in range(w.shape[0]):
        out[i] = dg_scalar(code, p, w[i])
    return out


@njit(cache=True)
def ginv_array(code, p, E):
    out = np.empty(E.shape[0])
    for i in range(E.shape[0]):
        out[i] = ginv_scalar(code, p, E[i])
    return out


# ---------------------------------------------------------------------------
# counter based random stream
#
# Draw number k of replication r is a pure function of (seed, r, k), which is
# what makes the simulators reproducible for any number of workers.

GOLDEN = 0x9E3779B97F4A7C15


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> uint64(30))) * uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> uint64(27))) * uint64(0x94D049BB133111EB)
    return z ^ (z >> uint64(31))


@njit(cache=True, inline="always")
def stream_key(seed, rep):
    return mix64(uint64(rep) ^ mix64(uint64(seed) + uint64(GOLDEN)))


@njit(cache=True, inline="always")
def draw_bits(key, ctr):
    return mix64(key + ctr * uint64(GOLDEN))


@njit(cache=True, inline="always")
def bits_to_unit(z):
    # open interval (0, 1)
    return ((z >> uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


def _ziggurat_tables():
    # Marsaglia & Tsang exponential ziggurat, 256 strips, 53-bit abscissae
    m2 = 2.0 ** 53
    de = 7.697117470131487
    te = de
    ve = 3.949659822581572e-3
    q = ve / math.exp(-de)
    ke = np.zeros(256, dtype=np.uint64)
    we = np.zeros(256)
    fe = np.zeros(256)
    ke[0] = np.uint64((de / q) * m2)
    we[0] = q / m2
    we[255] = de / m2
    fe[0] = 1.0
    fe[255] = math.exp(-de)
    for i in range(254, 0, -1):
        de = -math.log(ve / de + math.exp(-de))
        ke[i + 1] = np.uint64((de / te) * m2)
        te = de
        fe[i] = math.exp(-de)
        we[i] = de / m2
    return ke, we, fe


ZIG_K, ZIG_W, ZIG_F = _ziggurat_tables()
ZIG_R = 7.697117470131487


@njit(cache=True)
def draw_exponential(key, ctr, ke, we, fe):
    """One Exp(1) variate; returns (value, next counter)."""
    while True:
        z = draw_bits(key, ctr)
        ctr += uint64(1)
        iz = z & uint64(255)
        jz = z >> uint64(11)
        if jz < ke[iz]:
            return jz * we[iz], ctr
        if iz == 0:
            z = draw_bits(key, ctr)
            ctr += uint64(1)
            return ZIG_R - math.log(bits_to_unit(z)), ctr
        x = jz * we[iz]
        z = draw_bits(key, ctr)
        ctr += uint64(1)
        if fe[iz] + bits_to_unit(z) * (fe[iz - 1] - fe[iz]) < math.exp(-x):
            return x, ctr
