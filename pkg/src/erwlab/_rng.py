"""Counter-based pseudorandom primitives.

Every random quantity in the package is a pure function of a 64-bit key and
a counter (or of (seed, site, visit) for the environment's coin field), so
any coin can be regenerated lazily in O(1) and replica streams never collide.
The mixer is the SplitMix64 finalizer; sequential streams are SplitMix64
proper (state = key + n*GOLDEN, output = finalize(state)).
"""

import math

import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
GOLDEN2 = np.uint64(0xC2B2AE3D27D4EB4F)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_ENV_TAG = np.uint64(0x7A5C1D9E36B84F21)
_U53 = 1.0 / float(1 << 53)

_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_S63 = np.uint64(63)


@njit(inline="always", cache=True)
def mix64(z):
    """SplitMix64 finalizer: avalanche a 64-bit word."""
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(inline="always", cache=True)
def stream_u64(key, ctr):
    """n-th word of the SplitMix64 stream with the given key."""
    return mix64(key + ctr * GOLDEN)


@njit(inline="always", cache=True)
def stream_u01(key, ctr):
    """n-th uniform in [0, 1) of the keyed stream."""
    return (stream_u64(key, ctr) >> _S11) * _U53


@njit(inline="always", cache=True)
def site_u01(seed, x, i):
    """Uniform in [0, 1) attached to (environment seed, site x, index i).

    Index 0 is reserved for the stack draw at x; indices i >= 1 drive the
    i-th coin toss at x.  Chained finalizers decorrelate the two lanes.
    """
    h = mix64(seed ^ _ENV_TAG)
    h = mix64(h ^ (np.uint64(x) * GOLDEN))
    h = mix64(h ^ (np.uint64(i) * GOLDEN2))
    return (h >> _S11) * _U53


@njit(inline="always", cache=True)
def derive_key(master, tag, index):
    """Independent stream key for (master seed, purpose tag, replica index)."""
    return mix64(mix64(np.uint64(master) ^ np.uint64(tag)) + np.uint64(index) * GOLDEN)


@njit(inline="always", cache=True)
def normal_pair(key, ctr):
    """Two standard normals by the Marsaglia polar method.

    Returns (z1, z2, ctr) with ctr advanced past all consumed uniforms.
    """
    while True:
        a = 2.0 * stream_u01(key, ctr) - 1.0
        b = 2.0 * stream_u01(key, ctr + np.uint64(1)) - 1.0
        ctr += np.uint64(2)
        s = a * a + b * b
        if 0.0 < s < 1.0:
            f = math.sqrt(-2.0 * math.log(s) / s)
            return a * f, b * f, ctr


@njit(inline="always", cache=True)
def gamma_sample(key, ctr, shape):
    """Gamma(shape, 1) for shape >= 1 (Marsaglia-Tsang squeeze)."""
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        z1, z2, ctr = normal_pair(key, ctr)
        for x in (z1, z2):
            v = 1.0 + c * x
            if v <= 0.0:
                continue
            v = v * v * v
            u = stream_u01(key, ctr)
            ctr += np.uint64(1)
            xx = x * x
            if u < 1.0 - 0.0331 * xx * xx:
                return d * v, ctr
            if math.log(u) < 0.5 * xx + d * (1.0 - v + math.log(v)):
                return d * v, ctr


@njit(inline="always", cache=True)
def poisson_sample(key, ctr, lam):
    """Poisson(lam): Knuth product below 10, Hormann PTRS above."""
    if lam < 10.0:
        enlam = math.exp(-lam)
        prod = 1.0
        k = np.int64(-1)
        while prod > enlam:
            prod *= stream_u01(key, ctr)
            ctr += np.uint64(1)
            k += 1
        return k, ctr
    b = 0.931 + 2.53 * math.sqrt(lam)
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    loglam = math.log(lam)
    while True:
        u = stream_u01(key, ctr) - 0.5
        v = stream_u01(key, ctr + np.uint64(1))
        ctr += np.uint64(2)
        us = 0.5 - abs(u)
        k = np.int64(math.floor((2.0 * a / us + b) * u + lam + 0.43))
        if us >= 0.07 and v <= vr:
            return k, ctr
        if k < 0 or (us < 0.013 and v > us):
            continue
        if math.log(v * inv_alpha / (a / (us * us) + b)) <= k * loglam - lam - math.lgamma(k + 1.0):
            return k, ctr


@njit(inline="always", cache=True)
def negbin_half(key, ctr, m):
    """Exact NB(m, 1/2): successes before the m-th failure with fair coins.

    Small m scans raw bits of the stream; large m uses the Poisson-Gamma
    mixture NB(m, 1/2) = Poisson(Gamma(m, 1)), which is exact for p = 1/2.
    """
    if m <= 0:
        return np.int64(0), ctr
    if m <= 16:
        s = np.int64(0)
        fails = np.int64(0)
        while True:
            w = stream_u64(key, ctr)
            ctr += np.uint64(1)
            for _ in range(64):
                if w & np.uint64(1):
                    s += 1
                else:
                    fails += 1
                    if fails == m:
                        return s, ctr
                w >>= np.uint64(1)
    lam, ctr = gamma_sample(key, ctr, float(m))
    return poisson_sample(key, ctr, lam)


# python-facing helpers (tests, oracles)

def py_mix64(z: int) -> int:
    return int(mix64(np.uint64(z)))


def py_stream_u01(key: int, ctr: int) -> float:
    return float(stream_u01(np.uint64(key), np.uint64(ctr)))


def py_site_u01(seed: int, x: int, i: int) -> float:
    return float(site_u01(np.uint64(seed), np.uint64(np.int64(x)), np.uint64(i)))


def py_derive_key(master: int, tag: int, index: int) -> int:
    return int(derive_key(np.uint64(master), np.uint64(tag), np.uint64(index)))
