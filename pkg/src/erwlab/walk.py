"""Excited random walk by the coin-toss construction, plus path functionals.

The walk at site x consults the coin eta_x(i) on its i-th visit there, so a
trajectory is a pure function of the environment seed.  Long runs go through
numba kernels; the WalkState class is the slow reference implementation that
the kernels are cross-checked against.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit, prange

from ._rng import derive_key, mix64, site_u01, stream_u01
from .cookie_env import Environment, _ENV_STREAM_TAG

_ENV_TAG = np.uint64(_ENV_STREAM_TAG)


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@njit(inline="always", cache=True)
def _atom_at(seed, x, cumw):
    u = site_u01(seed, np.uint64(x), np.uint64(0))
    j = 0
    while u >= cumw[j]:
        j += 1
    return j


@njit(inline="always", cache=True)
def _coin(seed, x, i, probs, cumw, m):
    """eta_x(i) as a bool; i is the 1-based visit index."""
    if i <= m:
        a = _atom_at(seed, x, cumw)
        p = probs[a, i - 1]
    else:
        p = 0.5
    return site_u01(seed, np.uint64(x), np.uint64(i)) < p


@njit(cache=True)
def _grow(visits, lo, pos):
    """Double the visit table towards the side the walk just stepped off."""
    n = visits.shape[0]
    out = np.zeros(2 * n, dtype=np.int32)
    if pos < lo:
        new_lo = lo - n
        out[n:] = visits
    else:
        new_lo = lo
        out[:n] = visits
    return out, new_lo


@njit(cache=True)
def walk_final_counters(seed, probs, cumw, m, nsteps):
    """Run nsteps from 0; return (a_plus, a_minus, u, d, zero_visits, x)."""
    visits = np.zeros(16384, dtype=np.int32)
    lo = np.int64(-8192)
    x = np.int64(0)
    a_plus = np.int64(1)
    a_minus = np.int64(0)
    u = np.int64(0)
    d = np.int64(0)
    zv = np.int64(1)
    for _ in range(nsteps):
        idx = x - lo
        i = visits[idx] + 1
        visits[idx] = i
        from_zero = x == 0
        if _coin(seed, x, i, probs, cumw, m):
            x += 1
            if from_zero:
                u += 1
        else:
            x -= 1
            if from_zero:
                d += 1
        if x - lo < 0 or x - lo >= visits.shape[0]:
            visits, lo = _grow(visits, lo, x)
        if x >= 0:
            a_plus += 1
        else:
            a_minus += 1
        if x == 0:
            zv += 1
    return a_plus, a_minus, u, d, zv, x


@njit(cache=True)
def walk_series(seed, probs, cumw, m, nsteps, a_plus, a_minus, ups, downs):
    """Fill running counter series at i = 0..nsteps (arrays of length nsteps+1)."""
    visits = np.zeros(16384, dtype=np.int32)
    lo = np.int64(-8192)
    x = np.int64(0)
    ap = np.int64(1)
    am = np.int64(0)
    u = np.int64(0)
    d = np.int64(0)
    a_plus[0] = ap
    a_minus[0] = am
    ups[0] = u
    downs[0] = d
    for n in range(nsteps):
        idx = x - lo
        i = visits[idx] + 1
        visits[idx] = i
        from_zero = x == 0
        if _coin(seed, x, i, probs, cumw, m):
            x += 1
            if from_zero:
                u += 1
        else:
            x -= 1
            if from_zero:
                d += 1
        if x - lo < 0 or x - lo >= visits.shape[0]:
            visits, lo = _grow(visits, lo, x)
        if x >= 0:
            ap += 1
        else:
            am += 1
        a_plus[n + 1] = ap
        a_minus[n + 1] = am
        ups[n + 1] = u
        downs[n + 1] = d
    return x


@njit(cache=True)
def walk_positions(seed, probs, cumw, m, nsteps, start, out):
    """Fill out[0..nsteps] with X_0..X_n started from start."""
    visits = np.zeros(16384, dtype=np.int32)
    lo = np.int64(-8192 + start)
    x = np.int64(start)
    out[0] = x
    for n in range(nsteps):
        idx = x - lo
        i = visits[idx] + 1
        visits[idx] = i
        if _coin(seed, x, i, probs, cumw, m):
            x += 1
        else:
            x -= 1
        if x - lo < 0 or x - lo >= visits.shape[0]:
            visits, lo = _grow(visits, lo, x)
        out[n + 1] = x
    return x


@njit(cache=True)
def excursion_kernel(seed, probs, cumw, m, start, cap):
    """Excursion from start (+1 or -1) until the first visit to 0.

    Returns (depth, duration, censored) with depth = the maximal distance
    from 0 reached strictly before T_0.
    """
    visits = np.zeros(16384, dtype=np.int32)
    lo = np.int64(-8192 + start)
    x = np.int64(start)
    sgn = np.int64(1) if start > 0 else np.int64(-1)
    depth = np.int64(1)
    n = np.int64(0)
    while n < cap:
        idx = x - lo
        i = visits[idx] + 1
        visits[idx] = i
        if _coin(seed, x, i, probs, cumw, m):
            x += 1
        else:
            x -= 1
        n += 1
        if x - lo < 0 or x - lo >= visits.shape[0]:
            visits, lo = _grow(visits, lo, x)
        if sgn * x > depth:
            depth = sgn * x
        if x == 0:
            return depth, n, False
    return depth, n, True


@njit(cache=True)
def race_kernel(seed, probs, cumw, m, start, lo_target, hi_target, cap):
    """First passage race: returns (+1 hi first, -1 lo first, 0 censored, steps)."""
    if start == hi_target:
        return np.int64(1), np.int64(0)
    if start == lo_target:
        return np.int64(-1), np.int64(0)
    visits = np.zeros(16384, dtype=np.int32)
    lo = np.int64(-8192 + start)
    x = np.int64(start)
    n = np.int64(0)
    while n < cap:
        idx = x - lo
        i = visits[idx] + 1
        visits[idx] = i
        if _coin(seed, x, i, probs, cumw, m):
            x += 1
        else:
            x -= 1
        n += 1
        if x - lo < 0 or x - lo >= visits.shape[0]:
            visits, lo = _grow(visits, lo, x)
        if x == hi_target:
            return np.int64(1), n
        if x == lo_target:
            return np.int64(-1), n
    return np.int64(0), n


@njit(cache=True)
def return_time_kernel(seed, probs, cumw, m, cap):
    """T_0^r from 0: first strictly positive time back at the origin."""
    visits = np.zeros(16384, dtype=np.int32)
    lo = np.int64(-8192)
    x = np.int64(0)
    n = np.int64(0)
    while n < cap:
        idx = x - lo
        i = visits[idx] + 1
        visits[idx] = i
        if _coin(seed, x, i, probs, cumw, m):
            x += 1
        else:
            x -= 1
        n += 1
        if x - lo < 0 or x - lo >= visits.shape[0]:
            visits, lo = _grow(visits, lo, x)
        if x == 0:
            return n, False
    return n, True


@njit(cache=True)
def positive_clock_profile_kernel(seed, probs, cumw, m, clock_m, out, cap):
    """Sample X on the positive-occupation clock at ngrid evenly spaced ticks.

    out[k] receives X at clock time floor(k * clock_m / (ngrid - 1)); the walk
    runs until the clock exceeds clock_m or cap steps pass (censored).
    """
    ngrid = out.shape[0]
    visits = np.zeros(16384, dtype=np.int32)
    lo = np.int64(-8192)
    x = np.int64(0)
    a_plus = np.int64(1)  # clock after time 0 (X_0 = 0 counts)
    k = np.int64(0)
    # tick thresholds: clock value a_plus reaches g_k + 1 <=> T+_{g_k} passed
    while k < ngrid and (k * clock_m) // (ngrid - 1) < a_plus:
        out[k] = x
        k += 1
    n = np.int64(0)
    while n < cap:
        idx = x - lo
        i = visits[idx] + 1
        visits[idx] = i
        if _coin(seed, x, i, probs, cumw, m):
            x += 1
        else:
            x -= 1
        n += 1
        if x - lo < 0 or x - lo >= visits.shape[0]:
            visits, lo = _grow(visits, lo, x)
        if x >= 0:
            a_plus += 1
            while k < ngrid and (k * clock_m) // (ngrid - 1) < a_plus:
                out[k] = x
                k += 1
            if k >= ngrid:
                return False
    return True


@njit(cache=True)
def negative_clock_value_kernel(seed, probs, cumw, m, clock_m):
    """X at the first time the negative-occupation count exceeds clock_m.

    Only the sub-paths below 0 are simulated: successive down-excursions from
    -1 are concatenated, which reproduces the negative-clock observations of
    the walk exactly (the behaviour below 0 depends only on coins at sites
    < 0 and on how many down-excursions have been completed).
    """
    visits = np.zeros(16384, dtype=np.int32)
    lo = np.int64(-8192)
    ticks = np.int64(0)
    while True:
        x = np.int64(-1)  # a fresh down-excursion enters at -1
        ticks += 1
        if ticks > clock_m:
            return x
        while x < 0:
            idx = x - lo
            i = visits[idx] + 1
            visits[idx] = i
            if _coin(seed, x, i, probs, cumw, m):
                x += 1
            else:
                x -= 1
            if x - lo < 0 or x - lo >= visits.shape[0]:
                visits, lo = _grow(visits, lo, x)
            if x < 0:
                ticks += 1
                if ticks > clock_m:
                    return x


# --- replica-parallel batches (deterministic per (master_seed, replica)) ---

@njit(cache=True, parallel=True)
def occupation_batch(master_seed, probs, cumw, m, nsteps, reps,
                     a_plus_out, a_minus_out, u_out, d_out):
    for r in prange(reps):
        seed = derive_key(np.uint64(master_seed), _ENV_TAG, np.uint64(r))
        ap, am, u, d, zv, x = walk_final_counters(seed, probs, cumw, m, nsteps)
        a_plus_out[r] = ap
        a_minus_out[r] = am
        u_out[r] = u
        d_out[r] = d


@njit(cache=True, parallel=True)
def crossing_batch(master_seed, probs, cumw, m, nsteps, reps, u_out, d_out, l_out):
    for r in prange(reps):
        seed = derive_key(np.uint64(master_seed), _ENV_TAG, np.uint64(r))
        ap, am, u, d, zv, x = walk_final_counters(seed, probs, cumw, m, nsteps)
        u_out[r] = u
        d_out[r] = d
        l_out[r] = zv


@njit(cache=True, parallel=True)
def excursion_batch(master_seed, probs, cumw, m, start, cap, reps, depth_out, dur_out, cens_out):
    for r in prange(reps):
        seed = derive_key(np.uint64(master_seed), _ENV_TAG, np.uint64(r))
        depth, dur, cens = excursion_kernel(seed, probs, cumw, m, start, cap)
        depth_out[r] = depth
        dur_out[r] = dur
        cens_out[r] = 1 if cens else 0


@njit(cache=True, parallel=True)
def race_batch(master_seed, probs, cumw, m, start, lo_t, hi_t, cap, reps, out):
    for r in prange(reps):
        seed = derive_key(np.uint64(master_seed), _ENV_TAG, np.uint64(r))
        which, steps = race_kernel(seed, probs, cumw, m, start, lo_t, hi_t, cap)
        out[r] = which


@njit(cache=True, parallel=True)
def return_time_batch(master_seed, probs, cumw, m, cap, reps, time_out, cens_out):
    for r in prange(reps):
        seed = derive_key(np.uint64(master_seed), _ENV_TAG, np.uint64(r))
        t, cens = return_time_kernel(seed, probs, cumw, m, cap)
        time_out[r] = t
        cens_out[r] = 1 if cens else 0


@njit(cache=True, parallel=True)
def negative_clock_batch(master_seed, probs, cumw, m, clock_m, reps, out):
    for r in prange(reps):
        seed = derive_key(np.uint64(master_seed), _ENV_TAG, np.uint64(r))
        out[r] = negative_clock_value_kernel(seed, probs, cumw, m, clock_m)


@njit(cache=True, parallel=True)
def positive_clock_profile_batch(master_seed, probs, cumw, m, clock_m, cap, reps, out, cens_out):
    for r in prange(reps):
        seed = derive_key(np.uint64(master_seed), _ENV_TAG, np.uint64(r))
        cens = positive_clock_profile_kernel(seed, probs, cumw, m, clock_m, out[r], cap)
        cens_out[r] = 1 if cens else 0


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

@dataclass
class WalkState:
    """Mutable single-walk state; the slow, obviously-correct stepper.

    Counter conventions: a_plus counts times i <= n with X_i >= 0, a_minus
    those with X_i < 0 (time 0 included), u/d count the moves 0 -> +-1 up to
    time n inclusively, zero_visits the times at the origin.
    """

    position: int = 0
    time: int = 0
    a_plus: int = field(default=None)
    a_minus: int = field(default=None)
    u: int = 0
    d: int = 0
    zero_visits: int = field(default=None)
    visits: dict = field(default_factory=lambda: defaultdict(int))

    def __post_init__(self):
        if self.a_plus is None:
            self.a_plus = 1 if self.position >= 0 else 0
        if self.a_minus is None:
            self.a_minus = 0 if self.position >= 0 else 1
        if self.zero_visits is None:
            self.zero_visits = 1 if self.position == 0 else 0


def step(state: WalkState, env: Environment) -> WalkState:
    """Advance one step: X -> X + 2*eta_X(visit) - 1, updating all counters."""
    x = state.position
    state.visits[x] += 1
    c = env.coin(x, state.visits[x])
    if x == 0:
        if c:
            state.u += 1
        else:
            state.d += 1
    state.position = x + 1 if c else x - 1
    state.time += 1
    if state.position >= 0:
        state.a_plus += 1
    else:
        state.a_minus += 1
    if state.position == 0:
        state.zero_visits += 1
    return state


@dataclass(frozen=True)
class ExcursionRecord:
    """Depth and duration of one excursion from +-1 back to the origin."""

    depth: int
    duration: int
    censored: bool


@dataclass(frozen=True)
class WalkRecord:
    """Per-replica summary emitted by the walk experiments (one JSON line)."""

    replica: int
    n: int
    a_plus: int
    a_minus: int
    u: int
    d: int
    depth: Optional[int] = None
    duration: Optional[int] = None
    censored: bool = False

    def to_json_dict(self) -> dict:
        return {
            "replica": self.replica,
            "n": self.n,
            "a_plus": self.a_plus,
            "a_minus": self.a_minus,
            "u": self.u,
            "d": self.d,
            "depth": self.depth,
            "duration": self.duration,
            "censored": self.censored,
        }


def _env_args(env: Environment):
    return np.uint64(env.seed_u64), env.atom_probs, env.atom_cumw, np.int64(env.m)


def first_passage(env: Environment, start: int, target: int, cap: int):
    """T_target from start; returns (time, censored)."""
    if cap <= 0:
        raise ValueError("cap must be positive")
    if start == target:
        return 0, False
    seed, probs, cumw, m = _env_args(env)
    # single absorbing target: race against an unreachable opposite barrier
    far = start - (cap + 1) if target > start else start + (cap + 1)
    lo_t, hi_t = (far, target) if target > start else (target, far)
    which, steps = race_kernel(seed, probs, cumw, m, start, lo_t, hi_t, cap)
    if which == 0:
        return int(steps), True
    return int(steps), False


def return_time(env: Environment, cap: int):
    """T_0^r: first strictly positive time at the origin, walk started at 0."""
    if cap <= 0:
        raise ValueError("cap must be positive")
    seed, probs, cumw, m = _env_args(env)
    t, cens = return_time_kernel(seed, probs, cumw, m, cap)
    return int(t), bool(cens)


def excursion_from_one(env: Environment, cap: int, side: int = 1) -> ExcursionRecord:
    """One excursion from +1 (or -1): depth before T_0 and duration T_0."""
    if cap <= 0:
        raise ValueError("cap must be positive")
    if side not in (1, -1):
        raise ValueError("side must be +1 or -1")
    seed, probs, cumw, m = _env_args(env)
    depth, dur, cens = excursion_kernel(seed, probs, cumw, m, side, cap)
    return ExcursionRecord(int(depth), int(dur), bool(cens))


def walk_path(env: Environment, nsteps: int, start: int = 0) -> np.ndarray:
    """X_0..X_n as an int64 array."""
    out = np.empty(nsteps + 1, dtype=np.int64)
    seed, probs, cumw, m = _env_args(env)
    walk_positions(seed, probs, cumw, m, nsteps, start, out)
    return out


def occupation_series(env: Environment, n_max: int):
    """Running (A+_i, A-_i) for i = 0..n_max (two int64 arrays)."""
    if n_max <= 0:
        raise ValueError("n_max must be positive")
    seed, probs, cumw, m = _env_args(env)
    a_plus = np.empty(n_max + 1, dtype=np.int64)
    a_minus = np.empty(n_max + 1, dtype=np.int64)
    ups = np.empty(n_max + 1, dtype=np.int64)
    downs = np.empty(n_max + 1, dtype=np.int64)
    walk_series(seed, probs, cumw, m, n_max, a_plus, a_minus, ups, downs)
    return a_plus, a_minus


def crossing_counts(env: Environment, n: int):
    """(u_n, d_n, L_n): 0->1 moves, 0->-1 moves, visits to 0 up to n."""
    seed, probs, cumw, m = _env_args(env)
    ap, am, u, d, zv, x = walk_final_counters(seed, probs, cumw, m, n)
    return int(u), int(d), int(zv)


def phi_functional(path: Sequence[int]) -> float:
    """Fraction of time at or above 0: A+_n / n for the discrete path."""
    path = np.asarray(path)
    n = len(path) - 1
    if n < 1:
        raise ValueError("path must contain at least one step")
    return float(np.count_nonzero(path >= 0) / n)


def inverse_occupation_path(path: Sequence[int], sign: int, m_grid: Sequence[int]):
    """X at T^+-_m for each m in m_grid; censored entries are returned as None.

    T^+-_m is the right-continuous inverse of the occupation count of the
    chosen half line (X >= 0 for +, X < 0 for -).
    """
    path = np.asarray(path)
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    mask = path >= 0 if sign == 1 else path < 0
    counts = np.cumsum(mask)
    out = []
    for mm in m_grid:
        pos = np.searchsorted(counts, mm, side="right")
        if pos >= len(path):
            out.append(None)
        else:
            out.append(int(path[pos]))
    return out


def psi_functional(path: Sequence[int], clock_horizon: int):
    """Negated path observed on the negative-occupation clock up to horizon.

    Returns an int64 array of length clock_horizon + 1, or None when the
    negative clock never reaches the horizon on this path (censored).
    """
    vals = inverse_occupation_path(path, -1, list(range(clock_horizon + 1)))
    if any(v is None for v in vals):
        return None
    return -np.asarray(vals, dtype=np.int64)


def negative_clock_value(env: Environment, clock_m: int) -> int:
    """X at T^-_m, sampled by concatenating down-excursions from -1.

    Exact in law for the walk observed on its negative-occupation clock; the
    time spent at or above 0 is skipped rather than simulated, which keeps
    the cost at O(clock_m) even when positive excursions are enormous.
    """
    seed, probs, cumw, m = _env_args(env)
    return int(negative_clock_value_kernel(seed, probs, cumw, m, clock_m))
