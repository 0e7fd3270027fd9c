"""Continuum limits: drifted square-root diffusions and perturbed Brownian motion.

The diffusion dY = +-dt + sqrt(2Y) dB is integrated by Euler-Maruyama with
full truncation (diffusion coefficient sqrt(2*max(Y,0)), state clamped at 0),
and level stops are detected at grid crossings.  W_{alpha,beta} is built per
Gaussian increment by solving the scalar fixed point
w = b + alpha*sup + beta*inf; the reflected processes W_alpha / W_beta are
produced only through the occupation-time change of W_{alpha,beta}, never by
direct local-time simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit, prange

from ._rng import derive_key, normal_pair

_GAUSS_TAG = np.uint64(0x4741555353544D31)


@dataclass(frozen=True)
class SDEPath:
    """A discretized diffusion path, possibly stopped before the horizon."""

    dt: float
    values: np.ndarray
    stopped_at: Optional[int]  # index into values, None if the horizon was reached
    reason: str  # "level" | "horizon"
    clamp_events: int = 0


@dataclass(frozen=True)
class PBMState:
    """Final state of a perturbed-Brownian-motion recursion step."""

    alpha: float
    beta: float
    b_value: float
    run_max: float
    run_min: float
    w_value: float

    def residual(self) -> float:
        """Fixed-point defect w - (b + alpha*max + beta*min); ~1e-16 when healthy."""
        return self.w_value - (self.b_value + self.alpha * self.run_max + self.beta * self.run_min)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _bessel_path_kernel(key, y0, drift, dt, eps_level, max_steps, out):
    """Fill out with the truncated-EM path; returns (n_filled, stopped, clamps).

    Stops at the first grid point with Y <= eps_level (when eps_level >= 0)
    or after max_steps.
    """
    sq_dt = math.sqrt(dt)
    y = y0
    out[0] = y
    ctr = np.uint64(0)
    clamps = 0
    n = 0
    have = False
    z2 = 0.0
    while n < max_steps:
        if have:
            z = z2
            have = False
        else:
            z1, z2, ctr = normal_pair(key, ctr)
            z = z1
            have = True
        y = y + drift * dt + math.sqrt(2.0 * max(y, 0.0)) * sq_dt * z
        if y < 0.0:
            y = 0.0
            clamps += 1
        n += 1
        out[n] = y
        if eps_level >= 0.0 and y <= eps_level:
            return n, True, clamps
    return n, False, clamps


@njit(cache=True, parallel=True)
def bessel_hit_batch(master_seed, y0, lo, hi, dt, max_steps, reps, out):
    """Race tau_hi against tau_lo for dY = dt + sqrt(2Y) dB from y0.

    out[r] = +1 (hi first), -1 (lo first), 0 (censored at max_steps).
    """
    sq_dt = math.sqrt(dt)
    for r in prange(reps):
        key = derive_key(np.uint64(master_seed), _GAUSS_TAG, np.uint64(r))
        ctr = np.uint64(0)
        y = y0
        res = np.int64(0)
        have = False
        z2 = 0.0
        for _ in range(max_steps):
            if have:
                z = z2
                have = False
            else:
                z1, z2, ctr = normal_pair(key, ctr)
                z = z1
                have = True
            y = y + dt + math.sqrt(2.0 * max(y, 0.0)) * sq_dt * z
            if y < 0.0:
                y = 0.0
            if y >= hi:
                res = 1
                break
            if y <= lo:
                res = -1
                break
        out[r] = res


@njit(cache=True, parallel=True)
def bessel_marginal_batch(master_seed, y0, dt, nsteps, stop_level, reps, out):
    """Y at t = nsteps*dt, frozen at the first grid crossing below stop_level."""
    sq_dt = math.sqrt(dt)
    for r in prange(reps):
        key = derive_key(np.uint64(master_seed), _GAUSS_TAG, np.uint64(r))
        ctr = np.uint64(0)
        y = y0
        have = False
        z2 = 0.0
        for _ in range(nsteps):
            if have:
                z = z2
                have = False
            else:
                z1, z2, ctr = normal_pair(key, ctr)
                z = z1
                have = True
            y = y + dt + math.sqrt(2.0 * max(y, 0.0)) * sq_dt * z
            if y < 0.0:
                y = 0.0
            if y <= stop_level:
                break
        out[r] = y


@njit(cache=True, parallel=True)
def bessel_integral_exceeds_batch(master_seed, y0, dt, eps_level, h, max_steps, reps, out):
    """Indicator of {integral of Y up to tau_eps > h}, resolved lazily.

    The race stops as soon as the running trapezoid integral exceeds h (the
    event holds) or Y crosses eps_level (the event is decided by the value).
    out[r] = 1/0, or -1 if censored at max_steps.
    """
    sq_dt = math.sqrt(dt)
    for r in prange(reps):
        key = derive_key(np.uint64(master_seed), _GAUSS_TAG, np.uint64(r))
        ctr = np.uint64(0)
        y = y0
        acc = 0.0
        res = np.int64(-1)
        have = False
        z2 = 0.0
        for _ in range(max_steps):
            if have:
                z = z2
                have = False
            else:
                z1, z2, ctr = normal_pair(key, ctr)
                z = z1
                have = True
            y_new = y + dt + math.sqrt(2.0 * max(y, 0.0)) * sq_dt * z
            if y_new < 0.0:
                y_new = 0.0
            acc += 0.5 * (y + y_new) * dt
            y = y_new
            if acc > h:
                res = 1
                break
            if y <= eps_level:
                res = 1 if acc > h else 0
                break
        out[r] = res


@njit(inline="always", cache=True)
def _pbm_step(b, run_max, run_min, alpha, beta):
    """Solve the scalar fixed point for one increment; returns (w, max, min)."""
    w = b + alpha * run_max + beta * run_min
    if w > run_max:
        run_max = (b + beta * run_min) / (1.0 - alpha)
        w = run_max
    elif w < run_min:
        run_min = (b + alpha * run_max) / (1.0 - beta)
        w = run_min
    return w, run_max, run_min


@njit(cache=True)
def _pbm_path_kernel(key, alpha, beta, dt, nsteps, w_out, b_out, max_out, min_out):
    sq_dt = math.sqrt(dt)
    b = 0.0
    run_max = 0.0
    run_min = 0.0
    w_out[0] = 0.0
    b_out[0] = 0.0
    max_out[0] = 0.0
    min_out[0] = 0.0
    ctr = np.uint64(0)
    have = False
    z2 = 0.0
    for n in range(nsteps):
        if have:
            z = z2
            have = False
        else:
            z1, z2, ctr = normal_pair(key, ctr)
            z = z1
            have = True
        b += sq_dt * z
        w, run_max, run_min = _pbm_step(b, run_max, run_min, alpha, beta)
        w_out[n + 1] = w
        b_out[n + 1] = b
        max_out[n + 1] = run_max
        min_out[n + 1] = run_min


@njit(cache=True, parallel=True)
def pbm_occupation_batch(master_seed, alpha, beta, dt, nsteps, reps, out):
    """Fraction of [0, nsteps*dt] with W_{alpha,beta} >= 0 (left endpoints)."""
    sq_dt = math.sqrt(dt)
    for r in prange(reps):
        key = derive_key(np.uint64(master_seed), _GAUSS_TAG, np.uint64(r))
        ctr = np.uint64(0)
        b = 0.0
        run_max = 0.0
        run_min = 0.0
        w = 0.0
        nonneg = np.int64(0)
        have = False
        z2 = 0.0
        for _ in range(nsteps):
            if w >= 0.0:
                nonneg += 1
            if have:
                z = z2
                have = False
            else:
                z1, z2, ctr = normal_pair(key, ctr)
                z = z1
                have = True
            b += sq_dt * z
            w, run_max, run_min = _pbm_step(b, run_max, run_min, alpha, beta)
        out[r] = nonneg / nsteps


@njit(cache=True, parallel=True)
def pbm_neg_clock_batch(master_seed, alpha, beta, dt, clock_target, max_steps, reps, out, cens):
    """-W_{alpha,beta} at the first time the negative-occupation clock passes
    clock_target: a sample of W_beta(clock_target) by the time-change identity."""
    sq_dt = math.sqrt(dt)
    for r in prange(reps):
        key = derive_key(np.uint64(master_seed), _GAUSS_TAG, np.uint64(r))
        ctr = np.uint64(0)
        b = 0.0
        run_max = 0.0
        run_min = 0.0
        w = 0.0
        clock = 0.0
        censored = np.int64(1)
        have = False
        z2 = 0.0
        for _ in range(max_steps):
            if have:
                z = z2
                have = False
            else:
                z1, z2, ctr = normal_pair(key, ctr)
                z = z1
                have = True
            b += sq_dt * z
            w, run_max, run_min = _pbm_step(b, run_max, run_min, alpha, beta)
            if w < 0.0:
                clock += dt
                if clock > clock_target:
                    out[r] = -w
                    censored = 0
                    break
        cens[r] = censored
        if censored == 1:
            out[r] = 0.0


@njit(cache=True, parallel=True)
def bm_running_max_batch(master_seed, dt, nsteps, reps, out):
    """Running maximum of a standard Brownian path at the horizon."""
    sq_dt = math.sqrt(dt)
    for r in prange(reps):
        key = derive_key(np.uint64(master_seed), _GAUSS_TAG, np.uint64(r))
        ctr = np.uint64(0)
        b = 0.0
        m = 0.0
        have = False
        z2 = 0.0
        for _ in range(nsteps):
            if have:
                z = z2
                have = False
            else:
                z1, z2, ctr = normal_pair(key, ctr)
                z = z1
                have = True
            b += sq_dt * z
            if b > m:
                m = b
        out[r] = m


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def simulate_drift_bessel(
    y0: float,
    drift: int,
    dt: float,
    horizon: float,
    eps_level: Optional[float] = None,
    seed: int = 0,
) -> SDEPath:
    """Integrate dY = drift*dt + sqrt(2Y) dB from y0 with full truncation.

    Stops at the first grid point at or below eps_level (when given) or at
    the horizon.  drift must be +1 or -1.
    """
    if y0 <= 0:
        raise ValueError("y0 must be positive")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if drift not in (1, -1):
        raise ValueError("drift must be +1 or -1")
    max_steps = int(round(horizon / dt))
    out = np.empty(max_steps + 1, dtype=np.float64)
    key = derive_key(np.uint64(seed), _GAUSS_TAG, np.uint64(0))
    eps = -1.0 if eps_level is None else float(eps_level)
    n, stopped, clamps = _bessel_path_kernel(key, float(y0), float(drift), dt, eps, max_steps, out)
    values = out[: n + 1].copy()
    if stopped:
        return SDEPath(dt, values, int(n), "level", int(clamps))
    return SDEPath(dt, values, None, "horizon", int(clamps))


def path_integral(path: SDEPath) -> float:
    """Trapezoidal integral of the path values over its (stopped) interval."""
    v = path.values
    if len(v) == 0:
        raise ValueError("empty path")
    if len(v) == 1:
        return 0.0
    return float(np.trapezoid(v, dx=path.dt))


def simulate_pbm(alpha: float, beta: float, dt: float, horizon: float, seed: int = 0):
    """Simulate W_{alpha,beta} on [0, horizon].

    Returns (w, b, run_max, run_min) arrays sharing one driving Brownian path
    so alternative constructions can be driven identically, plus the final
    PBMState.  Requires alpha < 1 and beta < 1.
    """
    if not (alpha < 1.0 and beta < 1.0):
        raise ValueError("perturbation parameters must both be < 1")
    nsteps = int(round(horizon / dt))
    w = np.empty(nsteps + 1)
    b = np.empty(nsteps + 1)
    mx = np.empty(nsteps + 1)
    mn = np.empty(nsteps + 1)
    key = derive_key(np.uint64(seed), _GAUSS_TAG, np.uint64(0))
    _pbm_path_kernel(key, float(alpha), float(beta), dt, nsteps, w, b, mx, mn)
    state = PBMState(alpha, beta, float(b[-1]), float(mx[-1]), float(mn[-1]), float(w[-1]))
    return w, b, mx, mn, state


def pbm_beta_zero_closed_form(b_path: Sequence[float], alpha: float) -> np.ndarray:
    """W_{alpha,0} from its driving path: B(t) + alpha/(1-alpha) * max B."""
    if not alpha < 1.0:
        raise ValueError("alpha must be < 1")
    b = np.asarray(b_path, dtype=np.float64)
    return b + (alpha / (1.0 - alpha)) * np.maximum.accumulate(b)


def running_max_process(b_path: Sequence[float]) -> np.ndarray:
    """Prefix maxima of a discrete path."""
    return np.maximum.accumulate(np.asarray(b_path, dtype=np.float64))


def time_changed_pbm(w_path: Sequence[float], sign: int, clock_grid: Sequence[float], dt: float):
    """Observe a path on its +-half-line occupation clock.

    For sign=+ returns W(T^+(s)) (a reflected W_alpha sample); for sign=-
    returns -W(T^-(s)) (a W_beta sample).  Entries whose clock time is never
    reached are returned as nan (censored).
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    w = np.asarray(w_path, dtype=np.float64)
    occupied = w >= 0.0 if sign == 1 else w < 0.0
    clock = np.cumsum(occupied) * dt
    clock_grid = np.asarray(clock_grid, dtype=np.float64)
    out = np.empty(len(clock_grid))
    for k, s in enumerate(clock_grid):
        pos = np.searchsorted(clock, s, side="right")
        if pos >= len(w):
            out[k] = np.nan
        else:
            out[k] = w[pos] if sign == 1 else -w[pos]
    return out
