"""Branching processes coupled to walk excursions through the coin field.

V+ counts, per level, the up-crossings of right excursions: generation n of
V+ is the number of successes before the V_{n-1}-th failure in the coin
stream at site n (V- mirrors this at sites -1, -2, ... with the roles of
success and failure swapped).  Because walk and process read the same coins,
excursion depth equals the extinction time and duration equals twice the
total progeny minus one, exactly, path by path.

Two engines are provided: an exact-coin engine that consumes the
environment's coin field coin by coin (used by the coupling and squeeze
audits), and a law-exact fast engine that simulates the biased prefix of
each generation explicitly and fast-forwards the fair remainder with one
NB(m, 1/2) draw, which makes a generation O(1) instead of O(V).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np
from numba import njit, prange

from ._rng import derive_key, negbin_half, stream_u01, stream_u64
from .cookie_env import Environment, _ENV_STREAM_TAG
from .walk import ExcursionRecord, _coin, excursion_kernel, walk_series

_ENV_TAG = np.uint64(_ENV_STREAM_TAG)
_HUGE_CAP = np.int64(1) << 62


class CouplingViolation(AssertionError):
    """Raised when a pathwise coupling identity fails (an implementation bug)."""


@dataclass(frozen=True)
class BPRecord:
    """One branching-process lifetime."""

    kind: str  # "+" or "-"
    start: int
    sigma0: Optional[int]
    progeny: Optional[int]
    lifetime_max: int
    censored: bool

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "start": self.start,
            "sigma0": self.sigma0,
            "progeny": self.progeny,
            "max": self.lifetime_max,
            "censored": self.censored,
        }


def successes_before_mth_failure(coins: Iterable[int], m: int) -> int:
    """S(m): number of 1s read before the m-th 0 in the coin stream."""
    if m < 0:
        raise ValueError("m must be >= 0")
    if m == 0:
        return 0
    it: Iterator[int] = iter(coins)
    succ = 0
    fails = 0
    for c in it:
        if c:
            succ += 1
        else:
            fails += 1
            if fails == m:
                return succ
    raise ValueError("coin stream exhausted before the m-th failure")


def failures_before_mth_success(coins: Iterable[int], m: int) -> int:
    """F(m): number of 0s read before the m-th 1 in the coin stream."""
    if m < 0:
        raise ValueError("m must be >= 0")
    if m == 0:
        return 0
    it: Iterator[int] = iter(coins)
    succ = 0
    fails = 0
    for c in it:
        if c:
            succ += 1
            if succ == m:
                return fails
        else:
            fails += 1
    raise ValueError("coin stream exhausted before the m-th success")


# ---------------------------------------------------------------------------
# exact-coin engine (shared coin field; couples with the walk)
# ---------------------------------------------------------------------------

@njit(cache=True)
def bp_exact_kernel(seed, probs, cumw, m_cookies, plus, y, gen_cap, progeny_cap):
    """Iterate V over the environment's coins; returns (n, progeny, max, censored).

    Generation n reads the coins at site n (plus) or -n (minus) in stream
    order, exactly as the coupled walk would consume them.
    """
    v = np.int64(y)
    prog = np.int64(y)
    maxv = np.int64(y)
    n = np.int64(0)
    while v > 0:
        if n >= gen_cap or prog > progeny_cap:
            return n, prog, maxv, True
        n += 1
        site = n if plus else -n
        stops = np.int64(0)
        other = np.int64(0)
        i = np.int64(0)
        while stops < v:
            i += 1
            c = _coin(seed, site, i, probs, cumw, m_cookies)
            if c != plus:
                stops += 1
            else:
                other += 1
            if other + stops > progeny_cap + v:
                # runaway generation: flag as censored
                return n, prog + other, max(maxv, other), True
        v = other
        if v > 0:
            prog += v
            if v > maxv:
                maxv = v
    return n, prog, maxv, False


@njit(cache=True)
def bp_hitting_kernel(seed, probs, cumw, m_cookies, plus, y, level, gen_cap):
    """Race tau_level against sigma_0; returns (which, time).

    which = +1 when the process reaches >= level first, -1 on extinction
    first, 0 when censored at gen_cap.  Both times count generations n >= 1.
    """
    v = np.int64(y)
    n = np.int64(0)
    while n < gen_cap:
        n += 1
        site = n if plus else -n
        stops = np.int64(0)
        other = np.int64(0)
        i = np.int64(0)
        while stops < v:
            i += 1
            c = _coin(seed, site, i, probs, cumw, m_cookies)
            if c != plus:
                stops += 1
            else:
                other += 1
        v = other
        if v >= level:
            return np.int64(1), n
        if v == 0:
            return np.int64(-1), n
    return np.int64(0), n


# ---------------------------------------------------------------------------
# fast law-exact engine (stream-keyed; biased prefix + NB fast-forward)
# ---------------------------------------------------------------------------

@njit(inline="always", cache=True)
def _gen_fast(key, ctr, probs, cumw, m_cookies, plus, m):
    """One generation from size m; returns (offspring, ctr).

    The site's stack atom and its first M coins are simulated explicitly;
    once the biased prefix is exhausted the remaining count is one exact
    NB(r, 1/2) draw (fair coins), so the generation law is unchanged.
    """
    if m <= 0:
        return np.int64(0), ctr
    if m_cookies > 0:
        u = stream_u01(key, ctr)
        ctr += np.uint64(1)
        a = 0
        while u >= cumw[a]:
            a += 1
        other = np.int64(0)
        stops = np.int64(0)
        for i in range(m_cookies):
            uu = stream_u01(key, ctr)
            ctr += np.uint64(1)
            c = uu < probs[a, i]
            if c != plus:
                stops += 1
                if stops == m:
                    return other, ctr
            else:
                other += 1
        rem, ctr = negbin_half(key, ctr, m - stops)
        return other + rem, ctr
    return negbin_half(key, ctr, m)


@njit(cache=True)
def _critical_hybrid_run(key, ctr, probs, cumw, m_cookies, plus, y,
                         gen_cap, area_cap, switch_level, dl):
    """One full critical-drift lifetime, exact below switch_level.

    Above switch_level the limiting diffusion's log is a driftless local
    martingale, so level hitting follows an unbiased symmetric walk on a log
    grid of spacing dl; generations and progeny accumulate at their natural
    per-cell scales (V * dl^2 / 2 generations, V^2 * dl^2 / 2 progeny,
    randomized by a unit exponential), and the maximum above the top visited
    level gets the exact Brownian within-cell overshoot.  Log-scale tail
    statistics are insensitive to the smooth multiplicative noise this
    introduces, while runs whose sizes span many decades stay affordable.
    switch_level <= 0 disables the diffusion phase entirely.

    Returns (status, generations, progeny, ln_max, ctr) with status 0 on
    extinction, 1 when gen_cap generations pass first, 2 when the progeny
    exceeds area_cap first.
    """
    v = np.int64(y)
    tgen = 0.0
    area = float(y)
    maxv = float(y)
    ln_peak = -1.0e308
    use_diffusion = switch_level > 0
    ln_switch = math.log(switch_level) if use_diffusion else 0.0
    while True:
        while v > 0 and (not use_diffusion or v < switch_level):
            v, ctr = _gen_fast(key, ctr, probs, cumw, m_cookies, plus, v)
            tgen += 1.0
            if v > 0:
                area += v
                if v > maxv:
                    maxv = float(v)
                if area > area_cap:
                    return np.int64(2), tgen, area, max(math.log(maxv), ln_peak), ctr
            if tgen >= gen_cap and v > 0:
                return np.int64(1), tgen, area, max(math.log(maxv), ln_peak), ctr
        if v == 0:
            return np.int64(0), tgen, area, max(math.log(maxv), ln_peak), ctr
        lv = math.log(float(v))
        if lv > ln_peak:
            ln_peak = lv
        while lv >= ln_switch:
            e = -math.log(stream_u01(key, ctr))
            ctr += np.uint64(1)
            gens = math.exp(lv) * dl * dl * 0.5 * e
            tgen += gens
            area += math.exp(lv) * gens
            if area > area_cap:
                return np.int64(2), tgen, area, ln_peak, ctr
            if tgen >= gen_cap:
                return np.int64(1), tgen, area, ln_peak, ctr
            up = (stream_u64(key, ctr) >> np.uint64(63)) == np.uint64(0)
            ctr += np.uint64(1)
            if up:
                lv += dl
                if lv > ln_peak:
                    ln_peak = lv
            else:
                if lv >= ln_peak:
                    uu = stream_u01(key, ctr)
                    ctr += np.uint64(1)
                    root = math.sqrt((2.0 + uu) * (2.0 + uu) - 8.0 * uu * (1.0 - uu))
                    ln_peak = lv + dl * ((2.0 + uu) - root) / (2.0 * uu)
                lv -= dl
        v = np.int64(math.exp(lv) + 0.5)
        if v <= 0:
            v = np.int64(1)
        if v > maxv:
            maxv = float(v)


@njit(cache=True, parallel=True)
def depth_tail_batch(master_seed, probs, cumw, m_cookies, plus, y, gen_cap, reps,
                     out_sigma, aux_progeny, aux_max, switch_level=0, dl=0.25):
    """Extinction generation per replica (inf when alive at gen_cap).

    switch_level > 0 enables the critical-drift diffusion acceleration; the
    first len(aux_progeny) replicas also report progeny and lifetime max for
    the raw record stream (scale-accurate in accelerated runs).
    """
    n_aux = aux_progeny.shape[0]
    inf = np.inf
    for r in prange(reps):
        key = derive_key(np.uint64(master_seed), _ENV_TAG, np.uint64(r))
        status, tgen, area, lnmax, ctr = _critical_hybrid_run(
            key, np.uint64(0), probs, cumw, m_cookies, plus, y,
            float(gen_cap), 1.0e300, switch_level, dl,
        )
        out_sigma[r] = tgen if status == 0 else inf
        if r < n_aux:
            aux_progeny[r] = area
            aux_max[r] = math.exp(lnmax)


@njit(cache=True, parallel=True)
def progeny_race_batch(master_seed, probs, cumw, m_cookies, plus, y, threshold, reps, out,
                       switch_level=0, dl=0.25):
    """Total progeny per replica, stopped once it exceeds threshold.

    out[r] <= threshold means the process died with that progeny; a larger
    value resolves every event {progeny > mm} for mm <= threshold.
    """
    for r in prange(reps):
        key = derive_key(np.uint64(master_seed), _ENV_TAG, np.uint64(r))
        status, tgen, area, lnmax, ctr = _critical_hybrid_run(
            key, np.uint64(0), probs, cumw, m_cookies, plus, y,
            1.0e300, float(threshold), switch_level, dl,
        )
        out[r] = area


@njit(cache=True, parallel=True)
def return_race_batch(master_seed, probs, cumw, m_cookies, n_threshold, reps, out):
    """Indicator of {T_0^r > n} per replica via the coupled identity T_0^r = 2*Sigma.

    The first coin at the origin picks the excursion side; the coupled
    process of that side is then run from one particle until its progeny
    resolves the race against n/2.
    """
    for r in prange(reps):
        key = derive_key(np.uint64(master_seed), _ENV_TAG, np.uint64(r))
        ctr = np.uint64(0)
        if m_cookies > 0:
            u = stream_u01(key, ctr)
            ctr += np.uint64(1)
            a = 0
            while u >= cumw[a]:
                a += 1
            uu = stream_u01(key, ctr)
            ctr += np.uint64(1)
            right = uu < probs[a, 0]
        else:
            right = (stream_u64(key, ctr) >> np.uint64(63)) == np.uint64(0)
            ctr += np.uint64(1)
        v = np.int64(1)
        tot = np.int64(1)
        while v > 0 and 2 * tot <= n_threshold:
            v, ctr = _gen_fast(key, ctr, probs, cumw, m_cookies, right, v)
            tot += v
        out[r] = 1 if 2 * tot > n_threshold else 0


@njit(cache=True, parallel=True)
def hitting_race_batch(master_seed, probs, cumw, m_cookies, plus, y, level, gen_cap, reps, out):
    """+1 if the process reaches >= level before extinction, -1 if it dies, 0 censored."""
    for r in prange(reps):
        key = derive_key(np.uint64(master_seed), _ENV_TAG, np.uint64(r))
        ctr = np.uint64(0)
        v = np.int64(y)
        n = np.int64(0)
        res = np.int64(0)
        while n < gen_cap:
            n += 1
            v, ctr = _gen_fast(key, ctr, probs, cumw, m_cookies, plus, v)
            if v >= level:
                res = 1
                break
            if v == 0:
                res = -1
                break
        out[r] = res


@njit(cache=True, parallel=True)
def da_marginal_batch(master_seed, probs, cumw, m_cookies, y, horizon, stop_level, reps, out):
    """V_{[t] ^ sigma_eps} / y at t = horizon: the scaled, stopped marginal."""
    for r in prange(reps):
        key = derive_key(np.uint64(master_seed), _ENV_TAG, np.uint64(r))
        ctr = np.uint64(0)
        v = np.int64(y)
        for _ in range(horizon):
            v, ctr = _gen_fast(key, ctr, probs, cumw, m_cookies, True, v)
            if v <= stop_level:
                break
        out[r] = v / y


@njit(cache=True, parallel=True)
def lifetime_hybrid_batch(
    master_seed, probs, cumw, m_cookies, y, switch_level, dl, reps, out_lnmax, out_lnprog
):
    """(ln max, ln progeny) over full critical lifetimes, however large.

    Runs every lifetime to extinction through the exact/diffusion hybrid, so
    no run is censored even when the maximum spans dozens of decades.
    """
    for r in prange(reps):
        key = derive_key(np.uint64(master_seed), _ENV_TAG, np.uint64(r))
        status, tgen, area, lnmax, ctr = _critical_hybrid_run(
            key, np.uint64(0), probs, cumw, m_cookies, True, y,
            1.0e300, 1.0e300, switch_level, dl,
        )
        out_lnmax[r] = lnmax
        out_lnprog[r] = math.log(area)


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def _env_args(env: Environment):
    return np.uint64(env.seed_u64), env.atom_probs, env.atom_cumw, np.int64(env.m)


def _check_kind(kind: str) -> bool:
    if kind not in ("+", "-"):
        raise ValueError("kind must be '+' or '-'")
    return kind == "+"


def run_bp(env: Environment, kind: str, y: int, cap: int,
           progeny_cap: Optional[int] = None) -> BPRecord:
    """Run V+ or V- from y particles on the environment's coin field.

    Stops at extinction, at cap generations, or (optionally) once the total
    progeny exceeds progeny_cap; the two cap exits set the censored flag.
    """
    plus = _check_kind(kind)
    if y < 1:
        raise ValueError("start y must be >= 1")
    if cap <= 0:
        raise ValueError("cap must be positive")
    seed, probs, cumw, m = _env_args(env)
    pcap = _HUGE_CAP if progeny_cap is None else np.int64(progeny_cap)
    n, prog, maxv, cens = bp_exact_kernel(seed, probs, cumw, m, plus, y, cap, pcap)
    if cens:
        return BPRecord(kind, y, None, None, int(maxv), True)
    return BPRecord(kind, y, int(n), int(prog), int(maxv), False)


def hitting(env: Environment, kind: str, y: int, level: int, cap: int):
    """Whether the process reaches >= level before extinction.

    Returns ("tau" | "sigma" | "censored", generation); both stopping times
    count generations n >= 1, so a start y >= level still reports the first
    generation's outcome.
    """
    plus = _check_kind(kind)
    if y < 1:
        raise ValueError("start y must be >= 1")
    seed, probs, cumw, m = _env_args(env)
    which, n = bp_hitting_kernel(seed, probs, cumw, m, plus, y, level, cap)
    name = {1: "tau", -1: "sigma", 0: "censored"}[int(which)]
    return name, int(n)


def coupled_excursion(env: Environment, cap: int):
    """Walk excursion from 1 and its coupled V+ from one particle.

    Both read the identical coin field.  On non-censored returns the exact
    identities depth == sigma_0 and duration == 2*progeny - 1 are asserted;
    a violation raises CouplingViolation (it means a bug, never noise).
    """
    if cap <= 0:
        raise ValueError("cap must be positive")
    seed, probs, cumw, m = _env_args(env)
    depth, dur, wc = excursion_kernel(seed, probs, cumw, m, 1, cap)
    # duration <= cap  <=>  progeny <= (cap + 1) // 2, so both censor together
    pcap = (cap + 1) // 2
    n, prog, maxv, bc = bp_exact_kernel(
        seed, probs, cumw, m, True, 1, _HUGE_CAP, np.int64(pcap)
    )
    if bool(wc) != bool(bc):
        raise CouplingViolation(
            f"walk censored={bool(wc)} but process censored={bool(bc)}"
        )
    if not wc:
        if depth != n or dur != 2 * prog - 1:
            raise CouplingViolation(
                f"depth {depth} vs sigma0 {n}; duration {dur} vs 2*progeny-1 {2 * prog - 1}"
            )
        walk_rec = ExcursionRecord(int(depth), int(dur), False)
        bp_rec = BPRecord("+", 1, int(n), int(prog), int(maxv), False)
    else:
        walk_rec = ExcursionRecord(int(depth), int(dur), True)
        bp_rec = BPRecord("+", 1, None, None, int(maxv), True)
    return walk_rec, bp_rec


@njit(cache=True, parallel=True)
def coupling_audit_batch(master_seed, probs, cumw, m_cookies, cap, reps,
                         depth_out, dur_out, sigma_out, prog_out, cens_out, viol_out):
    """Walk excursion and coupled process side by side on the shared coins.

    viol_out[r] = 1 when censoring disagrees or a non-censored pair breaks
    depth == sigma_0 or duration == 2*progeny - 1.
    """
    pcap = np.int64((cap + 1) // 2)
    for r in prange(reps):
        seed = derive_key(np.uint64(master_seed), _ENV_TAG, np.uint64(r))
        depth, dur, wc = excursion_kernel(seed, probs, cumw, m_cookies, 1, cap)
        n, prog, maxv, bc = bp_exact_kernel(
            seed, probs, cumw, m_cookies, True, 1, _HUGE_CAP, pcap
        )
        depth_out[r] = depth
        dur_out[r] = dur
        sigma_out[r] = n
        prog_out[r] = prog
        if wc and bc:
            cens_out[r] = 1
            viol_out[r] = 0
        elif wc != bc:
            cens_out[r] = 1
            viol_out[r] = 1
        else:
            cens_out[r] = 0
            viol_out[r] = 0 if (depth == n and dur == 2 * prog - 1) else 1


@njit(cache=True)
def _progeny_table_kernel(seed, probs, cumw, m_cookies, plus, kmax, progeny_cap, out_prog, out_cens):
    """Sigma_k for k = 0..kmax on the shared coin field (out arrays len kmax+1).

    Entry k censors (out_cens[k] = 1) once its partial progeny exceeds
    progeny_cap, which for completed-excursion counts can only happen on an
    implementation bug or for the topmost, possibly mid-flight count.
    """
    out_prog[0] = 0
    out_cens[0] = 0
    for k in range(1, kmax + 1):
        n, prog, maxv, cens = bp_exact_kernel(
            seed, probs, cumw, m_cookies, plus, k, _HUGE_CAP, progeny_cap
        )
        out_prog[k] = prog
        out_cens[k] = 1 if cens else 0


def squeeze_audit(env: Environment, n: int):
    """Check the pathwise occupation-progeny squeeze at every time i <= n.

    Runs the walk to time n, reads off the coupled progeny counts of the
    up- and down-crossing processes from the same coin field, and verifies
        2*Sigma+_{u_i - 1} <= A+_i <= 2*Sigma+_{u_i} + d_i + 1
        2*Sigma-_{d_i - 1} - d_i <= A-_i <= 2*Sigma-_{d_i}
    for every i.  Returns (violations, checked) where checked counts the
    inequality evaluations that could be resolved exactly (a censored topmost
    progeny count lower-bounds the true value, so upper bounds it certifies
    still count as checked).
    """
    seed, probs, cumw, m = _env_args(env)
    a_plus = np.empty(n + 1, dtype=np.int64)
    a_minus = np.empty(n + 1, dtype=np.int64)
    ups = np.empty(n + 1, dtype=np.int64)
    downs = np.empty(n + 1, dtype=np.int64)
    walk_series(seed, probs, cumw, m, n, a_plus, a_minus, ups, downs)
    u_n = int(ups[-1])
    d_n = int(downs[-1])
    pcap = np.int64(2 * (n + 1) + 4)
    prog_p = np.empty(u_n + 1, dtype=np.int64)
    cens_p = np.empty(u_n + 1, dtype=np.int64)
    prog_m = np.empty(d_n + 1, dtype=np.int64)
    cens_m = np.empty(d_n + 1, dtype=np.int64)
    _progeny_table_kernel(seed, probs, cumw, m, True, u_n, pcap, prog_p, cens_p)
    _progeny_table_kernel(seed, probs, cumw, m, False, d_n, pcap, prog_m, cens_m)
    if np.any(cens_p[:-1] == 1) or np.any(cens_m[:-1] == 1):
        # completed excursions can never outgrow the elapsed time
        return n + 1, n + 1
    violations = 0
    lower_p = 2 * np.where(ups > 0, prog_p[np.maximum(ups - 1, 0)], 0)
    lower_m = 2 * np.where(downs > 0, prog_m[np.maximum(downs - 1, 0)], 0) - downs
    violations += int(np.count_nonzero(lower_p > a_plus))
    violations += int(np.count_nonzero(lower_m > a_minus))
    # upper bounds: a censored top count is a valid lower bound on Sigma,
    # so any bound it already satisfies is certified
    upper_p = 2 * prog_p[ups] + downs + 1
    upper_m = 2 * prog_m[downs]
    violations += int(np.count_nonzero(a_plus > upper_p))
    violations += int(np.count_nonzero(a_minus > upper_m))
    return violations, 4 * (n + 1)


def lifetime_ratio_stats(records):
    """Per-record (ln progeny / ln max, ln start / ln max) for ratio tests.

    Censored records are rejected; records with lifetime max <= 1 are
    excluded as log-degenerate.
    """
    r1 = []
    r2 = []
    for rec in records:
        if rec.censored:
            raise ValueError("lifetime ratios need non-censored records")
        if rec.start <= 1:
            raise ValueError("lifetime ratios need start y > 1")
        if rec.lifetime_max <= 1:
            continue
        lmax = math.log(rec.lifetime_max)
        r1.append(math.log(rec.progeny) / lmax)
        r2.append(math.log(rec.start) / lmax)
    return np.asarray(r1), np.asarray(r2)
