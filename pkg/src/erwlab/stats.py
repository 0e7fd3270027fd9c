"""Statistical engine: reference laws, KS distances, and tail estimators.

Tail probabilities in the critical drift regime converge at 1/log speed and
their limiting constants have no closed form, so the estimators here report
stabilization diagnostics (scaled sequences, dyadic ratios, fitted log-log
slopes) rather than absolute constants.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

_BETA_MAXIT = 400
_BETA_EPS = 1e-15
_BETA_FPMIN = 1e-300


@dataclass(frozen=True)
class EmpiricalSample:
    """A sorted sample plus an explicit count of censored observations."""

    values: np.ndarray
    censored_count: int = 0

    @classmethod
    def from_values(cls, values, censored_count: int = 0) -> "EmpiricalSample":
        arr = np.sort(np.asarray(values, dtype=np.float64))
        if censored_count < 0:
            raise ValueError("censored_count must be >= 0")
        return cls(arr, censored_count)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class TestReport:
    """One empirical-vs-reference comparison with its pass/fail verdict."""

    name: str
    reference: str
    value: float
    tolerance: float
    passed: bool
    sample_size: int
    seeds: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "reference": self.reference,
            "value": self.value,
            "tolerance": self.tolerance,
            "passed": bool(self.passed),
            "sample_size": self.sample_size,
            "seeds": self.seeds,
            "details": self.details,
        }


def make_report(name, reference, value, tolerance, sample_size, seeds=None, details=None):
    """TestReport with the invariant passed == (value <= tolerance)."""
    return TestReport(
        name=name,
        reference=reference,
        value=float(value),
        tolerance=float(tolerance),
        passed=bool(value <= tolerance),
        sample_size=int(sample_size),
        seeds=dict(seeds or {}),
        details=dict(details or {}),
    )


# ---------------------------------------------------------------------------
# reference laws
# ---------------------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETA_FPMIN:
        d = _BETA_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_FPMIN:
            d = _BETA_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETA_FPMIN:
            c = _BETA_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_FPMIN:
            d = _BETA_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETA_FPMIN:
            c = _BETA_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction failed for a={a}, b={b}, x={x}")


def beta_cdf(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) by continued fraction.

    The degenerate pair (a, b) = (1, 0) is the point mass at 1 (used for the
    occupation law at critical drift); otherwise a, b must be positive.
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if a == 1.0 and b == 0.0:
        return 1.0 if x >= 1.0 else 0.0
    if a <= 0.0 or b <= 0.0:
        raise ValueError("shape parameters must be positive")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    lbeta = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    front = math.exp(lbeta + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def beta_cdf_callable(a: float, b: float) -> Callable[[float], float]:
    return lambda x: beta_cdf(a, b, x)


def uniform_cdf(x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    return x


def half_normal_cdf(x: float) -> float:
    """CDF of |N(0,1)|; the law of the Brownian running maximum at t=1."""
    if x <= 0.0:
        return 0.0
    return math.erf(x / math.sqrt(2.0))


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------

def ks_statistic(sample: EmpiricalSample, cdf: Callable[[float], float]) -> float:
    """Sup distance between the sample ECDF and a reference CDF."""
    if len(sample) == 0:
        raise ValueError("empty sample")
    if sample.censored_count != 0:
        raise ValueError("resolve censoring before a one-sample KS test")
    n = len(sample)
    f = np.array([cdf(v) for v in sample.values])
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - f)
    d_minus = np.max(f - (i - 1) / n)
    return float(max(d_plus, d_minus, 0.0))


def two_sample_ks(a: EmpiricalSample, b: EmpiricalSample) -> float:
    """Sup distance between two empirical CDFs."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty sample")
    if a.censored_count or b.censored_count:
        raise ValueError("resolve censoring before a two-sample KS test")
    va, vb = a.values, b.values
    grid = np.concatenate([va, vb])
    grid.sort(kind="mergesort")
    fa = np.searchsorted(va, grid, side="right") / len(va)
    fb = np.searchsorted(vb, grid, side="right") / len(vb)
    return float(np.max(np.abs(fa - fb)))


# ---------------------------------------------------------------------------
# tail estimation
# ---------------------------------------------------------------------------

def loglog_slope(ns: Sequence[float], ps: Sequence[float]) -> float:
    """Least-squares slope of log p against log n over a dyadic level grid."""
    ns = np.asarray(ns, dtype=np.float64)
    ps = np.asarray(ps, dtype=np.float64)
    keep = (ps > 0.0) & (ps < 1.0)
    if not np.all(keep):
        warnings.warn("degenerate tail estimates excluded from the log-log fit (undersampled tail)")
    ns, ps = ns[keep], ps[keep]
    if len(ns) < 2:
        raise ValueError("need at least two usable levels for a slope")
    x = np.log(ns)
    y = np.log(ps)
    x = x - x.mean()
    return float(np.dot(x, y) / np.dot(x, x))


def tail_constant_sequence(ns: Sequence[float], ps: Sequence[float]):
    """The sequence (ln n) * p(n) and its successive ratios.

    A stabilizing sequence (ratios near 1) evidences a 1/log tail; a decaying
    sequence separates the polynomial-tail regime.
    """
    ns = np.asarray(ns, dtype=np.float64)
    ps = np.asarray(ps, dtype=np.float64)
    keep = ps > 0.0
    if not np.all(keep):
        warnings.warn("zero tail estimates excluded (undersampled tail)")
    ns, ps = ns[keep], ps[keep]
    seq = np.log(ns) * ps
    ratios = seq[1:] / seq[:-1] if len(seq) > 1 else np.empty(0)
    return seq, ratios


def power_scaled_sequence(ns, ps, epsilon: float):
    """n^epsilon * p(n): must grow along the grid when the tail is 1/log."""
    ns = np.asarray(ns, dtype=np.float64)
    ps = np.asarray(ps, dtype=np.float64)
    return ns**epsilon * ps


def ret1_consistency(
    n: int,
    return_tail_p: float,
    excursion_tail_p: float,
    first_cookie_mean: float,
    tolerance: float,
    sample_size: int = 0,
    seeds: Optional[dict] = None,
) -> TestReport:
    """Cross-check the return-time tail against the excursion-duration tail.

    Compares the direct estimate of (ln n) P_0(T_0^r > n) with
    (ln n) P_1(T_0 > n) * E[omega_0(1)] (at negative critical drift the
    caller passes the mirrored excursion tail and E[1 - omega_0(1)]); the
    report value is the relative discrepancy between the two.
    """
    ln_n = math.log(n)
    direct = ln_n * return_tail_p
    via_excursion = ln_n * excursion_tail_p * first_cookie_mean
    if via_excursion <= 0.0:
        raise ValueError("insufficient uncensored mass in the excursion tail")
    rel = abs(direct - via_excursion) / via_excursion
    return make_report(
        name=f"return_tail_consistency_n{n}",
        reference="scaled return tail vs first-cookie-weighted excursion tail",
        value=rel,
        tolerance=tolerance,
        sample_size=sample_size,
        seeds=seeds,
        details={
            "direct": direct,
            "via_excursion": via_excursion,
            "first_cookie_mean": first_cookie_mean,
        },
    )
