"""Cookie-stack distributions and reproducible i.i.d. environments.

A site's cookie stack is a finite vector of jump-right probabilities
(omega(1), ..., omega(M)); from visit M+1 on, every coin is fair.  The
environment law is a finite mixture of deterministic stacks, which realizes
any target total drift delta while keeping validation exact.  Coins are
never stored: eta_x(i) is recomputed on demand from (master_seed, x, i).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from ._rng import derive_key, py_site_u01

_WEIGHT_TOL = 1e-12
_ENV_STREAM_TAG = 0x45564E53  # per-replica environment seeds


@dataclass(frozen=True)
class CookieStack:
    """One stack of per-visit jump-right probabilities omega(1..M)."""

    probs: tuple

    def __init__(self, probs: Sequence[float]):
        object.__setattr__(self, "probs", tuple(float(p) for p in probs))
        for p in self.probs:
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"cookie probability {p} outside [0, 1]")

    @property
    def m(self) -> int:
        return len(self.probs)

    def drift(self) -> Fraction:
        """Total drift stored in this stack, sum of 2*omega(i) - 1, exact."""
        total = Fraction(0)
        for p in self.probs:
            total += 2 * Fraction(p) - 1
        return total


@dataclass(frozen=True)
class StackDistribution:
    """Finite mixture of cookie stacks; the law of one site's stack."""

    atoms: tuple  # ((CookieStack, weight), ...)
    m: int

    def __init__(self, atoms: Sequence[tuple]):
        pairs = []
        for stack, weight in atoms:
            if not isinstance(stack, CookieStack):
                stack = CookieStack(stack)
            pairs.append((stack, float(weight)))
        if not pairs:
            raise ValueError("a stack distribution needs at least one atom")
        m = pairs[0][0].m
        object.__setattr__(self, "atoms", tuple(pairs))
        object.__setattr__(self, "m", m)
        self._validate()

    def _validate(self):
        total = 0.0
        for stack, weight in self.atoms:
            if stack.m != self.m:
                raise ValueError("all atoms must share the same number of cookies M")
            if weight <= 0.0:
                raise ValueError("atom weights must be strictly positive")
            total += weight
        if abs(total - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"atom weights sum to {total!r}, not 1")
        if self.m > 0:
            # weak ellipticity: an all-positive atom and an all-below-one atom
            if not any(all(p > 0.0 for p in s.probs) for s, _ in self.atoms):
                raise ValueError("weak ellipticity fails: no atom with all cookies > 0")
            if not any(all(p < 1.0 for p in s.probs) for s, _ in self.atoms):
                raise ValueError("weak ellipticity fails: no atom with all cookies < 1")

    # --- wire format ---

    def to_json(self) -> str:
        return json.dumps(
            {
                "M": self.m,
                "atoms": [
                    {"probs": list(s.probs), "weight": w} for s, w in self.atoms
                ],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "StackDistribution":
        doc = json.loads(text)
        atoms = [(CookieStack(a["probs"]), a["weight"]) for a in doc["atoms"]]
        dist = cls(atoms)
        if dist.m != doc["M"]:
            raise ValueError("declared M does not match atom length")
        return dist


def delta_of(dist: StackDistribution) -> float:
    """Expected total drift of one stack, exact over the finite mixture."""
    total = Fraction(0)
    for stack, weight in dist.atoms:
        total += Fraction(weight) * stack.drift()
    return float(total)


def flip(dist: StackDistribution) -> StackDistribution:
    """Mirror environment: every cookie omega(i) becomes 1 - omega(i)."""
    return StackDistribution(
        [(CookieStack([1.0 - p for p in s.probs]), w) for s, w in dist.atoms]
    )


def expected_first_cookie(dist: StackDistribution) -> float:
    """E[omega_0(1)]: mixture-exact mean of the first cookie (1/2 if M = 0)."""
    if dist.m == 0:
        return 0.5
    total = Fraction(0)
    for stack, weight in dist.atoms:
        total += Fraction(weight) * Fraction(stack.probs[0])
    return float(total)


@dataclass(frozen=True)
class Environment:
    """A seeded realization of i.i.d. cookie stacks with lazy coin access.

    Immutable and shareable across workers; stack_at and coin are pure
    functions of (master_seed, site, visit index).
    """

    distribution: StackDistribution
    master_seed: int
    atom_probs: np.ndarray = field(init=False, repr=False, compare=False)
    atom_cumw: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        d = self.distribution
        probs = np.array([s.probs for s, _ in d.atoms], dtype=np.float64)
        if d.m == 0:
            probs = probs.reshape(len(d.atoms), 0)
        cumw = np.cumsum([w for _, w in d.atoms])
        cumw[-1] = 1.0  # guard against round-off at the top
        object.__setattr__(self, "atom_probs", probs)
        object.__setattr__(self, "atom_cumw", cumw)

    @property
    def seed_u64(self) -> int:
        return int(np.uint64(self.master_seed))

    @property
    def m(self) -> int:
        return self.distribution.m

    def atom_index(self, x: int) -> int:
        u = py_site_u01(self.seed_u64, x, 0)
        return int(np.searchsorted(self.atom_cumw, u, side="right"))

    def stack_at(self, x: int) -> CookieStack:
        """The realized stack at site x (deterministic given the seed)."""
        return self.distribution.atoms[self.atom_index(x)][0]

    def coin_prob(self, x: int, i: int) -> float:
        if i < 1:
            raise ValueError("visit index i must be >= 1")
        if i <= self.m:
            return float(self.atom_probs[self.atom_index(x), i - 1])
        return 0.5

    def coin(self, x: int, i: int) -> int:
        """eta_x(i): the i-th coin at site x, 1 = jump right."""
        p = self.coin_prob(x, i)
        return 1 if py_site_u01(self.seed_u64, x, i) < p else 0


def derive_environment(dist: StackDistribution, master_seed: int, replica: int) -> Environment:
    """Environment for one replica: seed derived from (master_seed, replica)."""
    return Environment(dist, py_derived_seed(master_seed, replica))


def py_derived_seed(master_seed: int, replica: int) -> int:
    return int(derive_key(np.uint64(master_seed), np.uint64(_ENV_STREAM_TAG), np.uint64(replica)))


# named mixtures for the experiment presets
def preset(name: str) -> StackDistribution:
    """Named stack laws covering the drift regimes used by the experiments."""
    table = {
        # plain simple random walk: empty stacks
        "srw": StackDistribution([(CookieStack([]), 1.0)]),
        # zero total drift but genuinely excited: +1/2 then -1/2
        "delta0": StackDistribution([(CookieStack([0.75, 0.25]), 1.0)]),
        "delta_half": StackDistribution([(CookieStack([0.75]), 1.0)]),
        "delta1": StackDistribution([(CookieStack([0.75, 0.75]), 1.0)]),
        "delta_minus1": StackDistribution([(CookieStack([0.25, 0.25]), 1.0)]),
    }
    try:
        return table[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(table)}") from None


PRESET_BY_DELTA = {
    "0": "delta0",
    "0.5": "delta_half",
    "1": "delta1",
    "-1": "delta_minus1",
}
