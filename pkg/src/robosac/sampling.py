"""Sampling-probability calculus for consensus-based teammate selection.

Two models live here side by side:

* the with-replacement (binomial) model, where each sampled teammate is an
  attacker independently with probability ``eta``; this is what the budget and
  collaborator-count formulas use;
* the exact finite-population model, where a size-``s`` subset is drawn
  without replacement from ``S`` teammates of which ``A`` are attackers.

All binomial-model quantities are evaluated in log space so that tiny clean
probabilities do not underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

__all__ = [
    "SamplingError",
    "InfeasiblePlan",
    "UnboundedCollaborators",
    "SamplingPlan",
    "success_probability",
    "max_collaborators",
    "sampling_budget",
    "clean_sample_probability_exact",
    "success_probability_exact",
    "expected_steps",
    "a2cp_upper_bounds",
]

_RATIO_TOL = 1e-9


class SamplingError(ValueError):
    """Invalid arguments to a sampling formula."""


class InfeasiblePlan(SamplingError):
    """No finite budget (or no safe sample) satisfies the request."""


class UnboundedCollaborators(SamplingError):
    """Attacker-free team: any number of collaborators is safe."""


def _check_prob(p: float) -> None:
    if not 0.0 < p < 1.0:
        raise SamplingError(f"confidence p must be in (0, 1), got {p}")


def _check_ratio(eta: float) -> None:
    if not 0.0 <= eta <= 1.0:
        raise SamplingError(f"attacker ratio must be in [0, 1], got {eta}")


def _log_clean(eta: float, s: int) -> float:
    """log((1 - eta) ** s), -inf when the sample is surely dirty."""
    if s == 0:
        return 0.0
    if eta >= 1.0:
        return -math.inf
    return s * math.log1p(-eta)


def success_probability(eta: float, s: int, n: int) -> float:
    """Probability that at least one of ``n`` draws of ``s`` teammates is clean.

    Binomial model: ``1 - (1 - (1 - eta)**s)**n``.
    """
    _check_ratio(eta)
    if s < 0 or n < 1:
        raise SamplingError(f"need s >= 0 and n >= 1, got s={s}, n={n}")
    log_clean = _log_clean(eta, s)
    if log_clean == 0.0:
        return 1.0
    if log_clean == -math.inf:
        return 0.0
    clean = math.exp(log_clean)
    log_fail = math.log1p(-clean)
    return -math.expm1(n * log_fail)


def max_collaborators(p: float, n: int, eta: float, team_size: int | None = None) -> int:
    """Largest sample size ``s`` that ``n`` draws find clean with probability ``p``.

    ``floor(ln(1 - (1 - p)**(1/n)) / ln(1 - eta))``, floored at 0. With
    ``team_size`` the result is clamped to ``[0, team_size]`` and an
    attacker-free team yields ``team_size``; without it, ``eta == 0`` raises
    :class:`UnboundedCollaborators`.
    """
    _check_prob(p)
    _check_ratio(eta)
    if n < 1:
        raise SamplingError(f"budget must be >= 1, got {n}")
    if eta == 0.0:
        if team_size is None:
            raise UnboundedCollaborators("eta = 0: every subset is attacker-free")
        return team_size
    if eta == 1.0:
        return 0

    # 1 - (1-p)**(1/n), via expm1 to keep precision when n is large
    target = -math.expm1(math.log1p(-p) / n)
    s = math.floor(math.log(target) / math.log1p(-eta))
    s = max(s, 0)
    # float rounding can land one off an exact integer boundary
    while success_probability(eta, s + 1, n) >= p:
        s += 1
    while s > 0 and success_probability(eta, s, n) < p:
        s -= 1
    if team_size is not None:
        s = min(s, team_size)
    return s


def sampling_budget(p: float, s: int, eta: float) -> int:
    """Number of draws needed so a clean size-``s`` draw occurs with probability ``p``.

    ``ceil(ln(1 - p) / ln(1 - (1 - eta)**s))``, at least 1.
    """
    _check_prob(p)
    _check_ratio(eta)
    if s < 1:
        raise SamplingError(f"sample size must be >= 1, got {s}")
    if eta == 0.0:
        return 1
    log_clean = _log_clean(eta, s)
    clean = math.exp(log_clean)
    if clean == 0.0:
        raise InfeasiblePlan(f"(1 - {eta})**{s} underflows: no finite budget")
    n = math.ceil(math.log1p(-p) / math.log1p(-clean))
    n = max(n, 1)
    while n > 1 and success_probability(eta, s, n - 1) >= p:
        n -= 1
    while success_probability(eta, s, n) < p:
        n += 1
    return n


def clean_sample_probability_exact(team_size: int, attackers: int, s: int) -> Fraction:
    """Exact chance that a uniform size-``s`` subset contains no attacker.

    ``C(S - A, s) / C(S, s)``.
    """
    if not 0 <= attackers <= team_size:
        raise SamplingError(f"need 0 <= A <= S, got A={attackers}, S={team_size}")
    if not 0 <= s <= team_size:
        raise SamplingError(f"need 0 <= s <= S, got s={s}, S={team_size}")
    return Fraction(math.comb(team_size - attackers, s), math.comb(team_size, s))


def success_probability_exact(team_size: int, attackers: int, s: int, n: int) -> float:
    """At least one clean draw in ``n`` independent without-replacement draws."""
    if n < 1:
        raise SamplingError(f"budget must be >= 1, got {n}")
    q = clean_sample_probability_exact(team_size, attackers, s)
    return float(1 - (1 - q) ** n)


def expected_steps(team_size: int, attackers: int, s: int, n: int) -> float:
    """Mean number of draws of the sampling loop stopped at ``n``.

    Truncated geometric with per-draw success ``q``: ``(1 - (1 - q)**n) / q``,
    which is ``n`` when ``q = 0``.
    """
    if n < 1:
        raise SamplingError(f"budget must be >= 1, got {n}")
    q = clean_sample_probability_exact(team_size, attackers, s)
    if q == 0:
        return float(n)
    return float((1 - (1 - q) ** n) / q)


def _grid_counts(ratio_grid: Sequence[float], team_size: int) -> list[int]:
    counts = []
    for r in ratio_grid:
        h = round(r * team_size)
        if abs(r * team_size - h) > _RATIO_TOL:
            raise SamplingError(f"grid ratio {r} is not a multiple of 1/{team_size}")
        if not 0 <= h < team_size:
            raise SamplingError(f"grid ratio {r} leaves no teammate to sample")
        counts.append(h)
    if any(b <= a for a, b in zip(counts, counts[1:])):
        raise SamplingError(f"ratio grid must be strictly ascending: {list(ratio_grid)}")
    return counts


def a2cp_upper_bounds(ratio_grid: Sequence[float], team_size: int, p: float) -> list[int]:
    """Attempt bounds for each probed ratio ``R_k``.

    Each bound is the sampling budget for a sample of ``S * (1 - R_k)``
    teammates at attacker ratio ``R_k``. The zero ratio gets 1: sampling all
    ``S`` teammates has a single distinct subset.
    """
    _check_prob(p)
    if team_size < 1:
        raise SamplingError(f"team size must be >= 1, got {team_size}")
    bounds = []
    for h in _grid_counts(ratio_grid, team_size):
        if h == 0:
            bounds.append(1)
        else:
            bounds.append(sampling_budget(p, team_size - h, h / team_size))
    return bounds


@dataclass(frozen=True)
class SamplingPlan:
    """Assumed attacker ratio, team size, sample size, draw budget and confidence."""

    attacker_ratio: float
    team_size: int
    sample_size: int
    budget: int
    confidence: float = 0.99

    def __post_init__(self) -> None:
        _check_ratio(self.attacker_ratio)
        _check_prob(self.confidence)
        if self.team_size < 1:
            raise SamplingError(f"team size must be >= 1, got {self.team_size}")
        if not 0 <= self.sample_size <= self.team_size:
            raise SamplingError(
                f"sample size {self.sample_size} outside [0, {self.team_size}]"
            )
        if self.budget < 1:
            raise SamplingError(f"budget must be >= 1, got {self.budget}")
        h = self.attacker_ratio * self.team_size
        if abs(h - round(h)) > _RATIO_TOL:
            raise SamplingError(
                f"attacker ratio {self.attacker_ratio} is not a multiple of 1/{self.team_size}"
            )

    @classmethod
    def for_sample_size(
        cls, attacker_ratio: float, team_size: int, sample_size: int, confidence: float = 0.99
    ) -> "SamplingPlan":
        budget = sampling_budget(confidence, sample_size, attacker_ratio)
        return cls(attacker_ratio, team_size, sample_size, budget, confidence)

    @classmethod
    def for_budget(
        cls, attacker_ratio: float, team_size: int, budget: int, confidence: float = 0.99
    ) -> "SamplingPlan":
        s = max_collaborators(confidence, budget, attacker_ratio, team_size=team_size)
        return cls(attacker_ratio, team_size, s, budget, confidence)

    @property
    def attacker_count(self) -> int:
        return round(self.attacker_ratio * self.team_size)

    @property
    def benign_count(self) -> int:
        return self.team_size - self.attacker_count

    @property
    def feasible(self) -> bool:
        """A clean subset of the requested size exists under the assumed ratio."""
        return self.sample_size <= self.benign_count

    def success_probability(self) -> float:
        return success_probability(self.attacker_ratio, self.sample_size, self.budget)

    def success_probability_exact(self) -> float:
        return success_probability_exact(
            self.team_size, self.attacker_count, self.sample_size, self.budget
        )

    def expected_steps(self) -> float:
        return expected_steps(self.team_size, self.attacker_count, self.sample_size, self.budget)
