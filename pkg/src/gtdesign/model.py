"""Closed-form quantities for two-stage (Dorfman) pooled testing."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .sensitivity import MisclassModel


def check_prevalence(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"prevalence must lie strictly in (0, 1), got {p!r}")
    return float(p)


def check_group_size(k: int) -> int:
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise ValueError(f"group size must be a positive integer, got {k!r}")
    return int(k)


def check_probability(x: float, name: str = "probability") -> float:
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x!r}")
    return float(x)


def prob_all_negative(p: float, k: int) -> float:
    """``(1 - p) ** k``, evaluated as ``exp(k * log1p(-p))``."""
    return math.exp(k * math.log1p(-p))


def pool_positive_prob(p: float, k: int, se_k: float, sp_k: float) -> float:
    """Probability that a pool of ``k`` samples tests positive."""
    check_prevalence(p)
    check_group_size(k)
    check_probability(se_k, "se_k")
    check_probability(sp_k, "sp_k")
    return se_k - (se_k + sp_k - 1.0) * prob_all_negative(p, k)


def expected_tests(p: float, k: int, se_k: float, sp_k: float = 1.0) -> float:
    """Expected tests per person; exactly 1 for individual testing (``k = 1``)."""
    pos = pool_positive_prob(p, k, se_k, sp_k)
    if k == 1:
        return 1.0
    return pos + 1.0 / k


@dataclass(frozen=True)
class DorfmanDesign:
    p: float
    k: int
    model: MisclassModel

    def __post_init__(self) -> None:
        check_prevalence(self.p)
        check_group_size(self.k)

    @property
    def se_k(self) -> float:
        return self.model.se(self.p, self.k)

    @property
    def sp_k(self) -> float:
        return self.model.sp(self.p, self.k)


@dataclass(frozen=True)
class DesignMetrics:
    pool_positive_prob: float
    expected_tests_per_person: float
    overall_sensitivity: float
    overall_specificity_lower_bound: float


def overall_sensitivity(d: DorfmanDesign) -> float:
    """Chance a positive individual ends up classified positive.

    A positive must be caught by the pool test and again by the individual
    retest, so this is ``Se(k) * Se(1)``; with a gold-standard single test it
    is just ``Se(k)``. Individual testing (``k = 1``) is a single test.
    """
    se1 = d.model.se(d.p, 1)
    if d.k == 1:
        return se1
    return d.se_k * se1


def design_metrics(d: DorfmanDesign) -> DesignMetrics:
    # Only the all-negative-group specificity has a closed form; mixed groups
    # are left to the screening simulator.
    se_k, sp_k = d.model.evaluate(d.p, d.k)
    sp1 = d.model.sp(d.p, 1)
    if d.k == 1:
        sp_bound = sp1
    else:
        sp_bound = 1.0 - (1.0 - sp_k) * (1.0 - sp1)
    return DesignMetrics(
        pool_positive_prob=pool_positive_prob(d.p, d.k, se_k, sp_k),
        expected_tests_per_person=expected_tests(d.p, d.k, se_k, sp_k),
        overall_sensitivity=overall_sensitivity(d),
        overall_specificity_lower_bound=sp_bound,
    )
