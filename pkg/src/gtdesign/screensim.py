"""End-to-end simulation of a two-stage pooled screening program."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .model import check_group_size, check_prevalence
from .sensitivity import MisclassModel


@dataclass(frozen=True)
class ScreenReport:
    population: int
    k: int
    total_tests: int
    tests_per_person: float
    empirical_overall_se: float
    empirical_overall_sp: float
    false_negatives: int
    false_positives: int
    positives: int
    negatives: int
    positive_pools: int
    n_groups: int
    # Monte Carlo standard errors, treating groups as independent clusters
    tests_per_person_se: float
    overall_se_se: float
    overall_sp_se: float


def _ratio_se(num: np.ndarray, den: np.ndarray) -> float:
    """Standard error of ``sum(num) / sum(den)`` over independent clusters."""
    g = len(num)
    total = den.sum()
    if g < 2 or total == 0:
        return math.nan
    r = num.sum() / total
    resid = num - r * den
    return float(math.sqrt(g / (g - 1) * np.sum(resid**2)) / total)


def simulate_screen(
    population: int, p: float, k: int, model: MisclassModel, rng: np.random.Generator
) -> ScreenReport:
    """Screen ``population`` people in pools of ``k``; positive pools are retested one by one.

    A population not divisible by ``k`` ends with one short pool, tested with
    the model's values at its own size. A pool of one is an individual test.
    """
    check_prevalence(p)
    check_group_size(k)
    if population < k:
        raise ValueError(f"population must be at least k, got {population} < {k}")

    status = rng.random(population) < p
    sizes = np.full(population // k, k, dtype=np.int64)
    if population % k:
        sizes = np.append(sizes, population % k)
    group_of = np.repeat(np.arange(len(sizes)), sizes)
    n_pos = np.bincount(group_of, weights=status, minlength=len(sizes))
    has_pos = n_pos > 0

    se_by_size = {s: model.se(p, s) for s in np.unique(sizes).tolist()}
    sp_by_size = {s: model.sp(p, s) for s in np.unique(sizes).tolist()}
    se_g = np.array([se_by_size[s] for s in sizes.tolist()])
    sp_g = np.array([sp_by_size[s] for s in sizes.tolist()])
    pool_pos = rng.random(len(sizes)) < np.where(has_pos, se_g, 1.0 - sp_g)

    se1, sp1 = model.evaluate(p, 1)
    retest = rng.random(population) < np.where(status, se1, 1.0 - sp1)
    single = sizes[group_of] == 1
    # members of a pool of one are classified by the pool test itself
    called_pos = np.where(single, pool_pos[group_of], pool_pos[group_of] & retest)

    tests_g = np.where(sizes == 1, 1, 1 + sizes * pool_pos)
    total_tests = int(tests_g.sum())

    tp_g = np.bincount(group_of, weights=status & called_pos, minlength=len(sizes))
    neg_g = sizes - n_pos
    tn_g = np.bincount(group_of, weights=~status & ~called_pos, minlength=len(sizes))
    positives = int(n_pos.sum())
    negatives = population - positives
    tp, tn = int(tp_g.sum()), int(tn_g.sum())

    g = len(sizes)
    return ScreenReport(
        population=population,
        k=k,
        total_tests=total_tests,
        tests_per_person=total_tests / population,
        empirical_overall_se=tp / positives if positives else math.nan,
        empirical_overall_sp=tn / negatives if negatives else math.nan,
        false_negatives=positives - tp,
        false_positives=negatives - tn,
        positives=positives,
        negatives=negatives,
        positive_pools=int(pool_pos[sizes > 1].sum()),
        n_groups=g,
        tests_per_person_se=float(math.sqrt(g) * tests_g.std(ddof=1) / population) if g > 1 else math.nan,
        overall_se_se=_ratio_se(tp_g, n_pos),
        overall_sp_se=_ratio_se(tn_g, neg_g),
    )


def sweep(
    population: int, p: float, model: MisclassModel, k_range: Iterable[int], seed: int = 0
) -> list[ScreenReport]:
    """One report per group size; size ``k`` uses its own seeded stream."""
    return [
        simulate_screen(
            population, p, k, model, np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
        )
        for k in k_range
    ]


SWEEP_COLUMNS = ("k", "tests_per_person", "overall_se", "overall_sp", "total_tests")


def sweep_to_csv(reports: Iterable[ScreenReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in reports:
        w.writerow([r.k, r.tests_per_person, r.empirical_overall_se, r.empirical_overall_sp, r.total_tests])
    return buf.getvalue()
