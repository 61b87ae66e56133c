"""Exit criteria for the package, one test per criterion.

Run ``pytest tests/test_acceptance.py -v`` to see a PASS/FAIL summary line
per criterion at the end of the session. Set ``GTDESIGN_FULL_SCALE=1`` to
also run the full 50,000-replicate reproduction (hours of compute).
"""

import csv
import math
import os
import random
import time
from importlib import resources

import numpy as np
import pytest

from gtdesign.model import DorfmanDesign, design_metrics, expected_tests, pool_positive_prob
from gtdesign.optimizer import (
    Constraints,
    compare_to_golden,
    optimize_constrained,
    optimize_unconstrained,
    read_table_csv,
    table1,
)
from gtdesign.screensim import simulate_screen
from gtdesign.sensitivity import SE1, SE2, SE3, SE4, Hwang, MisclassModel
from gtdesign.valsim import (
    ValidationConfig,
    closed_form_expected_tests,
    estimate_phi,
    find_min_validation_n,
    min_population_for_benefit,
    replicate_rng,
    simulate_replicate,
    total_validation_tests,
)

from oracles import enumerate_pool, naive_scan

SEED = 20261015


def _data(name):
    return resources.files("gtdesign.data").joinpath(name).read_text()


def _published_validation():
    lines = [ln for ln in _data("validation_golden.csv").splitlines() if ln and not ln.startswith("#")]
    return [
        {"case": r["case"], "p": float(r["p"]), "family": r["family"],
         "n": int(r["n"]), "t_v": int(r["t_v"]), "n_star": int(r["n_star"])}
        for r in csv.DictReader(lines)
    ]


PUBLISHED = _published_validation()
FAMILY = {"linear": SE1, "hwang": SE3}


@pytest.mark.criterion(1, "Table 1 reproduced (30 rows, +-0.0005, < 1 s)")
def test_table1_reproduction():
    golden = read_table_csv(_data("table1_golden.csv"))
    t0 = time.perf_counter()
    rows = table1()
    elapsed = time.perf_counter() - t0
    assert len(rows) == len(golden) == 30
    problems = compare_to_golden(rows, golden, tol=0.0005)
    assert problems == []
    spot = next(r for r in rows if r.p == 0.1 and r.d_assumed == 0.3 and r.mode == "unconstrained")
    assert spot.khat_opt == 25
    assert [round(x, 3) for x in (spot.se_hat_khat, spot.se_khat, spot.et_hat_khat, spot.et_khat)] == [
        0.414, 0.797, 0.424, 0.779,
    ]
    assert elapsed < 1.0


@pytest.mark.criterion(2, "validation test count identity (10 published pairs, exact, < 1 ms)")
def test_validation_test_count_identity():
    pairs = {(r["n"], r["t_v"]) for r in PUBLISHED}
    assert len(pairs) == 10
    t0 = time.perf_counter()
    got = {n: total_validation_tests(n, 10) for n, _ in pairs}
    elapsed = time.perf_counter() - t0
    for n, t_v in pairs:
        assert got[n] == t_v, (n, got[n], t_v)
    assert elapsed < 1e-3


@pytest.mark.criterion(3, "break-even population from closed-form E(T) within 1.5% of published")
def test_break_even_closed_form():
    checked, failures, undefined = [], [], []
    seen = set()
    for r in PUBLISHED:
        key = (r["p"], r["family"], r["n"])
        if key in seen:
            continue
        seen.add(key)
        cfg = ValidationConfig(p=r["p"], true_model=FAMILY[r["family"]])
        e = closed_form_expected_tests(cfg)
        if e >= 1.0:
            # true constrained optimum is individual testing: no closed-form break-even
            undefined.append(r["case"] + "/" + r["family"])
            continue
        n_star = min_population_for_benefit(r["n"], r["t_v"], e)
        gap = (n_star - r["n_star"]) / r["n_star"]
        checked.append((r["case"], r["family"], n_star, r["n_star"], gap))
        if abs(gap) > 0.015:
            failures.append(f"{r['case']}/{r['family']}: {n_star} vs {r['n_star']} ({100 * gap:+.2f}%)")
    example = next(c for c in checked if c[0] == "covid5")
    assert 147_030 <= example[2] <= 147_040
    assert len(checked) == 5 and len(undefined) == 5
    assert failures == [], "; ".join(failures)


def test_break_even_simulation_average():
    """Supplementary: the simulation-averaged E(T) reproduces every published linear N*."""
    seen = set()
    for r in PUBLISHED:
        if r["family"] != "linear" or r["n"] in seen:
            continue
        seen.add(r["n"])
        cfg = ValidationConfig(p=r["p"], true_model=SE1, replicates=2000, seed=SEED)
        _, mean_et = estimate_phi(cfg, r["n"])
        n_star = min_population_for_benefit(r["n"], r["t_v"], mean_et)
        assert abs(n_star - r["n_star"]) / r["n_star"] < 0.015, (r["case"], n_star)


SCREEN_GRID = [
    (p, k, d)
    for p in (0.01, 0.05, 0.1)
    for k, d in ((2, 0.3), (4, 0.075), (5, 0.1), (10, 0.01))
]


@pytest.mark.criterion(4, "screening simulation matches closed forms (12 points, 3 MC SE, < 30 s)")
def test_screen_matches_closed_form():
    assert len(SCREEN_GRID) == 12
    t0 = time.perf_counter()
    bad = []
    for i, (p, k, d) in enumerate(SCREEN_GRID):
        model = MisclassModel(Hwang(d))
        dm = design_metrics(DorfmanDesign(p, k, model))
        r = simulate_screen(10**5, p, k, model, np.random.default_rng([SEED, i]))
        z_et = (r.tests_per_person - dm.expected_tests_per_person) / r.tests_per_person_se
        z_se = (r.empirical_overall_se - dm.overall_sensitivity) / r.overall_se_se
        if abs(z_et) > 3 or abs(z_se) > 3:
            bad.append(((p, k, d), round(z_et, 2), round(z_se, 2)))
    elapsed = time.perf_counter() - t0
    assert bad == []
    assert elapsed < 30


@pytest.mark.criterion(5, "validation estimator unbiased for Se1-Se4 (1e4 replicates, 3 SE, < 2 min)")
def test_estimator_unbiased():
    n, p, reps = 1000, 0.05, 10_000
    t0 = time.perf_counter()
    bad = []
    for name, model in (("Se1", SE1), ("Se2", SE2), ("Se3", SE3), ("Se4", SE4)):
        cfg = ValidationConfig(p=p, true_model=model, n_initial=n)
        sums = {k: [] for k in range(2, 11)}
        for i in range(reps):
            est = simulate_replicate(cfg, replicate_rng(SEED, n, i), n)
            for k in sums:
                if est.se_hat[k] is not None:
                    sums[k].append(est.se_hat[k])
        for k, vals in sums.items():
            v = np.asarray(vals)
            truth = model.se(p, k)
            se = v.std(ddof=1) / math.sqrt(len(v))
            if abs(v.mean() - truth) > 3 * se:
                bad.append((name, k, v.mean(), truth, se))
    perfect = ValidationConfig(p=p, true_model=MisclassModel(), n_initial=n)
    for i in range(200):
        est = simulate_replicate(perfect, replicate_rng(SEED, n, i), n)
        assert all(v in (None, 1.0) for v in est.se_hat.values())
    elapsed = time.perf_counter() - t0
    assert bad == []
    assert elapsed < 120


@pytest.mark.criterion(6, "desk-scale size search: 5 seeds within 15% of 31,679; phi monotone (<= 15 min)")
def test_desk_scale_search():
    t0 = time.perf_counter()
    found = []
    for s in range(5):
        cfg = ValidationConfig(p=0.05, true_model=SE1, replicates=2000, seed=SEED + s)
        out = find_min_validation_n(cfg)
        assert out.t_v == total_validation_tests(out.n_required, 10)
        found.append(out.n_required)
    for n in found:
        assert abs(n - 31679) / 31679 <= 0.15, found

    cfg = ValidationConfig(p=0.05, true_model=SE1, replicates=2000, seed=SEED)
    grid = [10_000, 20_000, 30_000, 40_000, 50_000]
    phis = [estimate_phi(cfg, n)[0] for n in grid]
    violations = sum(b < a for a, b in zip(phis, phis[1:]))
    assert violations <= 1, phis
    assert time.perf_counter() - t0 <= 15 * 60


@pytest.mark.criterion(7, "brute-force oracles: enumeration to 1e-12 and 1000 naive scans (< 10 s)")
def test_brute_force_oracles():
    t0 = time.perf_counter()
    for p in (0.001, 0.01, 0.05, 0.1, 0.3, 0.7):
        for k in range(1, 7):
            for se in (0.0, 0.5, 0.83, 1.0):
                for sp in (0.0, 0.6, 0.97, 1.0):
                    pos, et = enumerate_pool(p, k, se, sp)
                    assert abs(pool_positive_prob(p, k, se, sp) - pos) <= 1e-12
                    assert abs(expected_tests(p, k, se, sp) - et) <= 1e-12
    rnd = random.Random(SEED)
    for _ in range(1000):
        p = rnd.uniform(0.001, 0.6)
        d = rnd.uniform(0.0, 1.0)
        k_max = rnd.randint(1, 50)
        delta = rnd.uniform(0.5, 1.0)
        model = MisclassModel(Hwang(d))
        se = [model.se(p, k) for k in range(1, k_max + 1)]
        sp = [1.0] * k_max
        et, k = naive_scan(p, se, sp)
        r = optimize_unconstrained(p, model, k_max)
        assert (r.k_opt, r.expected_tests) == (k, pytest.approx(et, abs=1e-12))
        et, k = naive_scan(p, se, sp, delta)
        r = optimize_constrained(p, model, k_max, Constraints(delta_se=delta))
        assert (r.k_opt, r.expected_tests) == (k, pytest.approx(et, abs=1e-12))
    assert time.perf_counter() - t0 < 10


@pytest.mark.skipif(not os.environ.get("GTDESIGN_FULL_SCALE"), reason="full-scale run takes hours")
@pytest.mark.criterion("6-full", "full-scale search reproduces published N within 3%")
def test_full_scale_search():
    seen, misses = set(), []
    for r in PUBLISHED:
        key = (r["p"], r["family"])
        if key in seen:
            continue
        seen.add(key)
        cfg = ValidationConfig(p=r["p"], true_model=FAMILY[r["family"]], replicates=50_000, seed=SEED)
        out = find_min_validation_n(cfg)
        gap = (out.n_required - r["n"]) / r["n"]
        print(f"p={r['p']} {r['family']}: N={out.n_required} published={r['n']} ({100 * gap:+.1f}%)")
        if abs(gap) > 0.03:
            misses.append((r["p"], r["family"], out.n_required, r["n"]))
    assert misses == []
