"""Monte Carlo sizing of a pooled-assay validation study.

A validation study takes ``N`` individuals of known status, pools them at
every size ``k = 1..k_max`` and estimates ``Se(k)`` and ``Sp(k)`` from the
pooled results. :func:`find_min_validation_n` searches for the smallest
``N`` such that the design picked from those estimates truly meets the
sensitivity bound with probability ``epsilon``.

Replicate ``i`` of an evaluation at size ``n`` always draws from the stream
``SeedSequence(seed, spawn_key=(n, i))``, so results do not depend on how
replicates are spread over worker processes.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .model import check_group_size, check_prevalence, expected_tests
from .optimizer import Constraints, optimize_constrained, optimize_from_curves
from .sensitivity import MisclassModel

log = logging.getLogger(__name__)


class NonConvergenceError(RuntimeError):
    """The size search could not bracket the target probability."""

    def __init__(self, message: str, trace: list[tuple[int, float]]):
        super().__init__(message)
        self.trace = trace


class NoBreakEvenError(ValueError):
    """Group testing never uses fewer tests than individual testing."""


@dataclass(frozen=True)
class ValidationConfig:
    p: float
    true_model: MisclassModel
    k_max: int = 10
    delta: float = 0.95
    epsilon: float = 0.95
    phi_tolerance: float = 0.01
    replicates: int = 50_000
    seed: int = 0
    n_initial: int = 10_000
    delta_sp: float = 0.0

    def __post_init__(self) -> None:
        check_prevalence(self.p)
        check_group_size(self.k_max)
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not 0.0 < self.phi_tolerance < self.epsilon:
            raise ValueError("phi_tolerance must satisfy 0 < phi_tolerance < epsilon")
        if self.n_initial < self.k_max:
            raise ValueError("n_initial must be at least k_max")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["true_model"] = self.true_model.to_dict()
        return d


@dataclass(frozen=True)
class Grouping:
    """``groups[g]`` holds the (0-based) unit indices of group ``g``."""

    groups: np.ndarray
    duplicate_indices: np.ndarray


@dataclass
class SeEstimates:
    """Per-size estimates; ``None`` where no group of that kind was formed.

    ``counts[k]`` is ``(positive groups testing positive, positive groups,
    negative groups testing negative, negative groups)``. Size 1 is the
    reference stage and carries the model's own ``Se(1)``, ``Sp(1)``.
    """

    se_hat: dict[int, Optional[float]] = field(default_factory=dict)
    sp_hat: dict[int, Optional[float]] = field(default_factory=dict)
    counts: dict[int, tuple[int, int, int, int]] = field(default_factory=dict)

    @property
    def denominators(self) -> dict[int, tuple[int, int]]:
        return {k: (c[1], c[3]) for k, c in self.counts.items()}

    def curves(self, k_max: int) -> tuple[list[float], list[float]]:
        nan = math.nan
        se = [nan if self.se_hat.get(k) is None else self.se_hat[k] for k in range(1, k_max + 1)]
        sp = [nan if self.sp_hat.get(k) is None else self.sp_hat[k] for k in range(1, k_max + 1)]
        return se, sp


@dataclass(frozen=True)
class ValidationOutcome:
    n_required: int
    t_v: int
    n_star: Optional[int]
    phi_hat: float
    mean_expected_tests: float
    bisection_trace: list[tuple[int, float]]
    expected_tests_closed_form: float
    n_star_closed_form: Optional[int]


def replicate_rng(seed: int, n: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(n, i)))


def form_groups(n: int, k: int, rng: np.random.Generator) -> Grouping:
    """Randomly split units ``0..n-1`` into groups of exactly ``k``.

    When ``k`` does not divide ``n`` the last group takes the ``n mod k``
    leftover units plus distinct duplicates drawn from the full groups.
    """
    check_group_size(k)
    if n < k:
        raise ValueError(f"need n >= k, got n={n}, k={k}")
    perm = rng.permutation(n)
    full = n // k
    r = n - full * k
    groups = perm[: full * k].reshape(full, k)
    if r == 0:
        return Grouping(groups=groups, duplicate_indices=np.empty(0, dtype=perm.dtype))
    dups = perm[rng.choice(full * k, k - r, replace=False)]
    last = np.concatenate([perm[full * k:], dups])
    return Grouping(groups=np.vstack([groups, last]), duplicate_indices=dups)


def _estimates_from_counts(
    est: SeEstimates, k: int, gpos: int, gneg: int, se_k: float, sp_k: float, rng: np.random.Generator
) -> None:
    xp = int(rng.binomial(gpos, se_k)) if gpos else 0
    xn = int(rng.binomial(gneg, sp_k)) if gneg else 0
    est.counts[k] = (xp, gpos, xn, gneg)
    est.se_hat[k] = xp / gpos if gpos else None
    est.sp_hat[k] = xn / gneg if gneg else None


def _true_curves(cfg: ValidationConfig) -> tuple[list[float], list[float]]:
    ks = range(1, cfg.k_max + 1)
    return [cfg.true_model.se(cfg.p, k) for k in ks], [cfg.true_model.sp(cfg.p, k) for k in ks]


def _reference_stage(est: SeEstimates, n: int, m: int, se: list[float], sp: list[float]) -> None:
    # individual results are the gold-standard reference: taken as known
    est.counts[1] = (m, m, n - m, n - m)
    est.se_hat[1] = se[0]
    est.sp_hat[1] = sp[0]


def simulate_replicate(
    cfg: ValidationConfig, rng: np.random.Generator, n: Optional[int] = None
) -> SeEstimates:
    """One validation study, pooling the actual units group by group."""
    n = cfg.n_initial if n is None else n
    se, sp = _true_curves(cfg)
    status = rng.random(n) < cfg.p
    est = SeEstimates()
    _reference_stage(est, n, int(status.sum()), se, sp)
    for k in range(2, cfg.k_max + 1):
        grouping = form_groups(n, k, rng)
        positive = status[grouping.groups].any(axis=1)
        gpos = int(positive.sum())
        _estimates_from_counts(est, k, gpos, len(positive) - gpos, se[k - 1], sp[k - 1], rng)
    return est


def simulate_replicate_fast(
    cfg: ValidationConfig, rng: np.random.Generator, n: Optional[int] = None
) -> SeEstimates:
    """Same distribution as :func:`simulate_replicate`, without materializing units.

    Under a uniformly random grouping only the positions of the positive
    units matter, and those form a uniform random subset of the slots.
    Duplicates in the last group are positive with hypergeometric odds.
    """
    n = cfg.n_initial if n is None else n
    se, sp = _true_curves(cfg)
    m = int(rng.binomial(n, cfg.p))
    est = SeEstimates()
    _reference_stage(est, n, m, se, sp)
    for k in range(2, cfg.k_max + 1):
        full = n // k
        r = n - full * k
        n_groups = full + (r > 0)
        hit = np.zeros(n_groups, dtype=bool)
        if m:
            pos = rng.choice(n, m, replace=False, shuffle=False)
            hit[pos // k] = True
            if r and not hit[full]:
                m_full = int(np.count_nonzero(pos < full * k))
                if m_full and rng.hypergeometric(m_full, full * k - m_full, k - r) > 0:
                    hit[full] = True
        gpos = int(np.count_nonzero(hit))
        _estimates_from_counts(est, k, gpos, n_groups - gpos, se[k - 1], sp[k - 1], rng)
    return est


_ENGINES: dict[str, Callable] = {"fast": simulate_replicate_fast, "literal": simulate_replicate}


def _run_chunk(cfg: ValidationConfig, n: int, start: int, stop: int, engine: str):
    simulate = _ENGINES[engine]
    se_true, sp_true = _true_curves(cfg)
    constraints = Constraints(delta_se=cfg.delta, delta_sp=cfg.delta_sp)
    psi = np.zeros(stop - start, dtype=bool)
    et = np.zeros(stop - start)
    for j, i in enumerate(range(start, stop)):
        est = simulate(cfg, replicate_rng(cfg.seed, n, i), n)
        se_hat, sp_hat = est.curves(cfg.k_max)
        k_hat = optimize_from_curves(cfg.p, se_hat, sp_hat, constraints).k_opt
        psi[j] = se_true[k_hat - 1] > cfg.delta
        et[j] = expected_tests(cfg.p, k_hat, se_true[k_hat - 1], sp_true[k_hat - 1])
    return psi, et


def _phi_counts(
    cfg: ValidationConfig, n: int, workers: Optional[int] = None, engine: str = "fast"
) -> tuple[int, float]:
    if n < cfg.k_max:
        raise ValueError(f"validation size {n} is below k_max={cfg.k_max}")
    if engine not in _ENGINES:
        raise ValueError(f"unknown engine {engine!r}")
    R = cfg.replicates
    workers = max(1, min(workers or 1, R))
    if workers == 1:
        psi, et = _run_chunk(cfg, n, 0, R, engine)
    else:
        bounds = np.linspace(0, R, workers + 1).astype(int)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(
                _run_chunk,
                [cfg] * workers, [n] * workers, bounds[:-1].tolist(), bounds[1:].tolist(),
                [engine] * workers,
            ))
        psi = np.concatenate([a for a, _ in parts])
        et = np.concatenate([b for _, b in parts])
    return int(psi.sum()), float(math.fsum(et) / R)


def estimate_phi(
    cfg: ValidationConfig, n: int, workers: Optional[int] = None, engine: str = "fast"
) -> tuple[float, float]:
    """Return ``(phi_hat, mean expected tests)`` at validation size ``n``.

    ``phi_hat`` is the fraction of replicates whose estimated optimal size
    has true sensitivity above ``delta``. The mean expected tests is the
    true ``E(T)`` at each replicate's chosen size, averaged.
    """
    hits, mean_et = _phi_counts(cfg, n, workers, engine)
    return hits / cfg.replicates, mean_et


def bisect_validation_size(
    phi_fn: Callable[[int], tuple[int, int]],
    n_initial: int,
    epsilon: float,
    tolerance: float,
    n_floor: int = 1,
    max_steps: int = 60,
) -> tuple[int, list[tuple[int, float]]]:
    """Doubling/bisection search on ``N``.

    ``phi_fn(n)`` returns ``(hits, replicates)``. The band test is done in
    exact rational arithmetic so ``phi_hat = 0.96`` sits inside a 0.01 band
    around 0.95.
    """
    eps, tol = Fraction(str(epsilon)), Fraction(str(tolerance))
    n, n_min, n_max = n_initial, 0, 0
    trace: list[tuple[int, float]] = []
    for _ in range(max_steps):
        if n < n_floor:
            raise NonConvergenceError(f"search fell below the minimum size {n_floor}", trace)
        hits, reps = phi_fn(n)
        trace.append((n, hits / reps))
        log.info("N=%d phi_hat=%.5f", n, hits / reps)
        diff = Fraction(hits, reps) - eps
        if diff > tol:
            n_max = n
            nxt = (n + n_min) // 2
        elif diff < -tol:
            n_min = n
            nxt = 2 * n if n_max == 0 else (n + n_max) // 2
        else:
            return n, trace
        if nxt == n:
            raise NonConvergenceError(f"bracket collapsed at N={n}", trace)
        n = nxt
    raise NonConvergenceError(f"no convergence after {max_steps} steps", trace)


def total_validation_tests(n: int, k_max: int) -> int:
    """Number of pooled tests run by a validation study of ``n`` units."""
    check_group_size(k_max)
    if n != 0 and n < k_max:
        raise ValueError(f"need n >= k_max (or n = 0), got n={n}, k_max={k_max}")
    return sum(-(-n // k) for k in range(1, k_max + 1))


def min_population_for_benefit(n: int, t_v: int, expected_tests: float) -> int:
    """Smallest population ``N*`` with ``(N* - n) * E + t_v <= N*``."""
    if not expected_tests < 1.0:
        raise NoBreakEvenError(
            f"no break-even population exists when expected tests per person is {expected_tests}"
        )
    if expected_tests <= 0.0:
        raise ValueError("expected tests per person must be positive")
    return math.ceil((t_v - n * expected_tests) / (1.0 - expected_tests))


def closed_form_expected_tests(cfg: ValidationConfig) -> float:
    """``E(T)`` at the constrained optimum chosen with the true curves."""
    c = Constraints(delta_se=cfg.delta, delta_sp=cfg.delta_sp)
    return optimize_constrained(cfg.p, cfg.true_model, cfg.k_max, c).expected_tests


def _n_star_or_none(n: int, t_v: int, e: float) -> Optional[int]:
    try:
        return min_population_for_benefit(n, t_v, e)
    except NoBreakEvenError:
        return None


def find_min_validation_n(
    cfg: ValidationConfig,
    workers: Optional[int] = None,
    max_steps: int = 60,
    engine: str = "fast",
) -> ValidationOutcome:
    results: dict[int, tuple[int, float]] = {}

    def phi_fn(n: int) -> tuple[int, int]:
        results[n] = _phi_counts(cfg, n, workers, engine)
        return results[n][0], cfg.replicates

    n, trace = bisect_validation_size(
        phi_fn, cfg.n_initial, cfg.epsilon, cfg.phi_tolerance, n_floor=cfg.k_max, max_steps=max_steps
    )
    hits, mean_et = results[n]
    t_v = total_validation_tests(n, cfg.k_max)
    e_cf = closed_form_expected_tests(cfg)
    return ValidationOutcome(
        n_required=n,
        t_v=t_v,
        n_star=_n_star_or_none(n, t_v, mean_et),
        phi_hat=hits / cfg.replicates,
        mean_expected_tests=mean_et,
        bisection_trace=trace,
        expected_tests_closed_form=e_cf,
        n_star_closed_form=_n_star_or_none(n, t_v, e_cf),
    )


def outcome_document(cfg: ValidationConfig, outcome: ValidationOutcome) -> dict:
    doc = {"config": cfg.to_dict(), "seed": cfg.seed}
    doc.update(asdict(outcome))
    doc["bisection_trace"] = [list(t) for t in outcome.bisection_trace]
    return doc


def trace_to_csv(trace: list[tuple[int, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "n", "phi_hat"])
    for i, (n, phi) in enumerate(trace):
        w.writerow([i, n, phi])
    return buf.getvalue()
