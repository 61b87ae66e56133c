"""Optimal group size by exhaustive scan, and misspecification analysis."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Optional, Sequence

from .model import check_group_size, check_prevalence, expected_tests
from .sensitivity import Hwang, MisclassModel

UNCONSTRAINED = "unconstrained"
CONSTRAINED = "constrained"


@dataclass(frozen=True)
class Constraints:
    delta_se: float = 0.0
    delta_sp: float = 0.0

    def __post_init__(self) -> None:
        for name in ("delta_se", "delta_sp"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")


@dataclass(frozen=True)
class OptResult:
    k_opt: int
    expected_tests: float
    se_at_k: float
    sp_at_k: float
    feasible_set_size: int
    mode: str


def optimize_from_curves(
    p: float,
    se: Sequence[float],
    sp: Sequence[float],
    constraints: Optional[Constraints] = None,
) -> OptResult:
    """Scan ``k = 1..len(se)`` where ``se[k-1]``, ``sp[k-1]`` are the curve values.

    NaN entries mark unknown values; such sizes are never feasible. Ties go
    to the smallest ``k``.
    """
    check_prevalence(p)
    if len(se) != len(sp) or not se:
        raise ValueError("se and sp curves must be non-empty and of equal length")
    best_k, best_et = 0, math.inf
    n_feasible = 0
    for k in range(1, len(se) + 1):
        s, c = se[k - 1], sp[k - 1]
        if math.isnan(s) or math.isnan(c):
            continue
        if constraints is not None and (s < constraints.delta_se or c < constraints.delta_sp):
            continue
        n_feasible += 1
        et = expected_tests(p, k, s, c)
        if et < best_et:
            best_k, best_et = k, et
    if best_k == 0:
        raise ValueError("no feasible group size")
    return OptResult(
        k_opt=best_k,
        expected_tests=best_et,
        se_at_k=se[best_k - 1],
        sp_at_k=sp[best_k - 1],
        feasible_set_size=n_feasible,
        mode=UNCONSTRAINED if constraints is None else CONSTRAINED,
    )


def curves(model: MisclassModel, p: float, k_max: int) -> tuple[list[float], list[float]]:
    ks = range(1, check_group_size(k_max) + 1)
    return [model.se(p, k) for k in ks], [model.sp(p, k) for k in ks]


def optimize_unconstrained(p: float, model: MisclassModel, k_max: int) -> OptResult:
    se, sp = curves(model, p, k_max)
    return optimize_from_curves(p, se, sp)


def optimize_constrained(
    p: float, model: MisclassModel, k_max: int, c: Constraints
) -> OptResult:
    se, sp = curves(model, p, k_max)
    return optimize_from_curves(p, se, sp, c)


def optimize(
    p: float, model: MisclassModel, k_max: int, c: Optional[Constraints] = None
) -> OptResult:
    if c is None:
        return optimize_unconstrained(p, model, k_max)
    return optimize_constrained(p, model, k_max, c)


@dataclass(frozen=True)
class MisspecRow:
    """Design chosen under an assumed Hwang index versus the true one.

    ``khat_opt`` is chosen with the assumed curve and ``k_opt`` with the
    true curve. ``se_hat_khat`` and ``et_hat_khat`` are what the planner
    believes at ``khat_opt``; ``se_khat`` and ``et_khat`` are what actually
    happens there.
    """

    p: float
    d_assumed: float
    d_true: float
    khat_opt: int
    k_opt: int
    se_hat_khat: float
    se_khat: float
    se_kopt: float
    et_hat_khat: float
    et_khat: float
    et_kopt: float
    mode: str


def misspec_analysis(
    p: float,
    d_true: float,
    d_assumed: float,
    k_max: int,
    c: Optional[Constraints] = None,
) -> MisspecRow:
    assumed = MisclassModel(Hwang(d_assumed))
    true = MisclassModel(Hwang(d_true))
    hat = optimize(p, assumed, k_max, c)
    opt = optimize(p, true, k_max, c)
    se_true_khat, sp_true_khat = true.evaluate(p, hat.k_opt)
    return MisspecRow(
        p=p,
        d_assumed=d_assumed,
        d_true=d_true,
        khat_opt=hat.k_opt,
        k_opt=opt.k_opt,
        se_hat_khat=hat.se_at_k,
        se_khat=se_true_khat,
        se_kopt=opt.se_at_k,
        et_hat_khat=hat.expected_tests,
        et_khat=expected_tests(p, hat.k_opt, se_true_khat, sp_true_khat),
        et_kopt=opt.expected_tests,
        mode=hat.mode,
    )


TABLE1_P = (0.01, 0.05, 0.1)
TABLE1_D = (0.0, 0.01, 0.05, 0.1, 0.3)


def table1(
    p_list: Iterable[float] = TABLE1_P,
    d_assumed_list: Iterable[float] = TABLE1_D,
    d_true: float = 0.075,
    k_max: int = 25,
    delta: float = 0.95,
) -> list[MisspecRow]:
    """Misspecification grid, ordered by ``(p, d_assumed)`` then mode."""
    c = Constraints(delta_se=delta)
    d_list = list(d_assumed_list)
    rows = []
    for p in p_list:
        for d in d_list:
            rows.append(misspec_analysis(p, d_true, d, k_max, None))
            rows.append(misspec_analysis(p, d_true, d, k_max, c))
    return rows


CSV_COLUMNS = (
    "p", "d", "khat_opt", "k_opt", "se_hat_khat", "se_khat", "se_kopt",
    "et_hat_khat", "et_khat", "et_kopt", "mode",
)
INT_COLUMNS = ("khat_opt", "k_opt")
FLOAT_COLUMNS = ("se_hat_khat", "se_khat", "se_kopt", "et_hat_khat", "et_khat", "et_kopt")


def round_half_up(x: float, places: int = 3) -> float:
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


def rows_to_csv(rows: Iterable[MisspecRow], places: Optional[int] = 3) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        rec = asdict(r)
        rec["d"] = rec.pop("d_assumed")
        out = []
        for col in CSV_COLUMNS:
            v = rec[col]
            if col in FLOAT_COLUMNS and places is not None:
                v = f"{round_half_up(v, places):.{places}f}"
            out.append(v)
        w.writerow(out)
    return buf.getvalue()


def read_table_csv(text: str) -> list[dict]:
    """Parse a Table-1 style CSV, skipping ``#`` comment lines."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    out = []
    for rec in csv.DictReader(lines):
        row = {"p": float(rec["p"]), "d": float(rec["d"]), "mode": rec["mode"]}
        for col in INT_COLUMNS:
            row[col] = int(rec[col])
        for col in FLOAT_COLUMNS:
            row[col] = float(rec[col])
        out.append(row)
    return out


def compare_to_golden(
    rows: Sequence[MisspecRow], golden: Sequence[dict], tol: float = 0.0005
) -> list[str]:
    """Return a list of human-readable mismatches (empty when all agree).

    Integer columns must match exactly; real columns to within ``tol`` of
    the published 3-decimal value.
    """
    index = {(g["p"], g["d"], g["mode"]): g for g in golden}
    problems = []
    for r in rows:
        key = (r.p, r.d_assumed, r.mode)
        g = index.get(key)
        if g is None:
            problems.append(f"{key}: no golden row")
            continue
        for col in INT_COLUMNS:
            if getattr(r, col) != g[col]:
                problems.append(f"{key} {col}: got {getattr(r, col)}, expected {g[col]}")
        for col in FLOAT_COLUMNS:
            got = getattr(r, col)
            if abs(got - g[col]) > tol + 1e-12:
                problems.append(f"{key} {col}: got {got:.6f}, expected {g[col]}")
    return problems


def row_fields() -> list[str]:
    return [f.name for f in fields(MisspecRow)]
