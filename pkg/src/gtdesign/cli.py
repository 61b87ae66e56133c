"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 golden-file mismatch, 3 search did
not converge.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import asdict
from importlib import resources
from typing import Any, Optional, Sequence

from .optimizer import (
    TABLE1_D,
    TABLE1_P,
    Constraints,
    compare_to_golden,
    optimize,
    read_table_csv,
    rows_to_csv,
    table1,
)
from .screensim import sweep, sweep_to_csv
from .sensitivity import SE1, SE3, MisclassModel, model_from_dict
from .valsim import (
    NoBreakEvenError,
    NonConvergenceError,
    ValidationConfig,
    closed_form_expected_tests,
    estimate_phi,
    find_min_validation_n,
    min_population_for_benefit,
    outcome_document,
    total_validation_tests,
    trace_to_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_MISMATCH, EXIT_NO_CONVERGENCE = 0, 1, 2, 3
THREADS_ENV = "GTDESIGN_THREADS"

log = logging.getLogger("gtdesign")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def read_golden(name: str) -> str:
    return resources.files("gtdesign.data").joinpath(name).read_text()


def _published_validation() -> dict[str, dict[str, dict[str, Any]]]:
    out: dict[str, dict[str, dict[str, Any]]] = {}
    lines = [ln for ln in read_golden("validation_golden.csv").splitlines() if ln and not ln.startswith("#")]
    for rec in csv.DictReader(lines):
        out.setdefault(rec["case"], {})[rec["family"]] = {
            "p": float(rec["p"]),
            "n": int(rec["n"]),
            "t_v": int(rec["t_v"]),
            "n_star": int(rec["n_star"]),
        }
    return out


FAMILIES = {"linear": SE1, "hwang": SE3}
CASE_STUDIES = _published_validation()
# hypothetical preset with no validation study at all
CASE_STUDIES["zero"] = {"linear": {"p": 0.05, "n": 0, "t_v": 0, "n_star": 0}}


def _model_arg(value: Any) -> MisclassModel:
    if isinstance(value, MisclassModel):
        return value
    try:
        doc = json.loads(value) if isinstance(value, str) else value
        return model_from_dict(doc)
    except (ValueError, KeyError, TypeError) as exc:
        raise argparse.ArgumentTypeError(f"invalid model: {exc}") from None


def _float_list(value: Any) -> list[float]:
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    return [float(v) for v in str(value).split(",") if v.strip()]


def _k_range(value: Any) -> list[int]:
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    s = str(value)
    if "-" in s:
        lo, hi = s.split("-", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in s.split(",")]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of option values; flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", help="write result here instead of stdout")
    p.add_argument("--format", choices=("json", "csv"), default=None)
    p.add_argument("--threads", type=int, default=None, help=f"worker cap (default ${THREADS_ENV} or 1)")
    p.add_argument("--quiet", "-q", action="store_true", help="suppress progress on stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gtdesign", description="Pooled (Dorfman) testing design planner")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("optimize", help="optimal group size for one scenario")
    _add_common(s)
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--k-max", type=int, default=25)
    s.add_argument("--model", type=_model_arg, default=MisclassModel())
    s.add_argument("--delta-se", type=float, default=None)
    s.add_argument("--delta-sp", type=float, default=None)

    s = sub.add_parser("table1", help="misspecification grid under a Hwang dilution curve")
    _add_common(s)
    s.add_argument("--p-list", type=_float_list, default=list(TABLE1_P))
    s.add_argument("--d-list", type=_float_list, default=list(TABLE1_D))
    s.add_argument("--d-true", type=float, default=0.075)
    s.add_argument("--k-max", type=int, default=25)
    s.add_argument("--delta", type=float, default=0.95)
    s.add_argument("--raw", action="store_true", help="full precision instead of 3 decimals")
    s.add_argument("--check", nargs="?", const="", default=None, metavar="GOLDEN_CSV",
                   help="compare with a golden CSV (bundled published table by default)")

    s = sub.add_parser("validate", help="minimal validation-study size by simulation")
    _add_common(s)
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--model", type=_model_arg, required=True)
    s.add_argument("--k-max", type=int, default=10)
    s.add_argument("--delta", type=float, default=0.95)
    s.add_argument("--delta-sp", type=float, default=0.0)
    s.add_argument("--epsilon", type=float, default=0.95)
    s.add_argument("--phi-tolerance", type=float, default=0.01)
    s.add_argument("--replicates", type=int, default=50_000)
    s.add_argument("--n-initial", type=int, default=10_000)
    s.add_argument("--max-steps", type=int, default=60)
    s.add_argument("--engine", choices=("fast", "literal"), default="fast")
    s.add_argument("--trace-csv", help="also write the bisection trace as CSV")

    s = sub.add_parser("screen", help="simulate a screening program over group sizes")
    _add_common(s)
    s.add_argument("--population", type=int, required=True)
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--model", type=_model_arg, default=MisclassModel())
    s.add_argument("--k-range", type=_k_range, default=list(range(1, 26)), help="e.g. 1-25 or 2,4,8")

    s = sub.add_parser("nstar", help="break-even screening population")
    _add_common(s)
    s.add_argument("--n", type=int, required=True, help="validation sample size")
    s.add_argument("--t-v", type=int, default=None, help="validation tests (default: computed from n)")
    s.add_argument("--k-max", type=int, default=10)
    s.add_argument("--expected-tests", type=float, default=None)
    s.add_argument("--p", type=float, default=None)
    s.add_argument("--model", type=_model_arg, default=None)
    s.add_argument("--delta", type=float, default=0.95)

    s = sub.add_parser("casestudy", help="published validation scenarios")
    _add_common(s)
    s.add_argument("name", choices=sorted(CASE_STUDIES))
    s.add_argument("--family", choices=("linear", "hwang", "both"), default="both")
    s.add_argument("--simulate", action="store_true", help="also run the Monte Carlo search")
    s.add_argument("--replicates", type=int, default=50_000)
    s.add_argument("--check", action="store_true", help="exit 2 if validation test counts disagree")
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def _peek(argv: Sequence[str]) -> tuple[Optional[str], Optional[str]]:
    """Command name and ``--config`` value, before full validation."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(list(argv))
    return known.command, known.config


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    command, config_path = _peek(argv)
    if config_path and command in COMMANDS:
        try:
            with open(config_path) as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from None
        if not isinstance(config, dict):
            raise UsageError("config file must hold a JSON object")
        config = {k.replace("-", "_"): v for k, v in config.items()}
        sp = _subparser(parser, command)
        known = {a.dest for a in sp._actions} - {"help", "config"}
        unknown = sorted(set(config) - known)
        if unknown:
            raise UsageError(f"unknown config fields for {command}: {unknown}")
        sp.set_defaults(**config)
        for a in sp._actions:
            if a.dest in config:
                a.required = False
    args = parser.parse_args(argv)
    # config values arrive unconverted when they are not strings
    if isinstance(getattr(args, "model", None), dict):
        try:
            args.model = _model_arg(args.model)
        except argparse.ArgumentTypeError as exc:
            raise UsageError(str(exc)) from None
    for name, conv in (("p_list", _float_list), ("d_list", _float_list), ("k_range", _k_range)):
        if hasattr(args, name):
            setattr(args, name, conv(getattr(args, name)))
    if args.threads is None:
        env = os.environ.get(THREADS_ENV)
        args.threads = int(env) if env else 1
    return args


def _emit(args: argparse.Namespace, text: str) -> None:
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json(doc: dict) -> str:
    def default(o):
        if isinstance(o, float) and not math.isfinite(o):
            return None
        raise TypeError(type(o))
    return json.dumps(doc, indent=2, default=default) + "\n"


def _csv_from_records(records: list[dict], seed: int) -> str:
    buf = io.StringIO()
    buf.write(f"# seed={seed}\n")
    w = csv.DictWriter(buf, fieldnames=list(records[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(records)
    return buf.getvalue()


def cmd_optimize(args: argparse.Namespace) -> int:
    c = None
    if args.delta_se is not None or args.delta_sp is not None:
        c = Constraints(delta_se=args.delta_se or 0.0, delta_sp=args.delta_sp or 0.0)
    res = optimize(args.p, args.model, args.k_max, c)
    doc = {"seed": args.seed, "p": args.p, "k_max": args.k_max, "model": args.model.to_dict(), **asdict(res)}
    if args.format == "csv":
        rec = {k: v for k, v in doc.items() if k != "model"}
        _emit(args, _csv_from_records([rec], args.seed))
    else:
        _emit(args, _json(doc))
    return EXIT_OK


def cmd_table1(args: argparse.Namespace) -> int:
    rows = table1(args.p_list, args.d_list, args.d_true, args.k_max, args.delta)
    text = f"# seed={args.seed}\n" + rows_to_csv(rows, None if args.raw else 3)
    _emit(args, text)
    if args.check is None:
        return EXIT_OK
    golden_text = read_golden("table1_golden.csv") if args.check == "" else open(args.check).read()
    problems = compare_to_golden(rows, read_table_csv(golden_text))
    for msg in problems:
        print(f"mismatch: {msg}", file=sys.stderr)
    if problems:
        return EXIT_MISMATCH
    print(f"check passed: {len(rows)} rows agree with golden table", file=sys.stderr)
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = ValidationConfig(
        p=args.p, true_model=args.model, k_max=args.k_max, delta=args.delta, epsilon=args.epsilon,
        phi_tolerance=args.phi_tolerance, replicates=args.replicates, seed=args.seed,
        n_initial=args.n_initial, delta_sp=args.delta_sp,
    )
    try:
        outcome = find_min_validation_n(cfg, workers=args.threads, max_steps=args.max_steps, engine=args.engine)
    except NonConvergenceError as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        _emit(args, _json({"config": cfg.to_dict(), "seed": cfg.seed, "converged": False,
                           "error": str(exc), "bisection_trace": [list(t) for t in exc.trace]}))
        return EXIT_NO_CONVERGENCE
    if args.trace_csv:
        with open(args.trace_csv, "w") as fh:
            fh.write(trace_to_csv(outcome.bisection_trace))
    doc = outcome_document(cfg, outcome)
    doc["converged"] = True
    _emit(args, _json(doc))
    return EXIT_OK


def cmd_screen(args: argparse.Namespace) -> int:
    reports = sweep(args.population, args.p, args.model, args.k_range, seed=args.seed)
    if args.format == "json":
        _emit(args, _json({"seed": args.seed, "reports": [asdict(r) for r in reports]}))
    else:
        _emit(args, f"# seed={args.seed}\n" + sweep_to_csv(reports))
    return EXIT_OK


def cmd_nstar(args: argparse.Namespace) -> int:
    t_v = args.t_v if args.t_v is not None else total_validation_tests(args.n, args.k_max)
    e = args.expected_tests
    if e is None:
        if args.p is None or args.model is None:
            raise UsageError("give --expected-tests, or --p and --model to use the closed form")
        cfg = ValidationConfig(p=args.p, true_model=args.model, k_max=args.k_max, delta=args.delta,
                               n_initial=max(args.k_max, 10_000))
        e = closed_form_expected_tests(cfg)
    try:
        n_star = min_population_for_benefit(args.n, t_v, e)
    except NoBreakEvenError as exc:
        raise UsageError(str(exc)) from None
    doc = {"seed": args.seed, "n": args.n, "t_v": t_v, "expected_tests": e, "n_star": n_star}
    if args.format == "csv":
        _emit(args, _csv_from_records([doc], args.seed))
    else:
        _emit(args, _json(doc))
    return EXIT_OK


def _casestudy_entry(args: argparse.Namespace, family: str, pub: dict) -> dict:
    model = FAMILIES[family]
    n = pub["n"]
    t_v = total_validation_tests(n, 10)
    cfg = ValidationConfig(p=pub["p"], true_model=model, replicates=args.replicates, seed=args.seed)
    e_cf = closed_form_expected_tests(cfg)
    try:
        n_star_cf = min_population_for_benefit(n, t_v, e_cf)
    except NoBreakEvenError:
        n_star_cf = None
    entry = {
        "family": family,
        "model": model.to_dict(),
        "p": pub["p"],
        "published": {"n": n, "t_v": pub["t_v"], "n_star": pub["n_star"]},
        "t_v": t_v,
        "t_v_matches": t_v == pub["t_v"],
        "expected_tests_closed_form": e_cf,
        "n_star_closed_form": n_star_cf,
    }
    if args.simulate and n >= cfg.k_max:
        phi, mean_et = estimate_phi(cfg, n, workers=args.threads)
        try:
            n_star_sim = min_population_for_benefit(n, t_v, mean_et)
        except NoBreakEvenError:
            n_star_sim = None
        entry["at_published_n"] = {"phi_hat": phi, "mean_expected_tests": mean_et, "n_star": n_star_sim}
        try:
            entry["search"] = outcome_document(cfg, find_min_validation_n(cfg, workers=args.threads))
        except NonConvergenceError as exc:
            entry["search"] = {"converged": False, "error": str(exc)}
    return entry


def cmd_casestudy(args: argparse.Namespace) -> int:
    preset = CASE_STUDIES[args.name]
    families = [f for f in ("linear", "hwang") if f in preset and args.family in (f, "both")]
    if not families:
        raise UsageError(f"case {args.name!r} has no {args.family!r} scenario")
    entries = [_casestudy_entry(args, f, preset[f]) for f in families]
    _emit(args, _json({"case": args.name, "seed": args.seed, "scenarios": entries}))
    if args.check and not all(e["t_v_matches"] for e in entries):
        print("validation test counts disagree with published values", file=sys.stderr)
        return EXIT_MISMATCH
    return EXIT_OK


def _configure_logging(quiet: bool) -> None:
    # progress goes to whatever stderr is current, once per invocation
    for h in list(log.handlers):
        log.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.WARNING if quiet else logging.INFO)
    log.propagate = False


COMMANDS = {
    "optimize": cmd_optimize,
    "table1": cmd_table1,
    "validate": cmd_validate,
    "screen": cmd_screen,
    "nstar": cmd_nstar,
    "casestudy": cmd_casestudy,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"gtdesign: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    _configure_logging(args.quiet)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError) as exc:
        print(f"gtdesign: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
