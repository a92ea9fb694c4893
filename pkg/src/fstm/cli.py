"""Command-line front end.

Exit codes: 0 success, 1 invalid input, 2 runtime failure, 3 fit did not
converge (the report is still written). Every input is loaded and checked
before any simulation starts, and every output file is written to a
temporary name and renamed into place.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .benchmark import is_monotone, sweep, to_csv
from .calibration import (
    AlignmentError,
    FitResult,
    NonIdentifiableError,
    canonical_name,
    compare_patterns,
    current_value,
    fit,
    fit_multistart,
    make_problem,
)
from .config import ConfigError, load_config
from .engine import SimulationError, load_trace, simulate, trace_files
from .patterns import (
    HEADER,
    PATTERN_KINDS,
    UNITS,
    DegenerateInputError,
    TargetFileError,
    extract_pattern,
    fit_allometry,
    format_targets,
    parse_target_file,
    with_noise,
)
from .presets import FREE_NAMES, extend_to_pa, load_preset
from .reference import max_relative_deviation, simulate_explicit
from .structure import ExpansionTooLarge

log = logging.getLogger("fstm")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_NO_CONVERGENCE = 0, 1, 2, 3
ORACLE_TOLERANCE = 1e-9


class InvalidInput(Exception):
    """Bad user input; maps to exit code 1."""


# --- help text -------------------------------------------------------------

CONFIG_HELP = """\
config JSON:
  {"parameters": {r, k_beer, s_p, env, sink_needle[], sink_internode[],
                  ring_sink_const, ring_sink_slope, lambda_pressler,
                  ring_density[], allometry_b[], allometry_beta[], slw,
                  needle_lifespan, wood_density, seed_biomass,
                  foliage_includes_own, foliage_mass_weighted},
   "rules": {pa_max, branches_per_cycle[], horizon}}
  Per-PA arrays start at PA 1. env is a number or one value per cycle.
  Sinks are rescaled so sink_needle[PA 1] = 1 and ring_density[PA 1] = 1."""

TARGET_HELP = f"""\
target CSV header: {",".join(HEADER)}
  kinds and units: {", ".join(f"{k} ({u})" for k, u in UNITS.items())}
  pattern 1 kinds: {", ".join(PATTERN_KINDS[1])}
  pattern 2 kinds: {", ".join(PATTERN_KINDS[2])}
  stem rows: pa=1, birth_cycle=1, rank = metamer index from the base
  branch rows: pa>=2, birth_cycle = axis birth cycle, rank >= 1
  crown rows: pa=0, birth_cycle=0, rank=0 (whole crown) or the stem rank
  of the whorl; weight may be blank (1)"""

FREE_HELP = """\
free parameter names: r, k_beer, s_p (S_p), ring_sink_const (P_0),
  ring_sink_slope (P_1), lambda_pressler (lambda), slw, and per-PA entries
  such as ring_density[2] (p_rg(2)), sink_needle[2] (P_a(2)),
  sink_internode[2] (P_e(2)). Default: """ + ",".join(FREE_NAMES)

TRACE_HELP = """\
trace directory: cycles.csv (one row per cycle), metamers.csv (one row per
  metamer of every axis class, with multiplicity), trace.json (full state,
  readable by extract), summary.json (totals)."""

ALLOMETRY_HELP = """\
allometry input CSV: either columns biomass,length, or a metamers.csv from
  simulate (columns internode, length, pa; --pa selects one PA)."""


# --- io helpers -----------------------------------------------------------


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _load_config(path: str):
    try:
        return load_config(path)
    except FileNotFoundError as exc:
        raise InvalidInput(f"config not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}: invalid JSON: {exc}") from exc


def _load_targets(path: str, pattern: int | None):
    try:
        targets = parse_target_file(path)
    except FileNotFoundError as exc:
        raise InvalidInput(f"targets not found: {path}") from exc
    if not len(targets):
        raise InvalidInput(f"{path}: no target rows")
    if pattern is not None and targets.pattern != pattern:
        raise InvalidInput(f"{path}: rows are pattern {targets.pattern}, --pattern is {pattern}")
    return targets


def _parse_free(text: str | None) -> list[str]:
    names = FREE_NAMES if not text else [t for t in text.split(",") if t.strip()]
    try:
        return [canonical_name(n) for n in names]
    except KeyError as exc:
        raise InvalidInput(str(exc.args[0])) from exc


def _parse_init(text: str | None, free: list[str]) -> dict[str, float] | list[str]:
    """``--init`` is inline JSON or a JSON file mapping names to starting values."""
    if not text:
        return free
    try:
        raw = json.loads(text) if text.lstrip().startswith("{") else json.loads(Path(text).read_text())
    except FileNotFoundError as exc:
        raise InvalidInput(f"init file not found: {text}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"--init: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise InvalidInput("--init must be a JSON object")
    try:
        given = {canonical_name(k): v for k, v in raw.items()}
    except KeyError as exc:
        raise InvalidInput(str(exc.args[0])) from exc
    extra = sorted(set(given) - set(free))
    if extra:
        raise InvalidInput(f"--init names not in --free: {extra}")
    bad = [k for k, v in given.items() if isinstance(v, bool) or not isinstance(v, (int, float))]
    if bad:
        raise InvalidInput(f"--init values must be numbers: {bad}")
    return given


def _problem(params, rules, targets, free, init, args):
    start = init if isinstance(init, dict) else {}
    values = {name: start.get(name, current_value(params, name)) for name in free}
    try:
        return make_problem(params, rules, targets, values, weighting=args.weighting)
    except ValueError as exc:
        raise InvalidInput(str(exc)) from exc


def _history_csv(result: FitResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iteration", "error", *result.names])
    for row in result.history:
        writer.writerow([row["iteration"], repr(row["error"]), *(repr(row[n]) for n in result.names)])
    return buf.getvalue()


# --- commands --------------------------------------------------------------


def cmd_simulate(args) -> int:
    params, rules = _load_config(args.config)
    trace = simulate(params, rules)
    files = trace_files(trace)
    code = EXIT_OK
    if args.explicit_oracle:
        deviation = max_relative_deviation(simulate_explicit(params, rules), trace)
        summary = json.loads(files["summary.json"])
        summary["explicit_oracle"] = {"max_relative_deviation": deviation, "tolerance": ORACLE_TOLERANCE}
        files["summary.json"] = _dump(summary)
        worst = max(deviation.values())
        if worst > ORACLE_TOLERANCE:
            log.error("explicit oracle disagrees: max relative deviation %.3g", worst)
            code = EXIT_RUNTIME
    for name, text in files.items():
        write_atomic(Path(args.out) / name, text)
    print(files["summary.json"].strip())
    return code


def cmd_extract(args) -> int:
    try:
        trace = load_trace(args.trace)
    except FileNotFoundError as exc:
        raise InvalidInput(f"trace not found: {args.trace}") from exc
    except (KeyError, json.JSONDecodeError) as exc:
        raise InvalidInput(f"{args.trace}: not a trace export ({exc})") from exc
    vector = extract_pattern(trace, args.pattern, args.per_whorl)
    write_atomic(args.out, format_targets(vector))
    print(f"{len(vector)} pattern-{args.pattern} rows -> {args.out}")
    return EXIT_OK


def _read_allometry(path: str, pa: int | None) -> list[tuple[float, float]]:
    try:
        text = Path(path).read_text()
    except FileNotFoundError as exc:
        raise InvalidInput(f"input not found: {path}") from exc
    reader = csv.DictReader(io.StringIO(text))
    cols = set(reader.fieldnames or [])
    if {"biomass", "length"} <= cols:
        q_col = "biomass"
    elif {"internode", "length"} <= cols:
        q_col = "internode"
    else:
        raise InvalidInput(f"{path}: need columns biomass,length or internode,length")
    if pa is not None and "pa" not in cols:
        raise InvalidInput(f"{path}: --pa given but the file has no pa column")
    records = []
    for n, row in enumerate(reader, start=2):
        try:
            if pa is not None and int(row["pa"]) != pa:
                continue
            records.append((float(row[q_col]), float(row["length"])))
        except (TypeError, ValueError) as exc:
            raise InvalidInput(f"{path}:{n}: {exc}") from exc
    return records


def cmd_allometry(args) -> int:
    records = _read_allometry(args.input, args.pa)
    try:
        result = fit_allometry(records)
    except DegenerateInputError as exc:
        raise InvalidInput(str(exc)) from exc
    text = _dump({"b": result.b, "beta": result.beta, "r_squared": result.r_squared, "n": result.n})
    if args.out:
        write_atomic(args.out, text)
    print(text.strip())
    return EXIT_OK


def cmd_fit(args) -> int:
    params, rules = _load_config(args.config)
    targets = _load_targets(args.targets, args.pattern)
    free = _parse_free(args.free)
    init = _parse_init(args.init, free)
    problem = _problem(params, rules, targets, free, init, args)
    if args.multi_start > 1:
        result = fit_multistart(problem, args.multi_start, seed=args.seed)
    else:
        result = fit(problem)
    report = {"pattern": problem.pattern, "weighting": args.weighting, **result.to_dict()}
    write_atomic(args.out, _dump(report))
    log_path = args.log or str(Path(args.out).with_suffix("")) + "_iterations.csv"
    write_atomic(log_path, _history_csv(result))
    print(_dump(report).strip())
    return EXIT_OK if result.converged else EXIT_NO_CONVERGENCE


def cmd_compare(args) -> int:
    params, rules = _load_config(args.config)
    t1 = _load_targets(args.targets1, 1)
    t2 = _load_targets(args.targets2, 2)
    free = _parse_free(args.free)
    init = _parse_init(args.init, free)
    p1 = _problem(params, rules, t1, free, init, args)
    p2 = _problem(params, rules, t2, free, init, args)
    report = compare_patterns(p1, p2)
    report["weighting"] = args.weighting
    write_atomic(args.out, _dump(report))
    print(_dump(report).strip())
    failed = [lbl for lbl, r in report["patterns"].items() if "failed" in r]
    if failed:
        log.error("pattern %s fit failed", ",".join(failed))
        return EXIT_RUNTIME
    if not all(r["converged"] for r in report["patterns"].values()):
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_benchmark(args) -> int:
    try:
        horizons = [int(h) for h in args.horizons.split(",")]
    except ValueError as exc:
        raise InvalidInput(f"--horizons: {exc}") from exc
    if any(h < 1 for h in horizons) or args.pa_max < 1 or args.branches < 0 or args.repeats < 1:
        raise InvalidInput("horizons, --pa-max and --repeats must be >= 1, --branches >= 0")
    if args.config:
        params, _ = _load_config(args.config)
    else:
        params, _ = load_preset("tree1")
    params = extend_to_pa(params, args.pa_max)
    points = sweep(params, horizons, args.pa_max, args.branches, args.repeats)
    text = to_csv(points)
    write_atomic(args.out, text)
    print(text.strip())
    print(f"speedup monotone in horizon: {is_monotone(points)}")
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    params, rules = _load_config(args.config)
    if not args.sigma >= 0:
        raise InvalidInput("--sigma must be >= 0")
    vector = extract_pattern(simulate(params, rules), args.pattern, args.per_whorl)
    vector = with_noise(vector, args.sigma, np.random.default_rng(args.seed))
    write_atomic(args.out, format_targets(vector))
    print(f"{len(vector)} pattern-{args.pattern} rows (sigma={args.sigma}, seed={args.seed}) -> {args.out}")
    return EXIT_OK


# --- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(
        prog="fstm",
        description="Factorized tree growth simulation and pattern-based calibration.",
        epilog="exit codes: 0 ok, 1 invalid input, 2 runtime failure, 3 no convergence\n"
        "FSTM_NODE_CAP caps the metamer count of explicit trees (default 10**7).",
        formatter_class=fmt,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the model and export a trace", epilog=CONFIG_HELP + "\n\n" + TRACE_HELP, formatter_class=fmt)
    p.add_argument("--config", required=True, help="config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--explicit-oracle", action="store_true", help="also simulate every metamer and check agreement")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("extract", help="pattern vector from a trace", epilog=TRACE_HELP + "\n\n" + TARGET_HELP, formatter_class=fmt)
    p.add_argument("--trace", required=True, help="trace directory or trace.json")
    p.add_argument("--pattern", type=int, choices=(1, 2), required=True)
    p.add_argument("--per-whorl", action="store_true", help="pattern 2: crown totals per whorl")
    p.add_argument("--out", required=True, help="target CSV")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("allometry", help="fit length = b * biomass**beta", epilog=ALLOMETRY_HELP, formatter_class=fmt)
    p.add_argument("--in", dest="input", required=True, help="input CSV")
    p.add_argument("--pa", type=int, help="restrict to one PA (metamers.csv input)")
    p.add_argument("--out", help="write the fit as JSON")
    p.set_defaults(func=cmd_allometry)

    weighting = dict(choices=("file", "unit", "relative"), default="file", help="residual weights: file column, 1, or 1/value**2")
    p = sub.add_parser("fit", help="calibrate free parameters", epilog="\n\n".join([CONFIG_HELP, TARGET_HELP, FREE_HELP]), formatter_class=fmt)
    p.add_argument("--config", required=True)
    p.add_argument("--targets", required=True, help="target CSV")
    p.add_argument("--pattern", type=int, choices=(1, 2), required=True)
    p.add_argument("--free", help="comma-separated parameter names")
    p.add_argument("--init", help="JSON object (inline or file) of starting values; others start at the config value")
    p.add_argument("--weighting", **weighting)
    p.add_argument("--multi-start", type=int, default=1, help="best of N fits from randomized starts")
    p.add_argument("--seed", type=int, default=0, help="seed for --multi-start")
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--log", help="iteration CSV (default: <out>_iterations.csv)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", help="fit pattern 1 and pattern 2 and compare", epilog="\n\n".join([CONFIG_HELP, TARGET_HELP, FREE_HELP]), formatter_class=fmt)
    p.add_argument("--config", required=True)
    p.add_argument("--targets1", required=True, help="pattern-1 target CSV")
    p.add_argument("--targets2", required=True, help="pattern-2 target CSV")
    p.add_argument("--free")
    p.add_argument("--init")
    p.add_argument("--weighting", **weighting)
    p.add_argument("--out", default="compare.json", help="report JSON")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser(
        "benchmark",
        help="factorized vs explicit wall time",
        epilog="CSV columns: horizon, pa_max, branches, metamers, classes, node_ratio,\n"
        "  factorized_seconds, explicit_seconds, speedup, status (ok or explicit-infeasible)",
        formatter_class=fmt,
    )
    p.add_argument("--config", help="parameters (default: tree1 preset); per-PA values are padded to --pa-max")
    p.add_argument("--horizons", default="5,10,15,20")
    p.add_argument("--pa-max", type=int, default=4)
    p.add_argument("--branches", type=int, default=2, help="laterals per metamer")
    p.add_argument("--repeats", type=int, default=3, help="timing repeats (minimum kept)")
    p.add_argument("--out", default="benchmark.csv")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("gen-synthetic", help="simulated target file, optionally noisy", epilog=CONFIG_HELP + "\n\n" + TARGET_HELP, formatter_class=fmt)
    p.add_argument("--config", required=True)
    p.add_argument("--pattern", type=int, choices=(1, 2), required=True)
    p.add_argument("--sigma", type=float, default=0.0, help="lognormal noise level")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-whorl", action="store_true")
    p.add_argument("--out", required=True, help="target CSV")
    p.set_defaults(func=cmd_gen_synthetic)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except TargetFileError as exc:
        for msg in exc.errors:
            print(f"target error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except (InvalidInput, AlignmentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SimulationError, NonIdentifiableError, ExpansionTooLarge, ArithmeticError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
