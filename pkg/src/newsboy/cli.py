"""Command-line interface.

Subcommands ``recommend``, ``backtest``, ``synth`` and ``validate``.  Every
flag may also be given through an environment variable ``NEWSBOY_<FLAG>``
(e.g. ``NEWSBOY_R_VALUES``); explicit flags win.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .allocator import allocate, validate_r
from .backtest import (
    DEFAULT_R,
    DEFAULT_R_VALUES,
    DEFAULT_WINDOW_WEEKS,
    GENERATOR,
    POLICIES,
    BacktestConfig,
    LambdaSampler,
    SyntheticWorld,
    build_windows,
    check_history,
    generate_world,
    index_sales,
    run_policy_comparison,
)
from .dataio import (
    WeekIndex,
    decisions_to_csv,
    decisions_to_jsonl,
    decisions_to_markdown,
    load_sales,
    results_to_csv,
    results_to_jsonl,
    results_to_markdown,
    sales_to_csv,
    write_atomic,
)
from .errors import ConfigError, DataError, NewsboyError

ENV_PREFIX = "NEWSBOY_"
FORMATS = ("csv", "markdown", "json-lines")


def _env_default(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    """Fill flags left unset on the command line from the environment."""
    for action in parser._actions:
        dest = action.dest
        if dest in ("help", "command") or getattr(args, dest, None) is not None:
            continue
        value = os.environ.get(ENV_PREFIX + dest.upper())
        if value is not None:
            setattr(args, dest, value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="newsboy", description="Newsboy SKU allocation and backtesting.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def io_flags(p, needs_input=True):
        if needs_input:
            p.add_argument("--input", help="sales CSV (cluster_id,sku_id,week,units)")
        p.add_argument("--output", help="output file; stdout when omitted")
        p.add_argument("--format", help=f"one of {', '.join(FORMATS)} (default csv)")

    p = sub.add_parser("recommend", help="allocation quantity per (cluster, SKU) for the target week")
    io_flags(p)
    p.add_argument("--r", help=f"FI/UI trade-off weight (default {DEFAULT_R})")
    p.add_argument("--window-weeks", help=f"estimation window length (default {DEFAULT_WINDOW_WEEKS})")
    p.add_argument("--target-week", help="week to allocate for (default: the week after the last one in the data)")
    p.add_argument("--workers", help="worker processes for the per-SKU allocation")

    p = sub.add_parser("backtest", help="FI/UI per cluster over an r sweep, optionally for several policies")
    io_flags(p)
    p.add_argument("--r", help="single r value (shorthand for --r-values)")
    p.add_argument("--r-values", help="comma-separated r values (default 0.025,0.05,0.1,0.2,0.4)")
    p.add_argument("--window-weeks", help=f"estimation window length (default {DEFAULT_WINDOW_WEEKS})")
    p.add_argument("--target-week", help="evaluation week (default: last week in the data)")
    p.add_argument("--policy", help=f"comma-separated subset of {', '.join(POLICIES)} (default newsboy)")
    p.add_argument("--seed", help="recorded in the run configuration")
    p.add_argument("--workers", help="worker processes for the per-SKU allocation")

    p = sub.add_parser("synth", help="write a synthetic Poisson sales CSV")
    io_flags(p, needs_input=False)
    p.add_argument("--clusters", help="number of clusters (default 12)")
    p.add_argument("--skus-per-cluster", help="SKUs per cluster (default 200)")
    p.add_argument("--weeks", help="weeks of history (default 12)")
    p.add_argument("--seed", help="generator seed (default 0)")
    p.add_argument("--lambda-mu", help="log-mean of the true weekly rates (default 0.5)")
    p.add_argument("--lambda-sigma", help="log-sd of the true weekly rates (default 1.0)")

    p = sub.add_parser("validate", help="parse and check a sales CSV")
    p.add_argument("--input", help="sales CSV")
    return parser


# ---------------------------------------------------------------------------
# Flag parsing
# ---------------------------------------------------------------------------


def _int(name, value, default, minimum=None):
    if value is None:
        return default
    try:
        out = int(str(value).strip())
    except ValueError:
        raise ConfigError(f"--{name}: expected an integer, got {value!r}") from None
    if minimum is not None and out < minimum:
        raise ConfigError(f"--{name}: must be >= {minimum}, got {out}")
    return out


def _float(name, value, default):
    if value is None:
        return default
    try:
        return float(str(value).strip())
    except ValueError:
        raise ConfigError(f"--{name}: expected a number, got {value!r}") from None


def _r(name, value):
    try:
        return validate_r(value)
    except ConfigError as exc:
        raise ConfigError(f"--{name}: {exc}") from None


def _format(args) -> str:
    fmt = (args.format or "csv").strip().lower()
    if fmt == "jsonl":
        fmt = "json-lines"
    if fmt not in FORMATS:
        raise ConfigError(f"--format: expected one of {', '.join(FORMATS)}, got {args.format!r}")
    return fmt


def _input(args) -> Path:
    if not args.input:
        raise ConfigError("--input: a sales CSV is required")
    path = Path(args.input)
    if not path.is_file():
        raise ConfigError(f"--input: no such file {str(path)!r}")
    return path


def _output(args) -> Path | None:
    if not args.output or args.output == "-":
        return None
    out = Path(args.output)
    if not out.parent.is_dir():
        raise ConfigError(f"--output: directory {str(out.parent)!r} does not exist")
    return out


def _target(args, weeks: WeekIndex, default: int) -> int:
    if args.target_week is None:
        return default
    try:
        return weeks.index(args.target_week)
    except DataError as exc:
        raise ConfigError(f"--target-week: {exc}") from None


def _emit(text: str, output: Path | None, meta: dict) -> None:
    if output is None:
        sys.stdout.write(text)
        return
    write_atomic(output, text)
    meta = {"generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"), **meta}
    write_atomic(output.with_name(output.name + ".meta.json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_recommend(args) -> int:
    path = _input(args)
    fmt = _format(args)
    output = _output(args)
    r = _r("r", args.r if args.r is not None else DEFAULT_R)
    window_weeks = _int("window-weeks", args.window_weeks, DEFAULT_WINDOW_WEEKS, minimum=1)
    workers = _int("workers", args.workers, None, minimum=1)

    data = load_sales(path)
    if not data.records:
        raise DataError(f"{path}: no sales records")
    first, last = data.week_range
    target = _target(args, data.weeks, last + 1)
    check_history([first, last], target, window_weeks, need_target=False)

    table = index_sales(data)
    windows, _ = build_windows(table, target, window_weeks, keep_empty=True)
    batch = allocate(windows, r, workers=workers)
    if batch.failures:
        raise DataError("; ".join(f.message for f in batch.failures))
    render = {"csv": decisions_to_csv, "json-lines": decisions_to_jsonl, "markdown": decisions_to_markdown}[fmt]
    meta = {
        "command": "recommend",
        "input": str(path),
        "r": r,
        "window_weeks": window_weeks,
        "target_week": data.weeks.label(target),
        "window": [data.weeks.label(target - window_weeks), data.weeks.label(target - 1)],
        "sku_count": len(batch),
        "ineligible_sku_count": sum(not d.eligible for d in batch),
        "week_mapping": data.weeks.mapping(r.week for r in data.records),
    }
    _emit(render(batch.decisions), output, meta)
    return 0


def _r_values(args) -> tuple[float, ...]:
    if args.r_values is not None:
        parts = [p for p in str(args.r_values).split(",") if p.strip()]
        if not parts:
            raise ConfigError("--r-values: no values given")
        return tuple(_r("r-values", p) for p in parts)
    if args.r is not None:
        return (_r("r", args.r),)
    return DEFAULT_R_VALUES


def cmd_backtest(args) -> int:
    path = _input(args)
    fmt = _format(args)
    output = _output(args)
    r_values = _r_values(args)
    window_weeks = _int("window-weeks", args.window_weeks, DEFAULT_WINDOW_WEEKS, minimum=1)
    seed = _int("seed", args.seed, None)
    workers = _int("workers", args.workers, None, minimum=1)
    policies = [p.strip() for p in (args.policy or "newsboy").split(",") if p.strip()]
    for p in policies:
        if p not in POLICIES:
            raise ConfigError(f"--policy: unknown policy {p!r}; choose from {', '.join(POLICIES)}")

    data = load_sales(path)
    if not data.records:
        raise DataError(f"{path}: no sales records")
    target = _target(args, data.weeks, data.week_range[1])
    config = BacktestConfig(target, window_weeks, r_values, policies[0], seed)
    comparison = run_policy_comparison(data.records, config, policies, workers=workers)
    render = {"csv": results_to_csv, "json-lines": results_to_jsonl, "markdown": results_to_markdown}[fmt]
    meta = {
        "command": "backtest",
        "input": str(path),
        "target_week": data.weeks.label(target),
        "runs": {p: res.metadata for p, res in comparison.results.items()},
        "week_mapping": data.weeks.mapping(r.week for r in data.records),
    }
    _emit(render(comparison), output, meta)
    return 0


def cmd_synth(args) -> int:
    output = _output(args)
    fmt = _format(args)
    if fmt != "csv":
        raise ConfigError("--format: synth writes csv only")
    sampler = LambdaSampler(
        mu=_float("lambda-mu", args.lambda_mu, LambdaSampler.mu),
        sigma=_float("lambda-sigma", args.lambda_sigma, LambdaSampler.sigma),
    )
    world = SyntheticWorld(
        clusters=_int("clusters", args.clusters, 12, minimum=1),
        skus_per_cluster=_int("skus-per-cluster", args.skus_per_cluster, 200, minimum=1),
        weeks=_int("weeks", args.weeks, 12, minimum=1),
        seed=_int("seed", args.seed, 0, minimum=0),
        lambda_sampler=sampler,
    )
    records = generate_world(world)
    meta = {
        "command": "synth",
        "generator": GENERATOR,
        "seed": world.seed,
        "clusters": world.clusters,
        "skus_per_cluster": world.skus_per_cluster,
        "weeks": world.weeks,
        "lambda_sampler": {"mu": sampler.mu, "sigma": sampler.sigma, "low": sampler.low, "high": sampler.high},
        "record_count": len(records),
    }
    _emit(sales_to_csv(records), output, meta)
    return 0


def cmd_validate(args) -> int:
    path = _input(args)
    data = load_sales(path)
    clusters = {r.cluster_id for r in data}
    pairs = {(r.cluster_id, r.sku_id) for r in data}
    if data.records:
        first, last = data.week_range
        span = f"weeks {data.weeks.label(first)} .. {data.weeks.label(last)}"
    else:
        span = "no weeks"
    print(f"{path}: {len(data)} records, {len(clusters)} clusters, {len(pairs)} cluster-SKU pairs, {span}")
    return 0


COMMANDS = {"recommend": cmd_recommend, "backtest": cmd_backtest, "synth": cmd_synth, "validate": cmd_validate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    _env_default(sub, args)
    try:
        return COMMANDS[args.command](args)
    except NewsboyError as exc:
        print(f"newsboy {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
