"""Command-line pipeline: simulate | ingest | rank-stats | backtest.

Every run resolves its options into a configuration mapping whose
fingerprint (and the seed) is embedded in each output file, so runs with
equal fingerprints produce byte-identical outputs. Input files are
fingerprinted by content.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .marketdata import (DEFAULT_CLEAN_FLOOR, MISSING_POLICIES, PanelError,
                         RiskFreeCurve, clean_panel, ingest_csv,
                         missing_return_policy, write_panel_csv)
from .rankstats import RankingError, fit_slope, lowess, rank_log_return_means
from .report import (config_fingerprint, write_backtest_json, write_report_csv)
from .simulator import (ConfigError, market_config_from_dict, preset_paper_like,
                        simulate_market)
from .sptcore import STRATEGY_KINDS, default_strategies, run_experiment

_ERRORS = (PanelError, ConfigError, RankingError, ValueError, OSError)


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _parse_schema(text: str | None) -> dict[str, str] | None:
    if not text:
        return None
    schema = {}
    for item in text.split(","):
        key, sep, value = item.partition("=")
        if not sep or not key.strip() or not value.strip():
            raise PanelError(f"schema entries must look like canonical=actual, "
                             f"got {item!r}")
        schema[key.strip()] = value.strip()
    return schema


def _apply_config_file(args: argparse.Namespace, allowed: set[str]) -> None:
    """A --config file overrides every matching command-line option."""
    if not getattr(args, "config", None):
        return
    path = Path(args.config)
    if not path.exists():
        raise PanelError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PanelError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise PanelError(f"{path}: config must be a JSON object")
    for key, value in data.items():
        if key not in allowed:
            raise PanelError(f"{path}: unknown config key {key!r}")
        setattr(args, key, value)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_panel(path, floor: float, policy: str):
    panel = ingest_csv(path)
    panel = clean_panel(panel, floor)
    return missing_return_policy(panel, policy)


def cmd_simulate(args) -> int:
    _apply_config_file(args, {"sim_config", "n_stocks", "n_years", "seed",
                              "days_per_year", "out_dir"})
    if args.sim_config:
        path = Path(args.sim_config)
        if not path.exists():
            raise ConfigError(f"simulator config not found: {path}")
        raw = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: simulator config must be a JSON object")
        config = market_config_from_dict(raw)
    else:
        config = preset_paper_like(n_stocks=args.n_stocks, n_years=args.n_years,
                                   seed=args.seed,
                                   days_per_year=args.days_per_year)
    config_hash = config_fingerprint(config.to_dict())
    panel = simulate_market(config, n_workers=args.n_workers)
    out = _out_dir(args)
    rows = write_panel_csv(panel, out / "panel.csv",
                           provenance={"config_hash": config_hash,
                                       "seed": config.seed})
    provenance = {"command": "simulate", "config_hash": config_hash,
                  "seed": config.seed, "rows": rows,
                  "n_stocks": config.n_stocks, "n_days": config.n_days,
                  "config": config.to_dict(), "version": __version__}
    (out / "provenance.json").write_text(
        json.dumps(provenance, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out / 'panel.csv'} ({rows} rows)")
    return 0


def cmd_ingest(args) -> int:
    _apply_config_file(args, {"input", "schema", "floor", "missing_policy",
                              "out_dir"})
    source = Path(args.input)
    if not source.exists():
        raise PanelError(f"input file not found: {source}")
    panel = ingest_csv(source, schema=_parse_schema(args.schema))
    panel = clean_panel(panel, args.floor)
    panel = missing_return_policy(panel, args.missing_policy)
    resolved = {"command": "ingest", "input_digest": _file_digest(source),
                "floor": args.floor, "missing_policy": args.missing_policy,
                "schema": args.schema or ""}
    config_hash = config_fingerprint(resolved)
    out = _out_dir(args)
    rows = write_panel_csv(panel, out / "panel.csv",
                           provenance={"config_hash": config_hash})
    provenance = {**resolved, "config_hash": config_hash, "rows": rows,
                  "rows_ingested": panel.meta.get("rows_ingested"),
                  "duplicate_rows": panel.meta.get("duplicate_rows"),
                  "clean_replacements": panel.meta.get("clean_replacements"),
                  "missing_returns": panel.meta.get("missing_returns"),
                  "version": __version__}
    (out / "provenance.json").write_text(
        json.dumps(provenance, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out / 'panel.csv'} ({rows} rows)")
    return 0


def cmd_rank_stats(args) -> int:
    _apply_config_file(args, {"panel", "universe_size", "days_per_year",
                              "lowess_fraction", "floor", "missing_policy",
                              "out_dir"})
    source = Path(args.panel)
    if not source.exists():
        raise PanelError(f"panel file not found: {source}")
    resolved = {"command": "rank-stats", "panel_digest": _file_digest(source),
                "universe_size": args.universe_size,
                "days_per_year": args.days_per_year,
                "lowess_fraction": args.lowess_fraction,
                "floor": args.floor, "missing_policy": args.missing_policy}
    config_hash = config_fingerprint(resolved)
    panel = _load_panel(source, args.floor, args.missing_policy)
    stats = rank_log_return_means(panel, args.universe_size, args.days_per_year)
    smoothed = lowess(stats.ranks.astype(float), stats.variance,
                      args.lowess_fraction)
    out = _out_dir(args)

    lines = [f"# config_hash={config_hash}",
             "rank,growth,variance,variance_lowess"]
    for k in range(stats.n_ranks):
        lines.append(f"{k + 1},{float(stats.growth[k])!r},"
                     f"{float(stats.variance[k])!r},{float(smoothed[k])!r}")
    (out / "rank_stats.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    fits = {}
    for target in ("growth", "variance"):
        fit = fit_slope(stats, target)
        fits[target] = {"slope": fit.slope, "intercept": fit.intercept,
                        "stderr_slope": fit.stderr_slope,
                        "two_se_interval": list(fit.two_se_interval),
                        "contains_zero": fit.contains_zero()}
    payload = {"config_hash": config_hash, "n_ranks": stats.n_ranks,
               "n_days": stats.n_days, "days_per_year": stats.days_per_year,
               "slopes": fits, "version": __version__}
    (out / "slopes.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out / 'rank_stats.csv'} ({stats.n_ranks} ranks)")
    return 0


def cmd_backtest(args) -> int:
    _apply_config_file(args, {"panel", "risk_free", "strategies", "n_draws",
                              "seed", "universe_size", "window_months",
                              "days_per_year", "n_workers", "floor",
                              "missing_policy", "out_dir"})
    rf_path = Path(args.risk_free)
    if not rf_path.exists():
        raise PanelError(f"risk-free file not found: {rf_path}")
    source = Path(args.panel)
    if not source.exists():
        raise PanelError(f"panel file not found: {source}")
    kinds = [k.strip().upper() for k in str(args.strategies).split(",") if k.strip()]
    unknown = [k for k in kinds if k not in STRATEGY_KINDS]
    if unknown:
        raise ValueError(f"unknown strategy kind(s) {unknown}; "
                         f"choose from {STRATEGY_KINDS}")
    resolved = {"command": "backtest", "panel_digest": _file_digest(source),
                "risk_free_digest": _file_digest(rf_path),
                "strategies": kinds, "n_draws": args.n_draws, "seed": args.seed,
                "universe_size": args.universe_size,
                "window_months": args.window_months,
                "days_per_year": args.days_per_year,
                "floor": args.floor, "missing_policy": args.missing_policy}
    config_hash = config_fingerprint(resolved)

    panel = _load_panel(source, args.floor, args.missing_policy)
    rf = RiskFreeCurve.from_csv(rf_path)
    specs = default_strategies(kinds, args.seed)
    report = run_experiment(
        panel, specs, args.n_draws, rf,
        universe_size=args.universe_size, window_months=args.window_months,
        days_per_year=args.days_per_year, n_workers=args.n_workers,
        provenance={"config_hash": config_hash, "seed": str(args.seed),
                    "n_draws": str(args.n_draws)})
    out = _out_dir(args)
    write_report_csv(report, out / "backtest.csv")
    write_backtest_json(report, out / "backtest.json")
    failed = [name for name, block in report.invariants.items()
              if block.get("status") != "pass"]
    if failed:
        print(f"invariant check(s) failed: {failed}", file=sys.stderr)
        return 1
    print(f"wrote {out / 'backtest.csv'} ({len(report.window_months)} windows, "
          f"{len(kinds)} strategies)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sptlab",
        description="Rank-based market statistics and log-return "
                    "decomposition backtests.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out-dir", default=".", help="output directory")
        p.add_argument("--config", default=None,
                       help="JSON file whose keys override all other options")

    p = sub.add_parser("simulate", help="generate a synthetic panel CSV")
    common(p)
    p.add_argument("--sim-config", default=None,
                   help="JSON market config (overrides the preset options)")
    p.add_argument("--n-stocks", type=int, default=1000)
    p.add_argument("--n-years", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--days-per-year", type=int, default=250)
    p.add_argument("--n-workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="read, clean, and canonicalize a panel CSV")
    common(p)
    p.add_argument("--input", required=True, help="source CSV file")
    p.add_argument("--schema", default=None,
                   help="column mapping, e.g. date=DATE,id=PERMNO,return=RET,cap=CAP")
    p.add_argument("--floor", type=float, default=DEFAULT_CLEAN_FLOOR)
    p.add_argument("--missing-policy", choices=MISSING_POLICIES, default="drop")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("rank-stats",
                       help="per-rank growth/variance table and slope fits")
    common(p)
    p.add_argument("--panel", required=True, help="panel CSV file")
    p.add_argument("--universe-size", type=int, default=1000)
    p.add_argument("--days-per-year", type=int, default=250)
    p.add_argument("--lowess-fraction", type=float, default=0.05)
    p.add_argument("--floor", type=float, default=DEFAULT_CLEAN_FLOOR)
    p.add_argument("--missing-policy", choices=MISSING_POLICIES, default="drop")
    p.set_defaults(func=cmd_rank_stats)

    p = sub.add_parser("backtest",
                       help="overlapping-window strategy decomposition report")
    common(p)
    p.add_argument("--panel", required=True, help="panel CSV file")
    p.add_argument("--risk-free", required=True,
                   help="CSV of (date, annualized 1-year yield)")
    p.add_argument("--strategies", default="CW,EW,LO,RW,IRW")
    p.add_argument("--n-draws", type=int, default=1000,
                   help="replicas for randomized strategies")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--universe-size", type=int, default=1000)
    p.add_argument("--window-months", type=int, default=12)
    p.add_argument("--days-per-year", type=int, default=250)
    p.add_argument("--n-workers", type=int, default=1)
    p.add_argument("--floor", type=float, default=DEFAULT_CLEAN_FLOOR)
    p.add_argument("--missing-policy", choices=MISSING_POLICIES, default="drop")
    p.set_defaults(func=cmd_backtest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
