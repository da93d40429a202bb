"""Decomposition report model and CSV/JSON serialization.

The CSV is the summary table: one row per metric (absolute and
relative-to-CW), one column per strategy. The JSON sidecar carries the
per-window series, the percentile blocks for randomized strategies, the
invariant check results, and full provenance.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

METRIC_KEYS = ("total_log_return", "average_growth", "excess_growth",
               "arithmetic_return", "stdev_arithmetic_return", "sharpe_ratio")
RELATIVE_METRICS = METRIC_KEYS[:4]

REPORT_ROWS = ("total_log_return", "total_log_return_vs_cw",
               "average_growth", "average_growth_vs_cw",
               "excess_growth", "excess_growth_vs_cw",
               "arithmetic_return", "arithmetic_return_vs_cw",
               "stdev_arithmetic_return", "sharpe_ratio")


def config_fingerprint(mapping: dict) -> str:
    """Stable short hash of a JSON-able configuration mapping."""
    canonical = json.dumps(mapping, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class StrategyResult:
    """Across-window aggregates for one strategy (annual units).

    For randomized strategies the point values are the medians over
    ``n_draws`` independent experiment replicas and ``percentiles`` holds the
    (10th, 50th, 90th) percentile of each metric over those replicas.
    """

    kind: str
    total_log_return: float
    average_growth: float
    excess_growth: float
    arithmetic_return: float
    stdev_arithmetic_return: float
    sharpe_ratio: float
    n_draws: int = 1
    seed: int | None = None
    percentiles: dict | None = None   # metric -> (p10, p50, p90)
    per_window: dict | None = None    # metric -> tuple over windows
    per_draw: dict | None = None      # metric -> tuple over draws

    def value(self, metric: str) -> float:
        if metric not in METRIC_KEYS:
            raise KeyError(metric)
        return getattr(self, metric)


@dataclass(frozen=True)
class DecompositionReport:
    """Backtest summary across all strategies and windows."""

    strategies: tuple[StrategyResult, ...]
    relative_to_cw: dict            # kind -> metric -> value - CW value
    window_months: tuple[str, ...]  # 'YYYY-MM' label per window
    window_start_dates: tuple[str, ...]
    window_lengths: tuple[int, ...]
    universe_size: int
    window_span_months: int
    days_per_year: int
    n_random_draws: int
    invariants: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(s.kind for s in self.strategies)

    def strategy(self, kind: str) -> StrategyResult:
        for s in self.strategies:
            if s.kind == kind:
                return s
        raise KeyError(kind)

    def to_table(self) -> "ReportTable":
        values = {}
        for row in REPORT_ROWS:
            if row.endswith("_vs_cw"):
                metric = row[:-len("_vs_cw")]
                values[row] = {k: float(self.relative_to_cw[k][metric])
                               for k in self.kinds}
            else:
                values[row] = {k: float(self.strategy(k).value(row))
                               for k in self.kinds}
        return ReportTable(strategies=self.kinds, values=values,
                           provenance=dict(self.provenance))


@dataclass(frozen=True)
class ReportTable:
    """The summary table alone: rows = REPORT_ROWS, columns = strategies."""

    strategies: tuple[str, ...]
    values: dict   # row -> strategy -> float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        missing = [row for row in REPORT_ROWS if row not in self.values]
        if missing:
            raise ValueError(f"report table is missing row(s) {missing}")
        extra = [row for row in self.values if row not in REPORT_ROWS]
        if extra:
            raise ValueError(f"report table has unknown row(s) {extra}")
        for row, cells in self.values.items():
            if set(cells) != set(self.strategies):
                raise ValueError(f"row {row!r} does not cover every strategy")


def write_report_csv(table: ReportTable | DecompositionReport, path) -> None:
    if isinstance(table, DecompositionReport):
        table = table.to_table()
    lines = [f"# {key}={table.provenance[key]}" for key in sorted(table.provenance)]
    lines.append("metric," + ",".join(table.strategies))
    for row in REPORT_ROWS:
        cells = (repr(float(table.values[row][k])) for k in table.strategies)
        lines.append(row + "," + ",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report_csv(path) -> ReportTable:
    provenance = {}
    header = None
    values = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line.lstrip("# ").partition("=")
            provenance[key] = value
            continue
        cells = line.split(",")
        if header is None:
            if cells[0] != "metric":
                raise ValueError(f"{path}: expected 'metric' header, got {cells[0]!r}")
            header = tuple(cells[1:])
            continue
        row = cells[0]
        if len(cells) != len(header) + 1:
            raise ValueError(f"{path}: row {row!r} has {len(cells) - 1} cells, "
                             f"expected {len(header)}")
        values[row] = {k: float(v) for k, v in zip(header, cells[1:])}
    if header is None:
        raise ValueError(f"{path}: no table header found")
    return ReportTable(strategies=header, values=values, provenance=provenance)


def report_to_json_dict(report: DecompositionReport) -> dict:
    strategies = {}
    for s in report.strategies:
        entry = {metric: float(s.value(metric)) for metric in METRIC_KEYS}
        entry["n_draws"] = int(s.n_draws)
        if s.seed is not None:
            entry["seed"] = int(s.seed)
        entry["relative_to_cw"] = {m: float(v)
                                   for m, v in report.relative_to_cw[s.kind].items()}
        if s.percentiles is not None:
            entry["percentiles"] = {m: [float(x) for x in p]
                                    for m, p in s.percentiles.items()}
        if s.per_window is not None:
            entry["per_window"] = {m: [float(x) for x in series]
                                   for m, series in s.per_window.items()}
        if s.per_draw is not None:
            entry["per_draw"] = {m: [float(x) for x in series]
                                 for m, series in s.per_draw.items()}
        strategies[s.kind] = entry
    return {
        "strategies": strategies,
        "windows": [
            {"month": m, "start_date": d, "n_days": int(n)}
            for m, d, n in zip(report.window_months, report.window_start_dates,
                               report.window_lengths)
        ],
        "universe_size": int(report.universe_size),
        "window_span_months": int(report.window_span_months),
        "days_per_year": int(report.days_per_year),
        "n_random_draws": int(report.n_random_draws),
        "invariants": report.invariants,
        "provenance": report.provenance,
        "metadata": report.metadata,
    }


def write_backtest_json(report: DecompositionReport, path) -> None:
    text = json.dumps(report_to_json_dict(report), sort_keys=True, indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8")
