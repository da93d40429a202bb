"""Return averages, naive strategies, and the log-return decomposition.

A buy-and-hold window fixes share counts at its first day; weights then
drift with prices. Over the window the portfolio log-return splits exactly
into an average-growth component (the weight-averaged constituent
log-returns, summed over days) and an excess-growth component (the
diversification term, computed as the residual). The direct covariance
route `excess_growth_direct` values the same excess-growth term from a
covariance matrix and serves as an independent cross-check.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .marketdata import PanelError, ReturnPanel, RiskFreeCurve
from .rankstats import rank_day
from .report import (METRIC_KEYS, RELATIVE_METRICS, DecompositionReport,
                     StrategyResult)

STRATEGY_KINDS = ("CW", "EW", "LO", "RW", "IRW")
RANDOMIZED_KINDS = frozenset({"RW", "IRW"})

# uniform draws live on (eps, 1] so the inverse-random weights stay finite
UNIFORM_EPS = 1e-12

_KIND_TAG = {kind: i for i, kind in enumerate(STRATEGY_KINDS)}


@dataclass(frozen=True)
class ReturnAverages:
    """The three classical multi-period average returns, per period."""

    arithmetic: float
    geometric: float
    logarithmic: float


def return_averages(returns: Sequence[float]) -> ReturnAverages:
    """Arithmetic, geometric, and logarithmic average of a return sequence.

    arithmetic  = mean(1 + r) - 1
    geometric   = (prod(1 + r)) ** (1/N) - 1
    logarithmic = mean(log(1 + r))

    The three always satisfy arithmetic >= geometric >= logarithmic for
    returns above -100%.
    """
    r = np.asarray(returns, dtype=np.float64)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("need a non-empty 1-d return sequence")
    if not np.all(np.isfinite(r)):
        raise ValueError("returns must be finite")
    if np.any(r <= -1.0):
        raise ValueError("returns of -100% or worse have no logarithm")
    mean_log = float(np.mean(np.log1p(r)))
    return ReturnAverages(arithmetic=float(r.mean()),
                          geometric=float(np.expm1(mean_log)),
                          logarithmic=mean_log)


def volatility_drag(mean_arithmetic: float, variance: float) -> float:
    """Log-return approximation: arithmetic mean less half the variance."""
    return mean_arithmetic - 0.5 * variance


@dataclass(frozen=True)
class StrategySpec:
    """One of the five naive weighting rules, with a seed when randomized."""

    kind: str
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}; "
                             f"choose one of {STRATEGY_KINDS}")
        if self.kind in RANDOMIZED_KINDS:
            if self.seed is None:
                raise ValueError(f"{self.kind} needs a seed")
        elif self.seed is not None:
            raise ValueError(f"{self.kind} is deterministic and takes no seed")

    @property
    def randomized(self) -> bool:
        return self.kind in RANDOMIZED_KINDS


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Normalized long-only weights over a named universe."""

    universe: tuple[str, ...]
    weights: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size != len(self.universe):
            raise ValueError("weights must align with the universe")
        if w.size == 0:
            raise ValueError("empty universe")
        if not np.all(np.isfinite(w)) or np.any(w < 0.0):
            raise ValueError("weights must be finite and non-negative")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "universe", tuple(self.universe))


def derive_seed(seed: int, *tags: int) -> int:
    """Deterministic 64-bit child seed for a tagged substream."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(tags))
    return int(ss.generate_state(1, np.uint64)[0])


def default_strategies(kinds: Sequence[str], seed: int) -> list[StrategySpec]:
    """Specs for the requested kinds; randomized kinds get derived seeds."""
    specs = []
    for kind in kinds:
        if kind in RANDOMIZED_KINDS:
            specs.append(StrategySpec(kind, derive_seed(seed, _KIND_TAG[kind])))
        else:
            specs.append(StrategySpec(kind))
    return specs


def _uniform_open_closed(rng: np.random.Generator, n: int) -> np.ndarray:
    # maps [0, 1) draws onto (UNIFORM_EPS, 1]
    return 1.0 - rng.random(n) * (1.0 - UNIFORM_EPS)


def _spec_rng(spec: StrategySpec) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(spec.seed))
    return np.random.Generator(np.random.Philox(ss))


def make_weights(spec: StrategySpec, universe: Sequence[str], caps,
                 rng: np.random.Generator | None = None) -> WeightVector:
    """Initial weights of a strategy over a universe with the given caps.

    CW is proportional to cap, EW equal, LO proportional to cap squared, RW
    proportional to a uniform draw on (eps, 1], IRW to its reciprocal.
    Randomized kinds are reproducible from ``spec.seed`` (or from an
    explicitly supplied generator, which takes precedence).
    """
    caps = np.asarray(caps, dtype=np.float64)
    n = caps.size
    if caps.ndim != 1 or n != len(universe):
        raise ValueError("caps must align with the universe")
    if not np.all(np.isfinite(caps)) or np.any(caps <= 0.0):
        raise ValueError("caps must be positive and finite")
    kind = spec.kind
    if kind == "CW":
        raw = caps
    elif kind == "EW":
        raw = np.ones(n)
    elif kind == "LO":
        raw = caps * caps
    else:
        if rng is None:
            rng = _spec_rng(spec)
        u = _uniform_open_closed(rng, n)
        raw = u if kind == "RW" else 1.0 / u
    return WeightVector(tuple(universe), raw / raw.sum())


def sample_log_return_covariance(panel: ReturnPanel, universe: Sequence[str],
                                 start_index: int, end_index: int,
                                 days_per_year: int = 250) -> np.ndarray:
    """Annualized sample covariance (ddof=1) of daily log-returns.

    The window must be complete: any missing return in it is an error, since
    a covariance over ragged data would not be comparable across routes.
    """
    if end_index - start_index < 2:
        raise PanelError("need at least 2 days to estimate a covariance")
    cols = panel.column_indices(universe)
    r = panel.returns[start_index:end_index, cols]
    if not np.all(np.isfinite(r)):
        raise PanelError("window has missing returns; covariance needs complete data")
    return np.cov(np.log1p(r), rowvar=False, ddof=1) * days_per_year


def excess_growth_direct(weights: WeightVector, covariance, period: float = 1.0) -> float:
    """Excess growth from a covariance matrix: half of (weighted average
    constituent variance minus portfolio variance), times the period length
    in years.

    Nonnegative for any long-only weight vector and positive semidefinite
    covariance.
    """
    cov = np.asarray(covariance, dtype=np.float64)
    w = weights.weights
    n = w.size
    if cov.shape != (n, n):
        raise ValueError(f"covariance must be {n}x{n} to match the weights")
    if not np.all(np.isfinite(cov)):
        raise ValueError("covariance must be finite")
    asym = float(np.max(np.abs(cov - cov.T))) if n > 1 else 0.0
    if asym > 1e-10:
        raise ValueError(f"covariance asymmetry {asym:.3e} exceeds 1e-10")
    diag = np.diag(cov)
    scale = max(1.0, float(np.max(np.abs(diag)))) if n else 1.0
    min_eig = float(np.linalg.eigvalsh(cov)[0]) if n > 1 else float(cov[0, 0])
    if min_eig < -1e-8 * scale:
        raise ValueError(f"covariance is not positive semidefinite "
                         f"(min eigenvalue {min_eig:.3e})")
    weighted_avg_var = float(w @ diag)
    portfolio_var = float(w @ cov @ w)
    return 0.5 * (weighted_avg_var - portfolio_var) * float(period)


@dataclass(frozen=True)
class WindowResult:
    """One strategy evaluated over one buy-and-hold window."""

    start_month: str
    start_date: str
    n_days: int
    total_log_return: float
    avg_growth: float
    excess_growth: float
    arithmetic_return: float
    strategy: StrategySpec | None = None
    delisted: int = 0


def _require_cleaned(panel: ReturnPanel) -> None:
    if panel.returns.size and np.nanmin(panel.returns) <= -1.0:
        raise PanelError("panel contains -100% returns; apply clean_panel first")


def _run_window_block(returns: np.ndarray, cols: np.ndarray, i0: int, i1: int,
                      weight_rows: np.ndarray):
    """Evaluate many buy-and-hold portfolios over one day range at once.

    ``weight_rows`` is (n_portfolios, n_members); all portfolios share the
    universe, so a delisting (missing return mid-window) hits every row: the
    dead member's weight is redistributed pro-rata across survivors. Returns
    per-row totals, average-growth, excess-growth, arithmetic returns, plus
    the delist count and the worst decomposition-identity error.
    """
    W = np.array(weight_rows, dtype=np.float64)
    alive = np.ones(cols.size, dtype=bool)
    log_value = np.zeros(W.shape[0])
    avg_growth = np.zeros(W.shape[0])
    delisted = 0
    for t in range(i0, i1):
        r = returns[t, cols]
        missing = ~np.isfinite(r)
        newly = missing & alive
        if newly.any():
            alive &= ~newly
            delisted += int(newly.sum())
            W[:, newly] = 0.0
            total = W.sum(axis=1)
            if np.any(total <= 0.0):
                raise PanelError(f"every holding delisted by day index {t}")
            W /= total[:, None]
        r_filled = np.where(missing, 0.0, r)
        # sum(w * r) equals the portfolio gross return minus 1 because the
        # weights sum to 1; log1p of it avoids 1+x rounding for small moves
        gross_minus_1 = W @ r_filled
        log_value += np.log1p(gross_minus_1)
        avg_growth += W @ np.log1p(r_filled)
        W *= 1.0 + r_filled
        W /= (1.0 + gross_minus_1)[:, None]
    excess = log_value - avg_growth
    identity_error = float(np.max(np.abs(log_value - (avg_growth + excess)))) \
        if W.shape[0] else 0.0
    return log_value, avg_growth, excess, np.expm1(log_value), delisted, identity_error


def run_window(panel: ReturnPanel, weights: WeightVector, start: int,
               horizon_days: int) -> WindowResult:
    """Buy-and-hold one portfolio from the first trading day of a month.

    ``start`` indexes the panel's month list. Share counts are fixed by the
    initial weights; daily weights drift with prices. The excess-growth
    component is the residual total log-return minus average growth, so the
    decomposition identity holds exactly. A member that stops trading
    mid-window keeps its final return and its weight is then redistributed
    pro-rata across the survivors.
    """
    _require_cleaned(panel)
    labels = panel.month_labels
    if not 0 <= start < len(labels):
        raise PanelError(f"month index {start} out of range (panel has "
                         f"{len(labels)} months)")
    if horizon_days < 1:
        raise PanelError("horizon_days must be >= 1")
    i0 = int(panel.month_start_indices[start])
    i1 = i0 + horizon_days
    if i1 > panel.n_days:
        raise PanelError(f"window starting {labels[start]} needs {horizon_days} "
                         f"days, panel has {panel.n_days - i0} left")
    cols = panel.column_indices(weights.universe)
    day0 = panel.returns[i0, cols]
    if not np.all(np.isfinite(day0)):
        bad = weights.universe[int(np.flatnonzero(~np.isfinite(day0))[0])]
        raise PanelError(f"{bad!r} has no return on the window start "
                         f"{panel.dates[i0]}")
    total, avg, excess, arith, delisted, _ = _run_window_block(
        panel.returns, cols, i0, i1, weights.weights[None, :])
    return WindowResult(
        start_month=labels[start], start_date=str(panel.dates[i0]),
        n_days=horizon_days, total_log_return=float(total[0]),
        avg_growth=float(avg[0]), excess_growth=float(excess[0]),
        arithmetic_return=float(arith[0]), delisted=delisted)


def _draw_rng(spec: StrategySpec, draw: int, window: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(spec.seed),
                                spawn_key=(_KIND_TAG[spec.kind], draw, window))
    return np.random.Generator(np.random.Philox(ss))


def _window_table(panel: ReturnPanel, window_months: int):
    labels = panel.month_labels
    starts = panel.month_start_indices
    n_windows = len(labels) - window_months
    if n_windows < 2:
        raise PanelError(f"panel spans {len(labels)} months; need at least "
                         f"{window_months + 2} for two windows")
    return [(labels[w], int(starts[w]), int(starts[w + window_months]))
            for w in range(n_windows)]


def run_experiment(panel: ReturnPanel, strategies: Sequence[StrategySpec],
                   n_random_draws: int, rf: RiskFreeCurve, *,
                   universe_size: int, window_months: int = 12,
                   days_per_year: int = 250, n_workers: int = 1,
                   keep_window_series: bool = True,
                   provenance: dict | None = None) -> DecompositionReport:
    """Backtest the strategies over overlapping monthly-start windows.

    At the first trading day of each start month the top ``universe_size``
    securities by capitalization form the universe; every strategy builds
    its initial weights there and holds for ``window_months`` months.
    Per-window quantities are averaged across windows (a 12-month window is
    already annual, so no further scaling is applied); the Sharpe ratio uses
    the one-year risk-free yield in force at each window start. Randomized
    strategies run ``n_random_draws`` full experiment replicas, each drawing
    fresh weights for every window, and report the median and 10th/90th
    percentiles of the replica-level aggregates.

    Results are bit-identical for any ``n_workers``: every (strategy, draw,
    window) has a pre-assigned RNG substream and windows are reduced in a
    fixed order.
    """
    _require_cleaned(panel)
    specs = list(strategies)
    kinds = [s.kind for s in specs]
    if len(set(kinds)) != len(kinds):
        raise ValueError("duplicate strategy kinds")
    if "CW" not in kinds:
        raise ValueError("strategies must include CW, the relative baseline")
    if n_random_draws < 1:
        raise ValueError("n_random_draws must be >= 1")
    if universe_size < 2:
        raise ValueError("universe_size must be >= 2")
    if n_workers < 1:
        raise ValueError("n_workers must be >= 1")

    windows = _window_table(panel, window_months)
    n_windows = len(windows)
    # fail fast on risk-free coverage before any window is evaluated
    rf_yields = np.array([rf.yield_at(panel.dates[i0]) for _, i0, _ in windows])

    rows: list[tuple[StrategySpec, int | None]] = []
    for spec in specs:
        if spec.randomized:
            rows.extend((spec, d) for d in range(n_random_draws))
        else:
            rows.append((spec, None))
    n_rows = len(rows)

    def run_one(w_index: int):
        label, i0, i1 = windows[w_index]
        ranked = rank_day(panel, panel.dates[i0], universe_size)
        cols = panel.column_indices(ranked.security_ids)
        W = np.empty((n_rows, universe_size))
        norm_err = 0.0
        min_weight = np.inf
        for j, (spec, draw) in enumerate(rows):
            rng = _draw_rng(spec, draw, w_index) if spec.randomized else None
            wv = make_weights(spec, ranked.security_ids, ranked.market_caps, rng=rng)
            W[j] = wv.weights
            norm_err = max(norm_err, abs(float(wv.weights.sum()) - 1.0))
            min_weight = min(min_weight, float(wv.weights.min()))
        block = _run_window_block(panel.returns, cols, i0, i1, W)
        return block + (norm_err, min_weight)

    if n_workers == 1:
        results = [run_one(w) for w in range(n_windows)]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(run_one, range(n_windows)))

    totals = np.column_stack([res[0] for res in results])
    avgs = np.column_stack([res[1] for res in results])
    excesses = np.column_stack([res[2] for res in results])
    ariths = np.column_stack([res[3] for res in results])
    delisted = sum(res[4] for res in results)
    identity_error = max(res[5] for res in results)
    norm_error = max(res[6] for res in results)
    min_weight = min(res[7] for res in results)

    def aggregate(t, a, e, g):
        stdev = float(np.std(g, ddof=1))
        sharpe = float(np.mean(g - rf_yields) / stdev)
        return {"total_log_return": float(np.mean(t)),
                "average_growth": float(np.mean(a)),
                "excess_growth": float(np.mean(e)),
                "arithmetic_return": float(np.mean(g)),
                "stdev_arithmetic_return": stdev,
                "sharpe_ratio": sharpe}

    row_index = 0
    strategy_results = []
    for spec in specs:
        if not spec.randomized:
            i = row_index
            row_index += 1
            agg = aggregate(totals[i], avgs[i], excesses[i], ariths[i])
            per_window = None
            if keep_window_series:
                per_window = {
                    "total_log_return": tuple(float(v) for v in totals[i]),
                    "average_growth": tuple(float(v) for v in avgs[i]),
                    "excess_growth": tuple(float(v) for v in excesses[i]),
                    "arithmetic_return": tuple(float(v) for v in ariths[i]),
                }
            strategy_results.append(StrategyResult(
                kind=spec.kind, n_draws=1, per_window=per_window, **agg))
        else:
            sl = slice(row_index, row_index + n_random_draws)
            row_index += n_random_draws
            draws = [aggregate(totals[j], avgs[j], excesses[j], ariths[j])
                     for j in range(sl.start, sl.stop)]
            per_draw = {m: tuple(d[m] for d in draws) for m in METRIC_KEYS}
            percentiles = {}
            medians = {}
            for metric in METRIC_KEYS:
                p10, p50, p90 = np.percentile(per_draw[metric], [10.0, 50.0, 90.0])
                percentiles[metric] = (float(p10), float(p50), float(p90))
                medians[metric] = float(p50)
            strategy_results.append(StrategyResult(
                kind=spec.kind, n_draws=n_random_draws, seed=spec.seed,
                percentiles=percentiles,
                per_draw=per_draw if keep_window_series else None, **medians))

    by_kind = {s.kind: s for s in strategy_results}
    cw = by_kind["CW"]
    relative = {
        s.kind: {m: (0.0 if s.kind == "CW" else s.value(m) - cw.value(m))
                 for m in RELATIVE_METRICS}
        for s in strategy_results
    }

    invariants = {
        "decomposition_identity": _check(identity_error, 1e-10),
        "weights_normalized": _check(norm_error, 1e-12),
        "long_only": {"min_weight": min_weight,
                      "status": "pass" if min_weight >= 0.0 else "fail"},
        "cw_relative_zero": _check(
            max(abs(v) for v in relative["CW"].values()), 0.0),
    }

    metadata = {"delisted_members": int(delisted)}
    for key in ("missing_policy", "clean_floor", "clean_replacements"):
        if key in panel.meta:
            metadata[key] = panel.meta[key]

    return DecompositionReport(
        strategies=tuple(strategy_results),
        relative_to_cw=relative,
        window_months=tuple(label for label, _, _ in windows),
        window_start_dates=tuple(str(panel.dates[i0]) for _, i0, _ in windows),
        window_lengths=tuple(i1 - i0 for _, i0, i1 in windows),
        universe_size=universe_size,
        window_span_months=window_months,
        days_per_year=days_per_year,
        n_random_draws=n_random_draws,
        invariants=invariants,
        provenance=dict(provenance or {}),
        metadata=metadata,
    )


def _check(value: float, tolerance: float) -> dict:
    return {"max_abs_error": float(value), "tolerance": tolerance,
            "status": "pass" if value <= tolerance else "fail"}
