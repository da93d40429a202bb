"""Rank-based market statistics and log-return decomposition backtests.

The pipeline: build a daily returns/caps panel (from a CSV export or the
synthetic simulator), rank it by capitalization each day, estimate per-rank
growth and variance curves, then backtest naive weighting strategies over
overlapping monthly-start windows and split each portfolio's log-return into
its average-growth and excess-growth (diversification) components.
"""

__version__ = "0.1.0"

from .marketdata import (DEFAULT_CLEAN_FLOOR, PanelError, ReturnPanel,
                         RiskFreeCurve, clean_panel, ingest_csv,
                         missing_return_policy, panel_from_records,
                         write_panel_csv)
from .rankstats import (RankedDay, RankingError, RankStatistics, SlopeFit,
                        fit_slope, lowess, rank_day, rank_log_return_means)
from .report import (DecompositionReport, ReportTable, StrategyResult,
                     read_report_csv, write_backtest_json, write_report_csv)
from .simulator import (ConfigError, MarketConfig, market_config_from_dict,
                        preset_paper_like, simulate_market)
from .sptcore import (ReturnAverages, StrategySpec, WeightVector, WindowResult,
                      default_strategies, excess_growth_direct, make_weights,
                      return_averages, run_experiment, run_window,
                      sample_log_return_covariance, volatility_drag)

__all__ = [
    "DEFAULT_CLEAN_FLOOR", "PanelError", "ReturnPanel", "RiskFreeCurve",
    "clean_panel", "ingest_csv", "missing_return_policy", "panel_from_records",
    "write_panel_csv",
    "RankedDay", "RankingError", "RankStatistics", "SlopeFit", "fit_slope",
    "lowess", "rank_day", "rank_log_return_means",
    "DecompositionReport", "ReportTable", "StrategyResult", "read_report_csv",
    "write_backtest_json", "write_report_csv",
    "ConfigError", "MarketConfig", "market_config_from_dict",
    "preset_paper_like", "simulate_market",
    "ReturnAverages", "StrategySpec", "WeightVector", "WindowResult",
    "default_strategies", "excess_growth_direct", "make_weights",
    "return_averages", "run_experiment", "run_window",
    "sample_log_return_covariance", "volatility_drag",
    "__version__",
]
