"""Daily capitalization ranking and per-rank return statistics.

Rank k on day t is held by the stock with the k-th largest capitalization
entering the day, so a day's ranking never looks at that day's returns. The
per-rank statistics are the time-average and sample variance of the daily
log-returns collected at each rank, annualized by ``days_per_year``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .marketdata import ReturnPanel


class RankingError(ValueError):
    """Raised when a panel cannot be ranked to the requested depth."""


@dataclass(frozen=True, eq=False)
class RankedDay:
    """Top-n securities of one day, largest capitalization first."""

    date: np.datetime64
    security_ids: tuple[str, ...]   # index 0 is rank 1
    market_caps: np.ndarray
    log_returns: np.ndarray

    @property
    def n(self) -> int:
        return len(self.security_ids)


@dataclass(frozen=True, eq=False)
class RankStatistics:
    """Annualized mean log-return and variance for each rank."""

    growth: np.ndarray     # (n_ranks,) mean daily log-return x days_per_year
    variance: np.ndarray   # (n_ranks,) sample variance (ddof=1) x days_per_year
    n_days: int
    days_per_year: int

    @property
    def n_ranks(self) -> int:
        return self.growth.size

    @property
    def ranks(self) -> np.ndarray:
        return np.arange(1, self.n_ranks + 1)


@dataclass(frozen=True)
class SlopeFit:
    """Ordinary least squares line of a per-rank statistic against rank."""

    slope: float
    intercept: float
    stderr_slope: float
    two_se_interval: tuple[float, float]
    target: str

    def contains_zero(self) -> bool:
        lo, hi = self.two_se_interval
        return lo <= 0.0 <= hi


def _rank_keys(panel: ReturnPanel) -> np.ndarray:
    """Cap matrix with NaN wherever a day's record cannot be ranked."""
    keys = panel.caps.copy()
    keys[~np.isfinite(panel.returns)] = np.nan
    return keys


def _check_depth(panel: ReturnPanel, keys: np.ndarray, n: int) -> None:
    counts = np.isfinite(keys).sum(axis=1)
    short = np.flatnonzero(counts < n)
    if short.size:
        t = int(short[0])
        raise RankingError(
            f"{panel.dates[t]}: only {int(counts[t])} rankable securities, "
            f"need {n} (short by {n - int(counts[t])})")


def rank_day(panel: ReturnPanel, date, n: int) -> RankedDay:
    """Select and order the day's top-n securities by capitalization.

    Securities without a valid cap and return that day are skipped. Equal
    caps are broken by security id ascending, so the ordering is
    deterministic under relabeling.
    """
    if n < 1:
        raise RankingError("rank depth must be >= 1")
    t = panel.day_index(date)
    keys = _rank_keys(panel)[t]
    count = int(np.isfinite(keys).sum())
    if count < n:
        raise RankingError(f"{panel.dates[t]}: only {count} rankable securities, "
                           f"need {n} (short by {n - count})")
    order = np.argsort(-keys, kind="stable")[:n]
    return RankedDay(
        date=panel.dates[t],
        security_ids=tuple(panel.security_ids[j] for j in order),
        market_caps=panel.caps[t, order].copy(),
        log_returns=np.log1p(panel.returns[t, order]),
    )


def rank_log_return_means(panel: ReturnPanel, n: int,
                          days_per_year: int = 250) -> RankStatistics:
    """Annualized mean and sample variance of log-returns at each rank.

    Every panel day must be rankable to depth ``n``. At least two days are
    required for the variance to exist. Returns of exactly -100% must have
    been floored first (`clean_panel`), otherwise log-returns are -inf.
    """
    if panel.n_days < 2:
        raise RankingError("need at least 2 days to estimate a variance")
    if n < 1:
        raise RankingError("rank depth must be >= 1")
    keys = _rank_keys(panel)
    _check_depth(panel, keys, n)
    order = np.argsort(-keys, axis=1, kind="stable")[:, :n]
    ranked = np.take_along_axis(panel.returns, order, axis=1)
    log_returns = np.log1p(ranked)
    if not np.all(np.isfinite(log_returns)):
        raise RankingError("panel contains -100% returns; apply clean_panel first")
    growth = log_returns.mean(axis=0) * days_per_year
    variance = log_returns.var(axis=0, ddof=1) * days_per_year
    return RankStatistics(growth=growth, variance=variance,
                          n_days=panel.n_days, days_per_year=days_per_year)


def fit_slope(stats: RankStatistics, target: str = "growth") -> SlopeFit:
    """Least-squares line of the chosen per-rank statistic against rank.

    The slope standard error uses the classical homoskedastic OLS formula;
    the reported interval is slope +/- 2 standard errors.
    """
    if target not in ("growth", "variance"):
        raise ValueError(f"target must be 'growth' or 'variance', got {target!r}")
    y = np.asarray(stats.growth if target == "growth" else stats.variance,
                   dtype=np.float64)
    n = y.size
    if n < 3:
        raise ValueError("need at least 3 ranks to fit a slope")
    x = np.arange(1, n + 1, dtype=np.float64)
    x_bar, y_bar = x.mean(), y.mean()
    dx = x - x_bar
    sxx = float(dx @ dx)
    if sxx <= 0.0:
        raise ValueError("degenerate design: all ranks identical")
    slope = float(dx @ (y - y_bar)) / sxx
    intercept = y_bar - slope * x_bar
    resid = y - (intercept + slope * x)
    rss = max(float(resid @ resid), 0.0)
    stderr = math.sqrt(rss / (n - 2) / sxx)
    return SlopeFit(slope=slope, intercept=float(intercept), stderr_slope=stderr,
                    two_se_interval=(slope - 2.0 * stderr, slope + 2.0 * stderr),
                    target=target)


def lowess(x, y, fraction: float = 0.05) -> np.ndarray:
    """Locally weighted linear regression (LOWESS), no robustness iterations.

    Each point is smoothed by a degree-1 weighted fit over its
    ceil(fraction*n) nearest neighbors (never fewer than 2). Tricube weights
    are scaled by the distance to the nearest *excluded* neighbor, so the
    whole window carries positive weight and fraction=1 reduces to the
    global least-squares line. Output is aligned with the input order.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError("x and y must be 1-d arrays of equal length")
    n = x.size
    if n < 2:
        raise ValueError("need at least 2 points")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    r = min(n, max(2, math.ceil(fraction * n)))

    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    smoothed = np.empty(n)
    lo = 0
    for i in range(n):
        xi = xs[i]
        while lo + r < n and xs[lo + r] - xi < xi - xs[lo]:
            lo += 1
        hi = lo + r
        xw_win, yw_win = xs[lo:hi], ys[lo:hi]
        if r == n:
            w = np.ones(r)
        else:
            d = np.abs(xw_win - xi)
            left = xi - xs[lo - 1] if lo > 0 else np.inf
            right = xs[hi] - xi if hi < n else np.inf
            h = min(left, right)
            if h <= 0.0:  # duplicate x beyond the window edge
                w = (d == 0.0).astype(np.float64)
            else:
                w = (1.0 - np.clip(d / h, 0.0, 1.0) ** 3) ** 3
        sw = w.sum()
        x_bar = (w @ xw_win) / sw
        y_bar = (w @ yw_win) / sw
        dx = xw_win - x_bar
        sxx = w @ (dx * dx)
        if sxx <= 0.0:
            smoothed[i] = y_bar
        else:
            slope = (w @ (dx * yw_win)) / sxx
            smoothed[i] = y_bar + slope * (xi - x_bar)

    out = np.empty(n)
    out[order] = smoothed
    return out
