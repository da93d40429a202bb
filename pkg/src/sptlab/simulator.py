"""Synthetic market generator with rank-dependent drift and volatility.

Each stock's daily log-return is ``growth[rank]/days_per_year +
vol[rank]*sqrt(1/days_per_year)*Z`` with Z standard normal, where the rank is
taken from the capitalizations entering the day (exact log-Euler stepping, no
discretization bias in log space). Caps equal price times a constant share
count, so cap dynamics mirror price dynamics. Noise comes from counter-based
per-stock Philox streams keyed by (seed, stock index), so output is
bit-identical no matter how many workers generate it.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .marketdata import ReturnPanel

CORRELATION_MODELS = ("independent", "one-factor")

_FACTOR_STREAM = 0xFFFFFFFFFFFFFFFF  # reserved substream index for the common factor
_MAX_SEED = 2**64


class ConfigError(ValueError):
    """Raised when a market configuration violates its invariants."""


def trading_calendar(n_days: int, days_per_year: int = 250,
                     start_year: int = 2000) -> np.ndarray:
    """Synthetic trading-day labels with exactly ``days_per_year`` days a year.

    Days are spread over 12 calendar months per year (the first months carry
    the remainder), so any 12 consecutive months hold exactly one year of
    trading days. The labels are valid ISO dates used only for ordering and
    month bucketing.
    """
    if n_days < 1:
        raise ConfigError("n_days must be >= 1")
    if not 12 <= days_per_year <= 366:
        raise ConfigError("days_per_year must be in [12, 366]")
    base, extra = divmod(days_per_year, 12)
    month_lengths = [base + 1 if m < extra else base for m in range(12)]
    days = []
    year = start_year
    while len(days) < n_days:
        for month, length in enumerate(month_lengths, start=1):
            for day in range(1, length + 1):
                days.append(f"{year:04d}-{month:02d}-{day:02d}")
        year += 1
    return np.array(days[:n_days], dtype="datetime64[D]")


@dataclass(frozen=True, eq=False)
class MarketConfig:
    """Parameters of a synthetic market, keyed by capitalization rank."""

    n_stocks: int
    n_days: int
    growth_by_rank: np.ndarray   # annualized log drift per rank (rank 1 first)
    vol_by_rank: np.ndarray      # annualized volatility per rank, >= 0
    initial_caps: np.ndarray     # positive, one per stock
    seed: int
    days_per_year: int = 250
    correlation_model: str = "independent"
    factor_loading: float = 0.0  # pairwise shock correlation under one-factor
    start_year: int = 2000

    def __post_init__(self):
        growth = np.ascontiguousarray(self.growth_by_rank, dtype=np.float64)
        vol = np.ascontiguousarray(self.vol_by_rank, dtype=np.float64)
        caps = np.ascontiguousarray(self.initial_caps, dtype=np.float64)
        if self.n_stocks < 2:
            raise ConfigError("n_stocks must be >= 2")
        if self.n_days < 1:
            raise ConfigError("n_days must be >= 1")
        if self.days_per_year < 1:
            raise ConfigError("days_per_year must be >= 1")
        for name, arr in (("growth_by_rank", growth), ("vol_by_rank", vol),
                          ("initial_caps", caps)):
            if arr.shape != (self.n_stocks,):
                raise ConfigError(f"{name} must have length n_stocks={self.n_stocks}")
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} must be finite")
        # vol 0 is allowed: it degenerates to deterministic drift, which is
        # useful for exactness tests
        if np.any(vol < 0.0):
            raise ConfigError("vol_by_rank entries must be >= 0")
        if np.any(caps <= 0.0):
            raise ConfigError("initial_caps must be positive")
        if self.correlation_model not in CORRELATION_MODELS:
            raise ConfigError(f"correlation_model must be one of {CORRELATION_MODELS}")
        if self.correlation_model == "one-factor":
            if not 0.0 <= self.factor_loading < 1.0:
                raise ConfigError("factor_loading must be in [0, 1)")
        elif self.factor_loading != 0.0:
            raise ConfigError("factor_loading requires the one-factor model")
        if not 0 <= int(self.seed) < _MAX_SEED:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        for arr in (growth, vol, caps):
            arr.setflags(write=False)
        object.__setattr__(self, "growth_by_rank", growth)
        object.__setattr__(self, "vol_by_rank", vol)
        object.__setattr__(self, "initial_caps", caps)
        object.__setattr__(self, "seed", int(self.seed))

    def to_dict(self) -> dict:
        return {
            "n_stocks": self.n_stocks,
            "n_days": self.n_days,
            "growth_by_rank": [float(x) for x in self.growth_by_rank],
            "vol_by_rank": [float(x) for x in self.vol_by_rank],
            "initial_caps": [float(x) for x in self.initial_caps],
            "seed": self.seed,
            "days_per_year": self.days_per_year,
            "correlation_model": self.correlation_model,
            "factor_loading": self.factor_loading,
            "start_year": self.start_year,
        }

    def with_seed(self, seed: int) -> "MarketConfig":
        return replace(self, seed=seed)


def _ramp(spec, n: int, name: str) -> np.ndarray:
    """Materialize a per-rank parameter from a number, list, or low/high ramp."""
    if isinstance(spec, dict):
        unknown = set(spec) - {"low", "high"}
        if unknown:
            raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in {name}")
        try:
            low, high = float(spec["low"]), float(spec["high"])
        except KeyError as exc:
            raise ConfigError(f"{name} ramp needs 'low' and 'high'") from exc
        return log_rank_ramp(n, low, high)
    if isinstance(spec, (int, float)):
        return np.full(n, float(spec))
    arr = np.asarray(spec, dtype=np.float64)
    if arr.shape != (n,):
        raise ConfigError(f"{name} must be a number, low/high ramp, or length-{n} list")
    return arr


def log_rank_ramp(n: int, low: float, high: float) -> np.ndarray:
    """Values linear in log-rank: ``low`` at rank 1 up to ``high`` at rank n."""
    ranks = np.arange(1, n + 1, dtype=np.float64)
    return low + (high - low) * np.log(ranks) / math.log(n)


def zipf_caps(n: int, exponent: float = 1.0, scale: float = 100.0) -> np.ndarray:
    """Power-law initial capitalizations, largest first."""
    return scale / np.arange(1, n + 1, dtype=np.float64) ** exponent


_CONFIG_KEYS = {"n_stocks", "n_days", "n_years", "growth_by_rank", "vol_by_rank",
                "initial_caps", "seed", "days_per_year", "correlation_model",
                "factor_loading", "start_year"}


def market_config_from_dict(raw: dict) -> MarketConfig:
    """Build a MarketConfig from a JSON-shaped mapping.

    ``growth_by_rank`` and ``vol_by_rank`` accept a number (flat), an explicit
    per-rank list, or ``{"low": a, "high": b}`` for a ramp linear in log-rank.
    ``initial_caps`` accepts a list or defaults to a Zipf curve. ``n_years``
    may replace ``n_days``.
    """
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    for key in ("n_stocks", "seed"):
        if key not in raw:
            raise ConfigError(f"config is missing required key {key!r}")
    n = int(raw["n_stocks"])
    if n < 2:
        raise ConfigError("n_stocks must be >= 2")
    days_per_year = int(raw.get("days_per_year", 250))
    if "n_days" in raw and "n_years" in raw:
        raise ConfigError("give either n_days or n_years, not both")
    if "n_days" in raw:
        n_days = int(raw["n_days"])
    elif "n_years" in raw:
        n_days = int(round(float(raw["n_years"]) * days_per_year))
    else:
        raise ConfigError("config is missing required key 'n_days' (or 'n_years')")
    if "initial_caps" in raw:
        caps = np.asarray(raw["initial_caps"], dtype=np.float64)
    else:
        caps = zipf_caps(n)
    return MarketConfig(
        n_stocks=n,
        n_days=n_days,
        growth_by_rank=_ramp(raw.get("growth_by_rank", 0.05), n, "growth_by_rank"),
        vol_by_rank=_ramp(raw.get("vol_by_rank", {"low": 0.10, "high": 0.50}), n,
                          "vol_by_rank"),
        initial_caps=caps,
        seed=int(raw["seed"]),
        days_per_year=days_per_year,
        correlation_model=str(raw.get("correlation_model", "independent")),
        factor_loading=float(raw.get("factor_loading", 0.0)),
        start_year=int(raw.get("start_year", 2000)),
    )


def preset_paper_like(n_stocks: int = 1000, n_years: float = 10, seed: int = 2024,
                      *, days_per_year: int = 250, growth: float = 0.05,
                      vol_low: float = 0.10, vol_high: float = 0.50,
                      cap_decay: float = 1.0) -> MarketConfig:
    """A market shaped like the large-cap US cross-section.

    Growth rates are identical across ranks; volatility rises with rank
    (smaller stocks are more volatile), linear in log-rank; initial caps
    follow a Zipf curve. Noise is independent across stocks.
    """
    return MarketConfig(
        n_stocks=n_stocks,
        n_days=int(round(n_years * days_per_year)),
        growth_by_rank=np.full(n_stocks, float(growth)),
        vol_by_rank=log_rank_ramp(n_stocks, vol_low, vol_high),
        initial_caps=zipf_caps(n_stocks, cap_decay),
        seed=seed,
        days_per_year=days_per_year,
    )


def _stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based substream for one stock (or the shared factor)."""
    return np.random.Generator(np.random.Philox(key=(seed << 64) | index))


def _fill_noise(out: np.ndarray, seed: int, lo: int, hi: int) -> None:
    n_days = out.shape[0]
    for i in range(lo, hi):
        out[:, i] = _stream(seed, i).standard_normal(n_days)


def simulate_market(config: MarketConfig, n_workers: int = 1) -> ReturnPanel:
    """Generate a daily ReturnPanel from the configured rank dynamics.

    Deterministic given ``config.seed``; ``n_workers`` only parallelizes
    noise generation across stocks and never changes the output.
    """
    n, n_days = config.n_stocks, config.n_days
    noise = np.empty((n_days, n))
    if n_workers <= 1:
        _fill_noise(noise, config.seed, 0, n)
    else:
        step = -(-n // n_workers)
        bounds = [(lo, min(lo + step, n)) for lo in range(0, n, step)]
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(lambda b: _fill_noise(noise, config.seed, *b), bounds))
    if config.correlation_model == "one-factor" and config.factor_loading > 0.0:
        rho = config.factor_loading
        factor = _stream(config.seed, _FACTOR_STREAM).standard_normal(n_days)
        noise = math.sqrt(rho) * factor[:, None] + math.sqrt(1.0 - rho) * noise

    # dividing by days_per_year (not multiplying by its reciprocal) keeps the
    # zero-vol case bit-exact against growth/days_per_year
    drift = config.growth_by_rank / float(config.days_per_year)
    shock = config.vol_by_rank * math.sqrt(1.0 / config.days_per_year)

    caps_out = np.empty((n_days, n))
    returns = np.empty((n_days, n))
    caps = config.initial_caps.copy()
    ranks = np.empty(n, dtype=np.intp)
    order_ranks = np.arange(n)
    for t in range(n_days):
        caps_out[t] = caps
        # stable sort on descending cap: ties break by column, i.e. id ascending
        order = np.argsort(-caps, kind="stable")
        ranks[order] = order_ranks
        log_ret = drift[ranks] + shock[ranks] * noise[t]
        returns[t] = np.expm1(log_ret)
        caps = caps * np.exp(log_ret)

    width = max(4, len(str(n - 1)))
    ids = tuple(f"S{i:0{width}d}" for i in range(n))
    dates = trading_calendar(n_days, config.days_per_year, config.start_year)
    meta = {"simulated": True, "seed": config.seed, "config": config.to_dict()}
    return ReturnPanel(dates, ids, returns, caps_out, meta)
