import numpy as np
import pytest

from sptlab.marketdata import panel_equal
from sptlab.simulator import (ConfigError, MarketConfig, log_rank_ramp,
                              market_config_from_dict, preset_paper_like,
                              simulate_market, trading_calendar, zipf_caps)


def small_config(**overrides):
    base = dict(n_stocks=5, n_days=100, growth_by_rank=np.full(5, 0.05),
                vol_by_rank=np.full(5, 0.2), initial_caps=zipf_caps(5), seed=42)
    base.update(overrides)
    return MarketConfig(**base)


class TestConfig:
    def test_preset_growth_is_flat(self):
        cfg = preset_paper_like(n_stocks=50, n_years=1)
        assert np.all(cfg.growth_by_rank == cfg.growth_by_rank[0])

    def test_preset_vol_is_nondecreasing_in_rank(self):
        cfg = preset_paper_like(n_stocks=50, n_years=1)
        assert np.all(np.diff(cfg.vol_by_rank) >= 0)
        assert cfg.vol_by_rank[0] < cfg.vol_by_rank[-1]

    def test_preset_passes_invariants(self):
        cfg = preset_paper_like(n_stocks=17, n_years=0.5, seed=9)
        assert cfg.n_days == 125
        assert np.all(cfg.initial_caps > 0)

    @pytest.mark.parametrize("overrides, message", [
        (dict(n_stocks=1, growth_by_rank=[0.05], vol_by_rank=[0.2],
              initial_caps=[1.0]), "n_stocks"),
        (dict(vol_by_rank=np.array([0.2, 0.2, 0.2, 0.2, -0.1])), ">= 0"),
        (dict(initial_caps=np.zeros(5)), "positive"),
        (dict(growth_by_rank=np.full(4, 0.05)), "length"),
        (dict(correlation_model="two-factor"), "correlation_model"),
        (dict(correlation_model="one-factor", factor_loading=1.0), "factor_loading"),
        (dict(factor_loading=0.3), "one-factor"),
        (dict(seed=-1), "seed"),
    ])
    def test_invariant_violations(self, overrides, message):
        with pytest.raises(ConfigError, match=message):
            small_config(**overrides)

    def test_from_dict_ramps_and_years(self):
        cfg = market_config_from_dict({
            "n_stocks": 10, "n_years": 2, "seed": 3,
            "growth_by_rank": 0.04,
            "vol_by_rank": {"low": 0.1, "high": 0.3},
        })
        assert cfg.n_days == 500
        assert np.all(cfg.growth_by_rank == 0.04)
        assert cfg.vol_by_rank[0] == pytest.approx(0.1)
        assert cfg.vol_by_rank[-1] == pytest.approx(0.3)

    def test_from_dict_rejects_unknown_key(self):
        with pytest.raises(ConfigError, match="'volatility'"):
            market_config_from_dict({"n_stocks": 5, "n_days": 10, "seed": 1,
                                     "volatility": 0.2})

    def test_from_dict_requires_length(self):
        with pytest.raises(ConfigError, match="n_days"):
            market_config_from_dict({"n_stocks": 5, "seed": 1})

    def test_to_dict_round_trips(self):
        cfg = preset_paper_like(n_stocks=6, n_years=1, seed=5)
        again = market_config_from_dict(cfg.to_dict())
        assert again.to_dict() == cfg.to_dict()


class TestCalendar:
    def test_exactly_250_days_per_year(self):
        days = trading_calendar(500)
        months = days.astype("datetime64[M]")
        assert len(np.unique(months)) == 24
        years = days.astype("datetime64[Y]")
        assert np.sum(years == years[0]) == 250

    def test_strictly_increasing(self):
        days = trading_calendar(1000)
        assert np.all(days[1:] > days[:-1])

    def test_every_window_of_12_months_has_250_days(self):
        days = trading_calendar(1000)
        months = days.astype("datetime64[M]")
        labels, starts = np.unique(months, return_index=True)
        for m in range(len(labels) - 12):
            assert starts[m + 12] - starts[m] == 250


class TestSimulate:
    def test_zero_vol_gives_exact_drift(self):
        gammas = np.array([0.05, 0.03, 0.01, -0.02, 0.0])
        cfg = small_config(growth_by_rank=gammas, vol_by_rank=np.zeros(5))
        panel = simulate_market(cfg)
        # caps never cross (flat noise, distinct starts), so stock i stays at
        # rank i+1 and every daily return is exactly expm1(gamma_i / 250)
        expected = np.expm1(gammas / 250.0)
        assert np.array_equal(panel.returns, np.tile(expected, (100, 1)))

    def test_same_seed_is_bit_identical(self):
        cfg = preset_paper_like(n_stocks=20, n_years=1, seed=77)
        a = simulate_market(cfg)
        b = simulate_market(cfg)
        assert panel_equal(a, b)
        assert np.array_equal(a.returns, b.returns)

    def test_worker_count_does_not_change_output(self):
        cfg = preset_paper_like(n_stocks=23, n_years=1, seed=13)
        one = simulate_market(cfg, n_workers=1)
        four = simulate_market(cfg, n_workers=4)
        assert panel_equal(one, four)

    def test_different_seeds_differ(self):
        a = simulate_market(preset_paper_like(n_stocks=20, n_years=1, seed=1))
        b = simulate_market(preset_paper_like(n_stocks=20, n_years=1, seed=2))
        assert not np.array_equal(a.returns, b.returns)

    def test_caps_are_start_of_day(self):
        cfg = small_config()
        panel = simulate_market(cfg)
        # day t+1 caps must equal day t caps grown by day t returns
        grown = panel.caps[:-1] * (1.0 + panel.returns[:-1])
        assert np.allclose(grown, panel.caps[1:], rtol=1e-12)
        assert np.allclose(panel.caps[0], cfg.initial_caps)

    def test_per_rank_sample_volatility_matches_config(self):
        # flat growth, vol decreasing in cap (increasing in rank)
        from sptlab.rankstats import rank_log_return_means
        n, years = 100, 10
        cfg = preset_paper_like(n_stocks=n, n_years=years, seed=4,
                                vol_low=0.15, vol_high=0.45)
        panel = simulate_market(cfg)
        stats = rank_log_return_means(panel, n)
        sample_vol = np.sqrt(stats.variance)
        band = 3.0 / np.sqrt(cfg.n_days)
        assert np.all(np.abs(sample_vol / cfg.vol_by_rank - 1.0) < band)
        # and the curve slopes up in rank
        fit = np.polyfit(np.arange(n), stats.variance, 1)
        assert fit[0] > 0

    def test_per_rank_growth_matches_config(self):
        n, years = 50, 8
        cfg = preset_paper_like(n_stocks=n, n_years=years, seed=21)
        panel = simulate_market(cfg)
        from sptlab.rankstats import rank_log_return_means
        stats = rank_log_return_means(panel, n)
        band = 3.0 * cfg.vol_by_rank / np.sqrt(years)
        assert np.all(np.abs(stats.growth - 0.05) < band)

    def test_long_run_log_price_growth_approaches_gamma(self):
        # time-average of log X(T)/T is an unbiased long-term growth estimate
        cfg = small_config(n_days=250 * 40, vol_by_rank=np.full(5, 0.2))
        panel = simulate_market(cfg)
        total_log = np.log(panel.caps[-1] * (1 + panel.returns[-1])
                           / panel.caps[0])
        annualized = total_log / 40.0
        assert np.all(np.abs(annualized - 0.05) < 3.0 * 0.2 / np.sqrt(40))

    def test_one_factor_correlates_shocks(self):
        rho = 0.5
        cfg = MarketConfig(n_stocks=2, n_days=4000,
                           growth_by_rank=np.zeros(2),
                           vol_by_rank=np.full(2, 0.2),
                           initial_caps=np.array([2.0, 1.0]), seed=6,
                           correlation_model="one-factor", factor_loading=rho)
        panel = simulate_market(cfg)
        lr = np.log1p(panel.returns)
        corr = np.corrcoef(lr[:, 0], lr[:, 1])[0, 1]
        assert abs(corr - rho) < 3.0 / np.sqrt(4000)

    def test_meta_carries_config(self):
        cfg = small_config()
        panel = simulate_market(cfg)
        assert panel.meta["seed"] == 42
        assert panel.meta["config"]["n_stocks"] == 5


class TestRamps:
    def test_log_rank_ramp_endpoints(self):
        ramp = log_rank_ramp(100, 0.1, 0.5)
        assert ramp[0] == pytest.approx(0.1)
        assert ramp[-1] == pytest.approx(0.5)
        assert np.all(np.diff(ramp) > 0)

    def test_zipf_caps_decrease(self):
        caps = zipf_caps(10)
        assert np.all(np.diff(caps) < 0)
        assert caps[0] / caps[4] == pytest.approx(5.0)
