import numpy as np
import pytest

from sptlab.marketdata import (IngestWarning, PanelError, ReturnPanel,
                               RiskFreeCurve, clean_panel, ingest_csv,
                               missing_return_policy, panel_equal,
                               panel_from_records, write_panel_csv)
from conftest import write_csv


class TestIngest:
    def test_three_rows_one_day(self, tmp_path):
        path = write_csv(tmp_path / "p.csv",
                         "date,id,return,cap\n"
                         "2001-03-05,AAA,0.01,30\n"
                         "2001-03-05,BBB,-0.02,10\n"
                         "2001-03-05,CCC,0.005,20\n")
        panel = ingest_csv(path)
        assert panel.n_days == 1
        assert panel.security_ids == ("AAA", "BBB", "CCC")
        assert panel.meta["rows_ingested"] == 3
        assert np.allclose(panel.returns[0], [0.01, -0.02, 0.005])
        assert np.allclose(panel.caps[0], [30.0, 10.0, 20.0])

    def test_duplicate_keeps_later_row_and_warns(self, tmp_path):
        path = write_csv(tmp_path / "p.csv",
                         "date,id,return,cap\n"
                         "2001-03-05,AAA,0.01,30\n"
                         "2001-03-05,AAA,0.07,31\n")
        with pytest.warns(IngestWarning, match="duplicate"):
            panel = ingest_csv(path)
        assert panel.returns[0, 0] == 0.07
        assert panel.caps[0, 0] == 31.0
        assert panel.meta["duplicate_rows"] == 1

    def test_return_below_minus_one_rejected_with_line(self, tmp_path):
        path = write_csv(tmp_path / "p.csv",
                         "date,id,return,cap\n"
                         "2001-03-05,AAA,0.01,30\n"
                         "2001-03-06,AAA,-1.5,30\n")
        with pytest.raises(PanelError, match="line 3"):
            ingest_csv(path)

    def test_return_of_exactly_minus_one_accepted(self, tmp_path):
        path = write_csv(tmp_path / "p.csv",
                         "date,id,return,cap\n2001-03-05,AAA,-1.0,30\n")
        panel = ingest_csv(path)
        assert panel.returns[0, 0] == -1.0

    def test_missing_column_is_an_error(self, tmp_path):
        path = write_csv(tmp_path / "p.csv",
                         "date,id,return\n2001-03-05,AAA,0.01\n")
        with pytest.raises(PanelError, match="missing required column 'cap'"):
            ingest_csv(path)

    def test_schema_mapping(self, tmp_path):
        path = write_csv(tmp_path / "p.csv",
                         "DT,PERMNO,RET,MCAP\n2001-03-05,AAA,0.01,30\n")
        panel = ingest_csv(path, schema={"date": "DT", "id": "PERMNO",
                                         "return": "RET", "cap": "MCAP"})
        assert panel.security_ids == ("AAA",)

    def test_unknown_schema_key_rejected(self, tmp_path):
        path = write_csv(tmp_path / "p.csv", "date,id,return,cap\n")
        with pytest.raises(PanelError, match="unknown schema key"):
            ingest_csv(path, schema={"prc": "PRC"})

    @pytest.mark.parametrize("row, message", [
        ("2001-03-35,AAA,0.01,30", "invalid date"),
        ("2001-03-05,AAA,abc,30", "invalid return"),
        ("2001-03-05,AAA,0.01,-5", "cap must be positive"),
        ("2001-03-05,AAA,0.01,zzz", "invalid cap"),
        ("2001-03-05,,0.01,30", "empty security id"),
        ("2001-03-05,AAA", "columns"),
    ])
    def test_malformed_rows_name_the_line(self, tmp_path, row, message):
        path = write_csv(tmp_path / "p.csv", f"date,id,return,cap\n{row}\n")
        with pytest.raises(PanelError) as err:
            ingest_csv(path)
        assert "line 2" in str(err.value)
        assert message in str(err.value)

    def test_empty_return_field_is_a_missing_return(self, tmp_path):
        path = write_csv(tmp_path / "p.csv",
                         "date,id,return,cap\n2001-03-05,AAA,,30\n")
        panel = ingest_csv(path)
        assert np.isnan(panel.returns[0, 0])
        assert panel.caps[0, 0] == 30.0

    def test_comment_lines_are_skipped(self, tmp_path):
        path = write_csv(tmp_path / "p.csv",
                         "# seed=42\ndate,id,return,cap\n2001-03-05,AAA,0.01,30\n")
        assert ingest_csv(path).n_days == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(PanelError, match="not found"):
            ingest_csv(tmp_path / "nope.csv")


class TestCleanPanel:
    def test_floors_minus_100_percent_to_minus_95(self):
        panel = panel_from_records([("2001-03-05", "AAA", -1.0, 30.0),
                                    ("2001-03-05", "BBB", 0.02, 10.0)])
        cleaned = clean_panel(panel)
        assert cleaned.returns[0, 0] == -0.95
        assert cleaned.returns[0, 1] == 0.02
        assert cleaned.meta["clean_replacements"] == 1

    def test_identity_when_nothing_to_replace(self, tiny_panel):
        cleaned = clean_panel(tiny_panel)
        assert panel_equal(cleaned, tiny_panel)
        assert cleaned.meta["clean_replacements"] == 0

    def test_replacement_count_matches_linear_scan(self):
        records = []
        returns = [0.1, -1.0, 0.0, 0.3, -1.0, -0.5, 0.2, 0.05, -0.9, 0.4]
        for i, r in enumerate(returns):
            records.append((f"2001-03-{i + 1:02d}", "AAA", r, 10.0))
        panel = panel_from_records(records)
        expected = sum(1 for r in returns if r == -1.0)  # independent count
        cleaned = clean_panel(panel)
        assert cleaned.meta["clean_replacements"] == expected == 2
        finite = cleaned.returns[np.isfinite(cleaned.returns)]
        # only exact -100% rows are touched, so nothing is left at -1 and
        # every log-return is finite
        assert np.all(finite > -1.0)
        assert np.all(np.isfinite(np.log1p(finite)))

    def test_idempotent(self):
        panel = panel_from_records([("2001-03-05", "AAA", -1.0, 30.0)])
        once = clean_panel(panel)
        twice = clean_panel(once)
        assert panel_equal(once, twice)
        assert twice.meta["clean_replacements"] == 0

    @pytest.mark.parametrize("floor", [-1.0, 0.5, -2.0])
    def test_floor_must_be_in_range(self, tiny_panel, floor):
        with pytest.raises(PanelError, match="floor"):
            clean_panel(tiny_panel, floor)


class TestMissingReturnPolicy:
    @pytest.fixture
    def gappy_panel(self):
        return panel_from_records([
            ("2001-03-05", "AAA", 0.01, 30.0),
            ("2001-03-05", "BBB", None, 10.0),
            ("2001-03-06", "AAA", 0.02, 30.3),
            ("2001-03-06", "BBB", -0.01, 10.0),
        ])

    def test_drop_removes_the_record(self, gappy_panel):
        panel = missing_return_policy(gappy_panel, "drop")
        assert np.isnan(panel.caps[0, 1]) and np.isnan(panel.returns[0, 1])
        assert panel.caps[1, 1] == 10.0  # other day untouched
        assert panel.meta["missing_policy"] == "drop"
        assert panel.meta["missing_returns"] == 1

    def test_zero_keeps_the_record_with_zero_return(self, gappy_panel):
        panel = missing_return_policy(gappy_panel, "zero")
        assert panel.returns[0, 1] == 0.0
        assert panel.caps[0, 1] == 10.0

    def test_carry_flag_records_the_imputations(self, gappy_panel):
        panel = missing_return_policy(gappy_panel, "carry-flag")
        assert panel.returns[0, 1] == 0.0
        assert panel.meta["imputed_records"] == [("2001-03-05", "BBB")]

    def test_unknown_policy(self, gappy_panel):
        with pytest.raises(PanelError, match="unknown missing-return policy"):
            missing_return_policy(gappy_panel, "interpolate")

    def test_policies_agree_on_rank_stats_when_gaps_are_rare(self):
        # one missing return in a 40-stock, 2-year panel: the per-rank
        # statistics from drop vs zero must agree closely
        from sptlab.rankstats import rank_log_return_means
        from sptlab.simulator import preset_paper_like, simulate_market
        base = simulate_market(preset_paper_like(n_stocks=40, n_years=2, seed=11))
        returns = base.returns.copy()
        returns[100, 25] = np.nan
        gappy = ReturnPanel(base.dates, base.security_ids, returns, base.caps)
        dropped = missing_return_policy(gappy, "drop")
        zeroed = missing_return_policy(gappy, "zero")
        s_drop = rank_log_return_means(dropped, 30)
        s_zero = rank_log_return_means(zeroed, 30)
        assert np.allclose(s_drop.growth, s_zero.growth, atol=1e-3)
        assert np.allclose(s_drop.variance, s_zero.variance, atol=1e-3)


class TestPanelModel:
    def test_round_trip_through_writer_is_identity(self, tmp_path):
        panel = panel_from_records([
            ("2001-03-05", "AAA", 0.012345678901234, 30.0),
            ("2001-03-05", "BBB", None, 10.5),
            ("2001-03-06", "AAA", -0.5, 29.0),
        ])
        path = tmp_path / "out.csv"
        write_panel_csv(panel, path, provenance={"seed": 1})
        again = ingest_csv(path)
        assert panel_equal(panel, again)

    def test_day_views_are_independent(self, tiny_panel):
        two_day = panel_from_records([
            ("2001-03-05", "AAA", 0.01, 30.0),
            ("2001-03-06", "AAA", 0.02, 31.0),
            ("2001-03-06", "BBB", 0.03, 12.0),
        ])
        only_first = panel_from_records([("2001-03-05", "AAA", 0.01, 30.0)])
        t = two_day.day_index("2001-03-05")
        j = two_day.column_indices(["AAA"])[0]
        assert two_day.returns[t, j] == only_first.returns[0, 0]
        assert two_day.caps[t, j] == only_first.caps[0, 0]

    def test_dates_must_increase(self):
        with pytest.raises(PanelError, match="strictly increasing"):
            ReturnPanel(np.array(["2001-03-05", "2001-03-05"], dtype="datetime64[D]"),
                        ("AAA",), np.zeros((2, 1)), np.ones((2, 1)))

    def test_negative_cap_rejected(self):
        with pytest.raises(PanelError, match="positive"):
            ReturnPanel(np.array(["2001-03-05"], dtype="datetime64[D]"),
                        ("AAA",), np.zeros((1, 1)), -np.ones((1, 1)))

    def test_return_below_floor_rejected(self):
        with pytest.raises(PanelError, match="below -100%"):
            ReturnPanel(np.array(["2001-03-05"], dtype="datetime64[D]"),
                        ("AAA",), np.full((1, 1), -1.01), np.ones((1, 1)))

    def test_matrices_are_read_only(self, tiny_panel):
        with pytest.raises(ValueError):
            tiny_panel.returns[0, 0] = 0.5

    def test_month_table(self):
        panel = panel_from_records([
            ("2001-01-30", "AAA", 0.0, 1.0),
            ("2001-01-31", "AAA", 0.0, 1.0),
            ("2001-02-01", "AAA", 0.0, 1.0),
            ("2001-03-02", "AAA", 0.0, 1.0),
        ])
        assert panel.month_labels == ("2001-01", "2001-02", "2001-03")
        assert panel.month_start_indices.tolist() == [0, 2, 3]

    def test_day_index_miss(self, tiny_panel):
        with pytest.raises(PanelError, match="not in panel"):
            tiny_panel.day_index("2001-03-06")


class TestRiskFreeCurve:
    def test_lookup_uses_most_recent_prior_observation(self):
        curve = RiskFreeCurve(
            np.array(["2001-01-01", "2001-02-01"], dtype="datetime64[D]"),
            np.array([0.05, 0.06]))
        assert curve.yield_at("2001-01-15") == 0.05
        assert curve.yield_at("2001-02-01") == 0.06
        assert curve.yield_at("2001-12-31") == 0.06

    def test_lookup_before_first_observation_fails(self):
        curve = RiskFreeCurve(np.array(["2001-01-01"], dtype="datetime64[D]"),
                              np.array([0.05]))
        with pytest.raises(PanelError, match="2000-12-31"):
            curve.yield_at("2000-12-31")

    def test_from_csv_with_and_without_header(self, tmp_path):
        with_header = write_csv(tmp_path / "a.csv",
                                "date,yield\n2001-01-01,0.05\n2001-02-01,0.06\n")
        bare = write_csv(tmp_path / "b.csv", "2001-01-01,0.05\n2001-02-01,0.06\n")
        for path in (with_header, bare):
            curve = RiskFreeCurve.from_csv(path)
            assert curve.yields.tolist() == [0.05, 0.06]

    def test_dates_must_increase(self):
        with pytest.raises(PanelError, match="increasing"):
            RiskFreeCurve(np.array(["2001-02-01", "2001-01-01"],
                                   dtype="datetime64[D]"),
                          np.array([0.05, 0.06]))
