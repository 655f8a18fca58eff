"""Tests for market series ingestion, synthesis, and observation features."""

import math

import numpy as np
import pytest

from hdb_bidder import data as mdata
from hdb_bidder.data import (MarketSeries, SeriesError, build_observation, dft_features,
                             load_series, normalize_price, split, synth_series,
                             time_encoding)

from oracles import dft_by_summation


def make_series(days, rt_price=None, da_price=None, node="TEST"):
    n = days * 288
    rt_ts = mdata.SYNTH_EPOCH + 300 * np.arange(n, dtype=np.int64)
    da_ts = mdata.SYNTH_EPOCH + 3600 * np.arange(days * 24, dtype=np.int64)
    if rt_price is None:
        rt_price = 75.0 + 50.0 * np.sin(2 * np.pi * np.arange(n) / 288)
    if da_price is None:
        da_price = np.asarray(rt_price).reshape(-1, 12).mean(axis=1)
    return MarketSeries(node, rt_ts, np.asarray(rt_price, dtype=float),
                        da_ts, np.asarray(da_price, dtype=float))


class TestLoadSeries:
    def test_round_trip_two_days(self, tmp_path):
        series = make_series(2)
        mdata.save_series(series, tmp_path)
        loaded = load_series(tmp_path)
        assert len(loaded.rt_ts) == 576
        assert len(loaded.da_ts) == 48
        assert loaded.node_id == "TEST"
        np.testing.assert_allclose(loaded.rt_price, series.rt_price, atol=1e-6)

    def test_gap_in_rt_reports_row(self, tmp_path):
        series = make_series(2)
        mdata.save_series(series, tmp_path)
        lines = (tmp_path / "rt.csv").read_text().splitlines()
        del lines[10]
        (tmp_path / "rt.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(SeriesError, match="non-uniform spacing at row 9"):
            load_series(tmp_path)

    def test_empty_file(self, tmp_path):
        (tmp_path / "rt.csv").write_text("timestamp,node,rt_lmp\n")
        (tmp_path / "da.csv").write_text("timestamp,node,da_lmp\n")
        with pytest.raises(SeriesError, match="no rows"):
            load_series(tmp_path)

    def test_malformed_price(self, tmp_path):
        series = make_series(2)
        mdata.save_series(series, tmp_path)
        lines = (tmp_path / "da.csv").read_text().splitlines()
        lines[3] = lines[3].rsplit(",", 1)[0] + ",not_a_number"
        (tmp_path / "da.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(SeriesError, match="row 3"):
            load_series(tmp_path)

    def test_node_mismatch(self, tmp_path):
        mdata.save_series(make_series(2), tmp_path)
        text = (tmp_path / "da.csv").read_text().replace("TEST", "OTHER")
        (tmp_path / "da.csv").write_text(text)
        with pytest.raises(SeriesError, match="node mismatch"):
            load_series(tmp_path)

    def test_rows_sorted_on_load(self, tmp_path):
        series = make_series(2)
        mdata.save_series(series, tmp_path)
        lines = (tmp_path / "rt.csv").read_text().splitlines()
        header, rows = lines[0], lines[1:]
        rows.reverse()
        (tmp_path / "rt.csv").write_text("\n".join([header] + rows) + "\n")
        loaded = load_series(tmp_path)
        assert np.all(np.diff(loaded.rt_ts) == 300)


class TestSynthSeries:
    def test_deterministic(self):
        a = synth_series(1, 10)
        b = synth_series(1, 10)
        assert np.array_equal(a.rt_price, b.rt_price)
        assert np.array_equal(a.da_price, b.da_price)

    def test_prices_within_market_range(self):
        s = synth_series(3, 20)
        assert s.rt_price.min() >= -50.0 and s.rt_price.max() <= 200.0
        assert s.da_price.min() >= -50.0 and s.da_price.max() <= 200.0

    def test_seed_sensitivity(self):
        assert not np.array_equal(synth_series(1, 5).rt_price,
                                  synth_series(2, 5).rt_price)

    def test_too_few_days(self):
        with pytest.raises(ValueError):
            synth_series(1, 4)

    def test_counts(self):
        s = synth_series(1, 7)
        assert len(s.rt_ts) == 7 * 288
        assert len(s.da_ts) == 7 * 24


class TestSplit:
    def test_seven_three(self):
        train, test = split(make_series(10), 0.7)
        assert train.n_days == 7 and test.n_days == 3

    def test_day_boundary_rounding(self):
        train, test = split(make_series(10), 0.999)
        assert train.n_days == 9 and test.n_days == 1

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1, 1.5])
    def test_fraction_out_of_range(self, frac):
        with pytest.raises(ValueError):
            split(make_series(10), frac)

    def test_partition_preserves_rows(self):
        series = make_series(9)
        train, test = split(series, 0.5)
        np.testing.assert_array_equal(
            np.concatenate([train.rt_price, test.rt_price]), series.rt_price)
        np.testing.assert_array_equal(
            np.concatenate([train.da_ts, test.da_ts]), series.da_ts)


class TestTimeEncoding:
    def test_midnight(self):
        np.testing.assert_allclose(time_encoding(mdata.SYNTH_EPOCH), [0.0, 1.0], atol=1e-12)

    def test_six_am(self):
        np.testing.assert_allclose(time_encoding(mdata.SYNTH_EPOCH + 6 * 3600),
                                   [1.0, 0.0], atol=1e-12)

    def test_noon(self):
        np.testing.assert_allclose(time_encoding(mdata.SYNTH_EPOCH + 12 * 3600),
                                   [0.0, -1.0], atol=1e-12)

    def test_unit_circle(self):
        for t in range(0, 86400, 3571):
            v = time_encoding(t)
            assert math.isclose(v[0] ** 2 + v[1] ** 2, 1.0, rel_tol=1e-12)


class TestDftFeatures:
    def test_positive_constant_is_dc_only(self):
        c = 0.375
        np.testing.assert_allclose(dft_features(np.full(72, c)),
                                   [c, 0, 0, 0, 0, 0], atol=1e-12)

    def test_negative_constant_has_pi_phase(self):
        out = dft_features(np.full(24, -0.5))
        np.testing.assert_allclose(out, [0.5, np.pi, 0, 0, 0, 0], atol=1e-12)

    def test_pure_cosine_concentrates_in_bin_one(self):
        length = 48
        window = np.cos(2 * np.pi * np.arange(length) / length)
        out = dft_features(window)
        np.testing.assert_allclose(out[2], 0.5, atol=1e-12)
        np.testing.assert_allclose([out[0], out[4]], [0.0, 0.0], atol=1e-12)
        # independent O(L^2) summation oracle
        np.testing.assert_allclose(out, dft_by_summation(window), atol=1e-9)

    def test_zero_window(self):
        np.testing.assert_array_equal(dft_features(np.zeros(16)), np.zeros(6))

    def test_empty_window(self):
        with pytest.raises(ValueError):
            dft_features(np.array([]))

    def test_matches_summation_oracle_on_random_windows(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            window = rng.uniform(-1, 1, size=rng.integers(3, 100))
            np.testing.assert_allclose(dft_features(window),
                                       dft_by_summation(window), atol=1e-9)


class TestBuildObservation:
    def test_constant_series_layout(self):
        # price 100 -> normalized 0.2; observation at a midnight 5 days in
        series = make_series(6, rt_price=np.full(6 * 288, 100.0))
        t = int(series.rt_ts[5 * 288])
        obs = build_observation(series, t, 0.5)
        vec = obs.vector()
        expected = np.array([0, 1, 0.2, 0, 0, 0, 0, 0, 0.2, 0, 0, 0, 0, 0, 0.5])
        np.testing.assert_allclose(vec, expected, atol=1e-12)

    def test_dimension_is_fifteen(self):
        series = synth_series(1, 6)
        vec = build_observation(series, int(series.rt_ts[5 * 288]), 0.0).vector()
        assert vec.shape == (15,)
        assert np.isfinite(vec).all()

    def test_insufficient_history(self):
        series = make_series(6)
        with pytest.raises(SeriesError):
            build_observation(series, int(series.rt_ts[10]), 0.5)

    def test_soc_out_of_range(self):
        series = make_series(6)
        with pytest.raises(ValueError):
            build_observation(series, int(series.rt_ts[5 * 288]), 1.2)

    def test_pure_function(self):
        series = synth_series(3, 6)
        t = int(series.rt_ts[4 * 288 + 37])
        a = build_observation(series, t, 0.25).vector()
        b = build_observation(series, t, 0.25).vector()
        assert np.array_equal(a, b)

    def test_normalized_prices_bounded(self):
        rng = np.random.default_rng(3)
        prices = rng.uniform(-500, 500, size=1000)
        x = normalize_price(prices)
        assert x.min() >= -1.0 and x.max() <= 1.0


def test_precomputed_features_match_observations():
    series = synth_series(2, 6)
    start = mdata.first_feature_index(series)
    feats = mdata.precompute_market_features(series, start, start + 30)
    for r, i in enumerate(range(start, start + 30)):
        obs = build_observation(series, int(series.rt_ts[i]), 0.0).vector()
        np.testing.assert_allclose(feats[r], obs[:14], atol=1e-12)
