import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdtrans.data import (
    SyntheticSpec,
    compute_scale,
    featurize_covariates,
    gen_synthetic,
    load_csv,
    make_windows,
)
from pdtrans.errors import (
    GapInSeries,
    IndexOutOfRange,
    InvalidSpec,
    InvalidValue,
    MissingColumn,
    NonMonotoneTimestamps,
    WindowTooLong,
)


def write_csv(path, rows, header="timestamp,series_id,value"):
    path.write_text(header + "\n" + "\n".join(",".join(map(str, r)) for r in rows) + "\n")
    return path


def hourly(n, start="2021-03-01"):
    return [str(t) for t in pd.date_range(start, periods=n, freq="h")]


class TestLoadCsv:
    def test_single_series_roundtrip(self, tmp_path):
        ts = hourly(3)
        path = write_csv(tmp_path / "a.csv", [(ts[i], 7, v) for i, v in enumerate([1.0, 2.0, 3.0])])
        ds = load_csv(path)
        assert ds.series_ids == [7]
        np.testing.assert_array_equal(ds.get(7).values, [1.0, 2.0, 3.0])

    def test_interleaved_series_are_grouped_and_sorted(self, tmp_path):
        ts = hourly(3)
        rows = [(ts[2], 1, 30), (ts[0], 2, 100), (ts[0], 1, 10), (ts[1], 2, 200), (ts[1], 1, 20)]
        ds = load_csv(write_csv(tmp_path / "b.csv", rows))
        assert ds.series_ids == [1, 2]
        np.testing.assert_array_equal(ds.get(1).values, [10, 20, 30])
        np.testing.assert_array_equal(ds.get(2).values, [100, 200])

    def test_gap_names_series_and_timestamp(self, tmp_path):
        ts = hourly(4)
        rows = [(ts[0], 5, 1.0), (ts[1], 5, 1.0), (ts[3], 5, 1.0)]
        with pytest.raises(GapInSeries) as err:
            load_csv(write_csv(tmp_path / "g.csv", rows))
        assert err.value.series_id == 5
        assert err.value.timestamp == pd.Timestamp(ts[3])
        assert err.value.expected == pd.Timestamp(ts[2])

    def test_missing_column(self, tmp_path):
        path = write_csv(tmp_path / "m.csv", [("2021-01-01", 1)], header="timestamp,series_id")
        with pytest.raises(MissingColumn) as err:
            load_csv(path)
        assert err.value.column == "value"

    def test_schema_maps_column_names(self, tmp_path):
        ts = hourly(2)
        path = write_csv(tmp_path / "s.csv", [(ts[0], 1, 4.5), (ts[1], 1, 5.5)], header="time,item,y")
        ds = load_csv(path, schema={"timestamp": "time", "series_id": "item", "value": "y"})
        np.testing.assert_array_equal(ds.get(1).values, [4.5, 5.5])

    def test_duplicate_timestamp(self, tmp_path):
        ts = hourly(2)
        rows = [(ts[0], 1, 1.0), (ts[0], 1, 2.0), (ts[1], 1, 3.0)]
        with pytest.raises(NonMonotoneTimestamps):
            load_csv(write_csv(tmp_path / "d.csv", rows))

    @pytest.mark.parametrize("bad", ["abc", "nan", "inf", ""])
    def test_unparseable_value_is_rejected(self, tmp_path, bad):
        ts = hourly(2)
        with pytest.raises(InvalidValue) as err:
            load_csv(write_csv(tmp_path / "v.csv", [(ts[0], 1, 1.0), (ts[1], 1, bad)]))
        assert err.value.row == 1

    def test_daily_frequency(self, tmp_path):
        days = [str(d.date()) for d in pd.date_range("2021-01-30", periods=3, freq="D")]
        ds = load_csv(write_csv(tmp_path / "day.csv", [(d, 0, 1.0) for d in days]), frequency="daily")
        assert len(ds.get(0)) == 3

    def test_to_csv_roundtrip(self, tmp_path, small_synthetic):
        ds, _ = small_synthetic
        ds.to_csv(tmp_path / "rt.csv")
        back = load_csv(tmp_path / "rt.csv")
        np.testing.assert_array_equal(back.values_matrix(), ds.values_matrix())


class TestCovariates:
    def test_hour_bounds_and_age(self, small_synthetic):
        ds, _ = small_synthetic
        # synthetic data starts at midnight
        first = featurize_covariates(ds, 0, 0)
        assert first[0] == -0.5
        assert first[2] == 0.0
        assert featurize_covariates(ds, 0, 23)[0] == 0.5
        assert featurize_covariates(ds, 0, len(ds.get(0)) - 1)[2] == 1.0

    def test_out_of_range(self, small_synthetic):
        ds, _ = small_synthetic
        with pytest.raises(IndexOutOfRange):
            featurize_covariates(ds, 0, len(ds.get(0)))

    def test_ranges(self, small_synthetic):
        ds, _ = small_synthetic
        covs = np.stack([featurize_covariates(ds, 1, t) for t in range(len(ds.get(1)))])
        assert covs[:, :2].min() >= -0.5 and covs[:, :2].max() <= 0.5
        assert covs[:, 2].min() >= 0.0 and covs[:, 2].max() <= 1.0


class TestScale:
    @pytest.mark.parametrize(
        "history, expected", [([0, 0, 0], 1.0), ([2, 4], 4.0), ([-3, 3], 4.0)]
    )
    def test_examples(self, history, expected):
        assert compute_scale(history) == expected

    @settings(max_examples=50, deadline=None)
    # normal range only: dividing a subnormal drops bits before any rescaling
    @given(
        st.lists(
            st.one_of(st.just(0.0), st.floats(1e-300, 1e6), st.floats(-1e6, -1e-300)),
            min_size=1,
            max_size=50,
        )
    )
    def test_positive_and_roundtrip(self, values):
        y = np.asarray(values)
        nu = compute_scale(y)
        assert nu >= 1.0
        # within one unit in the last place
        assert (np.abs((y / nu) * nu - y) <= np.spacing(np.abs(y))).all()


class TestWindows:
    def test_counts(self):
        ds, _ = gen_synthetic(SyntheticSpec(n_series=2, length=168))
        (batch,) = make_windows(ds, 144, 24, mode="eval")
        assert len(batch) == 2
        ds, _ = gen_synthetic(SyntheticSpec(n_series=1, length=336))
        (batch,) = make_windows(ds, 168, 24, mode="eval")
        assert len(batch) == 7

    def test_too_long(self):
        ds, _ = gen_synthetic(SyntheticSpec(n_series=1, length=48))
        with pytest.raises(WindowTooLong):
            make_windows(ds, 40, 24, mode="eval")

    def test_eval_windows_tile_the_tail(self, small_synthetic):
        ds, _ = small_synthetic
        t0, tau, w = 8, 4, 5
        (batch,) = make_windows(ds, t0, tau, mode="eval", n_windows=w)
        series = ds.values_matrix()
        for i in range(len(ds)):
            rows = np.flatnonzero(batch.series_index == i)
            starts = batch.start[rows]
            np.testing.assert_array_equal(np.diff(starts), tau)
            assert starts[-1] + tau == series.shape[1]
            targets = batch.unscale(batch.target)[rows]
            np.testing.assert_allclose(targets.ravel(), series[i, -w * tau :], rtol=1e-15)

    def test_scaled_by_own_history(self, small_windows):
        b = small_windows
        np.testing.assert_allclose(b.scale, compute_scale(b.history * b.scale[:, None]))
        assert (b.scale > 0).all()
        assert b.covariates.shape == (len(b), 12, 3)

    def test_train_sampling_is_seeded(self, small_synthetic):
        ds, _ = small_synthetic
        a = make_windows(ds, 8, 4, mode="train", n_samples=10, rng=np.random.default_rng(3))[0]
        b = make_windows(ds, 8, 4, mode="train", n_samples=10, rng=np.random.default_rng(3))[0]
        np.testing.assert_array_equal(a.start, b.start)
        np.testing.assert_array_equal(a.history, b.history)


class TestSynthetic:
    def test_all_zero(self):
        ds, truth = gen_synthetic(SyntheticSpec(n_series=2, length=48, slope=0, amplitude=0, noise_std=0))
        assert not ds.values_matrix().any()
        assert not truth.trend.any() and not truth.seasonal.any()

    def test_seasonal_per_period(self):
        _, truth = gen_synthetic(SyntheticSpec(n_series=1, length=96, slope=0, noise_std=0))
        periods = truth.seasonal[0].reshape(-1, 24)
        np.testing.assert_allclose(periods.mean(axis=1), 0, atol=1e-12)
        np.testing.assert_allclose(periods.max(axis=1), 1.0, atol=1e-12)

    def test_deterministic_and_identity(self):
        spec = SyntheticSpec(n_series=3, length=100, seed=11)
        (a, ta), (b, _) = gen_synthetic(spec), gen_synthetic(spec)
        np.testing.assert_array_equal(a.values_matrix(), b.values_matrix())
        np.testing.assert_array_equal(a.values_matrix(), ta.trend + ta.seasonal + ta.noise)

    @pytest.mark.parametrize(
        "bad", [dict(period=1), dict(length=10, period=8), dict(noise_std=-1.0), dict(n_series=0)]
    )
    def test_invalid(self, bad):
        with pytest.raises(InvalidSpec):
            gen_synthetic(SyntheticSpec(**bad))

    def test_json_roundtrip(self):
        spec = SyntheticSpec(slope=0.5, seed=4)
        assert SyntheticSpec.from_json(spec.to_json()) == spec
        assert set(json.loads(spec.to_json())) == {
            "n_series", "length", "slope", "amplitude", "period", "noise_std", "seed"
        }
