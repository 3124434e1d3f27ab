import numpy as np
import pandas as pd
import pytest

from windprob.domain import EnsembleForecastRecord, PowerObservation, ProviderForecast
from windprob.features import (CircularSummary, DegenerateResultantError,
                               FeatureMatrix, MisalignedTargetError,
                               build_features, circular_mean_std,
                               ensemble_mean_inputs, feature_names)

from conftest import make_records


def test_circular_mean_wraps_across_north():
    s = circular_mean_std([350.0, 10.0])
    assert s.mean_direction == pytest.approx(0.0, abs=1e-9)
    assert s.circular_std > 0.0


def test_circular_mean_of_identical_angles():
    s = circular_mean_std([123.0, 123.0, 123.0])
    assert s.mean_direction == pytest.approx(123.0)
    assert s.circular_std == pytest.approx(0.0, abs=1e-7)
    assert s.resultant_length == pytest.approx(1.0)


def test_circular_mean_degenerate_opposites():
    with pytest.raises(DegenerateResultantError):
        circular_mean_std([0.0, 180.0])


def test_circular_std_formula_oracle(rng):
    angles = rng.uniform(0, 360, size=200)
    s = circular_mean_std(angles)
    rad = np.deg2rad(angles)
    r = np.hypot(np.mean(np.sin(rad)), np.mean(np.cos(rad)))
    assert s.resultant_length == pytest.approx(r)
    assert s.circular_std == pytest.approx(np.sqrt(-2 * np.log(r)))


def test_feature_matrix_rejects_ragged_and_non_finite():
    times = pd.date_range("2022-01-01", periods=3, freq="h")
    with pytest.raises(ValueError):
        FeatureMatrix(times=times, columns={"a": np.zeros(2)})
    with pytest.raises(ValueError):
        FeatureMatrix(times=times, columns={"a": np.array([0.0, np.nan, 1.0])})


def test_build_features_drops_lag_edge_rows():
    records = make_records(10)
    fm = build_features(records, lags=(-1, 0, 1))
    assert fm.n_rows == 8
    assert fm.times[0] == records[1].time
    assert fm.times[-1] == records[-2].time


def test_build_features_lag_columns_are_shifted_copies():
    records = make_records(12)
    fm = build_features(records, lags=(-1, 0, 1))
    base = build_features(records, lags=(0,))
    # row i of the lagged matrix corresponds to records[i+1]
    for name in ("a_speed", "speed_mean", "dir_circ_std"):
        lagged = fm.columns[f"{name}_lag-1"]
        current = base.columns[f"{name}_lag+0"]
        np.testing.assert_allclose(lagged, current[:-2])
        lead = fm.columns[f"{name}_lag+1"]
        np.testing.assert_allclose(lead, current[2:])


def test_build_features_gap_drops_neighbourless_rows():
    records = make_records(10)
    records = records[:4] + records[5:]  # hole at index 4
    fm = build_features(records, lags=(-1, 0, 1))
    missing_time = pd.Timestamp("2022-01-01T04:00:00")
    for dt in (-1, 0, 1):
        assert missing_time + pd.Timedelta(hours=dt) not in set(fm.times)


def test_build_features_requires_sorted_times():
    records = make_records(5)
    with pytest.raises(ValueError):
        build_features(list(reversed(records)))


def test_feature_name_enumeration_matches_build():
    records = make_records(10, providers=("a", "b", "c"))
    fm = build_features(records, lags=(-1, 0, 1))
    assert fm.names == feature_names(("a", "b", "c"), lags=(-1, 0, 1))
    # 3 providers x 3 columns x 3 lags + 4 summaries x 3 lags
    assert len(fm.names) == 3 * 3 * 3 + 4 * 3


def test_missing_provider_filled_with_mean_and_flagged():
    records = make_records(8, providers=("a", "b"))
    # drop provider b at one timestamp
    r = records[4]
    records[4] = EnsembleForecastRecord(
        time=r.time, providers=tuple(p for p in r.providers if p.provider_id == "a"))
    fm = build_features(records, lags=(0,))
    assert "b_missing_lag+0" in fm.names
    i = list(fm.times).index(r.time)
    assert fm.columns["b_missing_lag+0"][i] == 1.0
    a_speed = fm.columns["a_speed_lag+0"][i]
    assert fm.columns["b_speed_lag+0"][i] == pytest.approx(a_speed)
    assert fm.columns["speed_mean_lag+0"][i] == pytest.approx(a_speed)


def test_no_flag_columns_on_complete_data():
    fm = build_features(make_records(8), lags=(0,))
    assert not any("missing" in n or "degenerate" in n for n in fm.names)


def test_target_join_and_misalignment():
    records = make_records(8)
    obs = [PowerObservation(time=r.time, power=float(i), farm_id="f")
           for i, r in enumerate(records)]
    fm = build_features(records, lags=(-1, 0, 1), targets=obs)
    np.testing.assert_allclose(fm.target, np.arange(1, 7, dtype=float))
    with pytest.raises(MisalignedTargetError):
        build_features(records, lags=(-1, 0, 1), targets=obs[:3])


def test_select_applies_mask():
    fm = build_features(make_records(10), lags=(0,))
    sub = fm.select(np.arange(fm.n_rows) % 2 == 0)
    assert sub.n_rows == 5
    assert sub.names == fm.names


def test_ensemble_mean_inputs_oracle():
    t = pd.Timestamp("2022-01-01")
    rec = EnsembleForecastRecord(time=t, providers=(
        ProviderForecast("a", 8.0, 350.0), ProviderForecast("b", 12.0, 10.0)))
    [(time, speed, direction)] = ensemble_mean_inputs([rec])
    assert time == t
    assert speed == pytest.approx(10.0)
    assert direction == pytest.approx(0.0, abs=1e-9)
