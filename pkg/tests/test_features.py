from datetime import datetime

import numpy as np
import pytest

from anomaly_pipeline.features import (
    ChannelScaler,
    assemble,
    encode_time,
    encode_time_grid,
    seasonal_recurrent_speed,
    slowdown_speed,
    travel_time_index,
)
from anomaly_pipeline.grid import TimeGrid
from anomaly_pipeline.ingest import RoadGraph, SegmentSeries, WeatherSeries


def test_slowdown_direct():
    sd = slowdown_speed(np.array([41.0]), np.array([[60.0], [62.0]]))
    assert sd[0] == pytest.approx(20.0)


def test_slowdown_clamps_and_equality():
    assert slowdown_speed(np.array([70.0]), np.array([[60.0]]))[0] == 0.0
    assert slowdown_speed(np.array([50.0]), np.array([[50.0]]))[0] == 0.0


def test_slowdown_requires_upstream():
    with pytest.raises(ValueError, match="upstream"):
        slowdown_speed(np.array([50.0]), np.empty((0, 1)))


def test_travel_time_index():
    assert travel_time_index(np.array([35.0]), 70.0)[0] == pytest.approx(2.0)
    assert travel_time_index(np.array([80.0]), 70.0)[0] == 1.0
    assert travel_time_index(np.array([50.0]), 65.0)[0] == pytest.approx(1.3)
    with pytest.raises(ValueError):
        travel_time_index(np.array([0.0]), 70.0)


def hourly_grid(n_days):
    return TimeGrid(start=datetime(2022, 8, 1), n_days=n_days, step_minutes=60)


def test_srs_mean_of_three_weeks():
    g = hourly_grid(22)
    week = 7 * g.slots_per_day
    v = np.full(g.n_slots, 50.0)
    t = 21 * g.slots_per_day + 5
    v[t - 3 * week] = 60.0
    v[t - 2 * week] = 62.0
    v[t - 1 * week] = 64.0
    inc = np.zeros((g.n_days, g.slots_per_day), dtype=np.int8)
    srs, available = seasonal_recurrent_speed(v, inc, g, p85=70.0)
    assert available[t]
    assert srs[t] == pytest.approx(62.0)


def test_srs_excludes_reported_weeks_and_falls_back():
    g = hourly_grid(22)
    week = 7 * g.slots_per_day
    v = np.full(g.n_slots, 50.0)
    t = 21 * g.slots_per_day + 5
    v[t - 3 * week] = 60.0
    v[t - 2 * week] = 62.0
    v[t - 1 * week] = 64.0
    inc = np.zeros((g.n_days, g.slots_per_day), dtype=np.int8)
    inc[7, 5] = 1  # the middle week (t - 2*week) is under a report
    srs, _ = seasonal_recurrent_speed(v, inc.ravel().reshape(g.n_days, g.slots_per_day), g, p85=70.0)
    assert srs[t] == pytest.approx(62.0)  # mean of 60 and 64

    inc[0, 5] = inc[7, 5] = inc[14, 5] = 1  # all three excluded
    srs, _ = seasonal_recurrent_speed(v, inc, g, p85=70.0)
    assert srs[t] == pytest.approx(70.0)


def test_srs_unavailable_before_three_weeks():
    g = hourly_grid(22)
    v = np.full(g.n_slots, 50.0)
    inc = np.zeros((g.n_days, g.slots_per_day), dtype=np.int8)
    _, available = seasonal_recurrent_speed(v, inc, g, p85=70.0)
    week = 7 * g.slots_per_day
    assert not available[: 3 * week].any()
    assert available[3 * week:].all()


def test_srs_never_uses_future_slots():
    # changing data at or after t must not change srs[t]
    g = hourly_grid(23)
    rng = np.random.default_rng(3)
    v = rng.uniform(40, 70, g.n_slots)
    inc = (rng.random((g.n_days, g.slots_per_day)) < 0.05).astype(np.int8)
    t = 22 * g.slots_per_day + 3
    srs_before, _ = seasonal_recurrent_speed(v, inc, g, p85=65.0)
    v2 = v.copy()
    v2[t:] = 5.0
    srs_after, _ = seasonal_recurrent_speed(v2, inc, g, p85=65.0)
    assert srs_before[t] == srs_after[t]


def test_encode_time_quarter_period():
    # month index 3 of 12: sin = 1, cos = 0
    vec = encode_time(datetime(2022, 4, 5, 12, 0), slots_per_day=288)
    assert vec[0] == pytest.approx(1.0)
    assert vec[1] == pytest.approx(0.0, abs=1e-12)


def test_encode_time_index_zero():
    vec = encode_time(datetime(2022, 1, 10, 0, 0), slots_per_day=288)
    assert vec[0] == pytest.approx(0.0, abs=1e-12)  # January
    assert vec[1] == pytest.approx(1.0)
    assert vec[6] == pytest.approx(0.0, abs=1e-12)  # midnight slot
    assert vec[7] == pytest.approx(1.0)


def test_encode_time_day_of_week_three():
    # Thursday has zero-based day-of-week 3: angle 6*pi/7
    vec = encode_time(datetime(2022, 8, 4, 0, 0), slots_per_day=288)
    assert vec[4] == pytest.approx(0.43388373911755823)
    assert vec[5] == pytest.approx(-0.900968867902419)


def test_encode_time_bounds_and_grid():
    g = TimeGrid(start=datetime(2022, 8, 1), n_days=2, step_minutes=5)
    block = encode_time_grid(g)
    assert block.shape == (g.n_slots, 8)
    assert block.min() >= -1.0 and block.max() <= 1.0
    assert np.allclose(block[5], encode_time(g.timestamp(0, 5), g.slots_per_day))


def test_channel_scaler_constant_channel_is_zeroed():
    X = np.column_stack([np.full(10, 3.0), np.arange(10.0)])
    scaler = ChannelScaler().fit(X)
    out = scaler.transform(X)
    assert np.all(out[:, 0] == 0.0)
    assert out[:, 1].std() == pytest.approx(1.0, rel=1e-6)


def corridor(n_segments=3, n_days=35):
    g = TimeGrid(start=datetime(2022, 8, 1), n_days=n_days, step_minutes=60)
    ids = [f"s{i}" for i in range(n_segments)]
    upstream = {ids[i]: [(ids[j], 0.7 * (i - j)) for j in range(i - 1, -1, -1)] for i in range(n_segments)}
    downstream = {ids[i]: [(ids[j], 0.7 * (j - i)) for j in range(i + 1, n_segments)] for i in range(n_segments)}
    graph = RoadGraph(segments=ids, upstream=upstream, downstream=downstream)
    rng = np.random.default_rng(5)
    series = {}
    inc = {}
    for seg in ids:
        v = rng.uniform(45, 65, g.n_slots)
        series[seg] = SegmentSeries(
            segment_id=seg, v_all=v, v_car=v * 1.02, v_truck=v * 0.95,
            density=rng.choice([1.0, 2 / 3, 1 / 3], g.n_slots), p85=63.0,
            observed_all=np.ones(g.n_slots, bool),
        )
        inc[seg] = (rng.random((g.n_days, g.slots_per_day)) < 0.02).astype(np.int8)
    weather = WeatherSeries(data=rng.uniform(0, 1, (g.n_slots, 7)))
    train_mask = np.zeros(n_days, bool)
    train_mask[: int(n_days * 0.7)] = True
    return graph, series, inc, weather, g, train_mask


def test_assemble_width_with_three_hops():
    graph, series, inc, weather, g, train_mask = corridor(7)
    frame = assemble(graph, "s3", series, inc, weather, g, train_mask, hops_up=3, hops_down=3)
    assert frame.width == 7 * 7 + 15 == 64
    assert frame.hops_up_effective == 3 and frame.hops_down_effective == 3


def test_assemble_width_no_hops():
    graph, series, inc, weather, g, train_mask = corridor(3)
    frame = assemble(graph, "s1", series, inc, weather, g, train_mask, hops_up=0, hops_down=0)
    assert frame.width == 22


def test_assemble_uses_available_neighbors():
    graph, series, inc, weather, g, train_mask = corridor(3)
    frame = assemble(graph, "s1", series, inc, weather, g, train_mask, hops_up=3, hops_down=3)
    assert frame.hops_up_effective == 1
    assert frame.hops_down_effective == 1
    assert frame.width == 7 * 3 + 15


def test_assemble_rejects_target_without_upstream():
    graph, series, inc, weather, g, train_mask = corridor(3)
    with pytest.raises(ValueError, match="upstream"):
        assemble(graph, "s0", series, inc, weather, g, train_mask)


def test_assemble_deterministic():
    graph, series, inc, weather, g, train_mask = corridor(3)
    a = assemble(graph, "s1", series, inc, weather, g, train_mask)
    b = assemble(graph, "s1", series, inc, weather, g, train_mask)
    assert np.array_equal(a.data, b.data)
    assert a.channel_names == b.channel_names


def test_assemble_channel_invariants():
    graph, series, inc, weather, g, train_mask = corridor(4)
    frame = assemble(graph, "s2", series, inc, weather, g, train_mask)
    names = frame.channel_names
    # de-normalized channels must satisfy sd >= 0 and tti >= 1 on every slot
    for seg_prefix in ("s2", "s1", "s3"):
        sd_col = names.index(f"{seg_prefix}:sd")
        tti_col = names.index(f"{seg_prefix}:tti")
        sd = frame.data[:, sd_col] * frame.scaler.scale_[sd_col] + frame.scaler.mean_[sd_col]
        tti = frame.data[:, tti_col] * frame.scaler.scale_[tti_col] + frame.scaler.mean_[tti_col]
        assert sd.min() >= -1e-9
        assert tti.min() >= 1.0 - 1e-9
