"""Engineered per-segment features and sub-graph feature assembly.

Three speed-derived channels carry the anomaly signal:

* slowdown speed   SD(t) = max(mean upstream speed - own speed, 0), the
  spatial signature of a queue backing up from an incident;
* travel time index TTI(t) = max(p85 / v(t), 1), a temporal signature
  against free-flow speed;
* seasonal recurrent speed SRS(t) = mean speed at the same slot on the same
  weekday over the past three weeks, skipping weeks under an incident
  report; the free-flow speed when all three weeks are excluded.

A detector for one target segment consumes the target plus a few upstream
and downstream hops ("sub-graph"), seven channels each, global cyclic time
encodings and weather. Channels are z-scored with statistics taken from the
training partition only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .grid import TimeGrid
from .ingest import RoadGraph, SegmentSeries, WeatherSeries
from .validation import as_float_array, check_positive

SEGMENT_CHANNELS = ["v_all", "v_car", "v_truck", "density", "sd", "tti", "srs"]
TIME_CHANNELS = [
    "sin_month", "cos_month",
    "sin_week", "cos_week",
    "sin_dow", "cos_dow",
    "sin_tod", "cos_tod",
]
WEEKS_OF_HISTORY = 3
STD_FLOOR = 1e-6


def slowdown_speed(target_v: np.ndarray, upstream_v: np.ndarray) -> np.ndarray:
    """Positive excess of the mean upstream speed over the target speed."""
    target_v = as_float_array(target_v, "target_v", ndim=1, allow_nan=False)
    upstream_v = as_float_array(upstream_v, "upstream_v", ndim=2, allow_nan=False)
    if upstream_v.shape[0] == 0:
        raise ValueError(
            "no upstream segment within range; widen the upstream distance or exclude this segment"
        )
    if upstream_v.shape[1] != target_v.shape[0]:
        raise ValueError("upstream series must share the target's slot grid")
    return np.maximum(upstream_v.mean(axis=0) - target_v, 0.0)


def travel_time_index(v: np.ndarray, p85: float) -> np.ndarray:
    """Free-flow over current speed, floored at 1."""
    v = as_float_array(v, "v", ndim=1, allow_nan=False)
    if (v <= 0).any():
        raise ValueError("speeds must be positive before computing the travel time index")
    check_positive(p85, "p85")
    return np.maximum(p85 / v, 1.0)


def seasonal_recurrent_speed(
    v: np.ndarray, inc: np.ndarray, grid: TimeGrid, p85: float
) -> tuple[np.ndarray, np.ndarray]:
    """Mean same-weekday same-slot speed over the prior three report-free weeks.

    Returns (srs, available): slots earlier than three weeks into the study
    have no history and are flagged unavailable (value filled with p85 so
    the array stays finite; the availability mask guards real use). Slots
    whose three candidate weeks are all under a report fall back to p85.
    """
    v = as_float_array(v, "v", ndim=1, allow_nan=False)
    inc_flat = np.asarray(inc).reshape(-1)
    if inc_flat.shape != v.shape:
        raise ValueError("incident matrix does not match the speed series")
    week = 7 * grid.slots_per_day
    n = v.size
    total = np.zeros(n)
    count = np.zeros(n)
    for j in range(1, WEEKS_OF_HISTORY + 1):
        shift = j * week
        ok = np.zeros(n, dtype=bool)
        ok[shift:] = inc_flat[:-shift] != 1
        vals = np.zeros(n)
        vals[shift:] = v[:-shift]
        total += np.where(ok, vals, 0.0)
        count += ok
    available = np.arange(n) >= WEEKS_OF_HISTORY * week
    with np.errstate(invalid="ignore"):
        srs = total / count
    srs[count == 0] = p85
    srs[~available] = p85
    return srs, available


def encode_time(ts: datetime, slots_per_day: int) -> np.ndarray:
    """Sine/cosine pairs for month, week-of-year, day-of-week and time-of-day.

    Each argument is 2*pi*t/T with t zero-based within its period. Week 53
    folds into week 52.
    """
    month = ts.month - 1
    week = min(ts.isocalendar().week, 52) - 1
    dow = ts.weekday()
    tod = (ts.hour * 60 + ts.minute) * slots_per_day // (24 * 60)
    out = np.empty(8)
    for i, (t, period) in enumerate([(month, 12), (week, 52), (dow, 7), (tod, slots_per_day)]):
        angle = 2.0 * np.pi * t / period
        out[2 * i] = np.sin(angle)
        out[2 * i + 1] = np.cos(angle)
    return out


def encode_time_grid(grid: TimeGrid) -> np.ndarray:
    """(n_slots, 8) cyclic time encodings for every slot of the grid."""
    spd = grid.slots_per_day
    per_day = np.empty((grid.n_days, 8))
    for day in range(grid.n_days):
        per_day[day] = encode_time(grid.timestamp(day, 0), spd)
    out = np.repeat(per_day, spd, axis=0)
    tod = np.tile(np.arange(spd), grid.n_days)
    angle = 2.0 * np.pi * tod / spd
    out[:, 6] = np.sin(angle)
    out[:, 7] = np.cos(angle)
    return out


class ChannelScaler(BaseEstimator, TransformerMixin):
    """Per-channel z-scoring with a stddev floor for constant channels."""

    def __init__(self, std_floor: float = STD_FLOOR):
        self.std_floor = std_floor

    def fit(self, X, y=None):
        X = as_float_array(X, "X", ndim=2, allow_nan=False)
        self.mean_ = X.mean(axis=0)
        self.scale_ = np.maximum(X.std(axis=0), self.std_floor)
        return self

    def transform(self, X):
        X = as_float_array(X, "X", ndim=2, allow_nan=False)
        return (X - self.mean_) / self.scale_


@dataclass
class FeatureFrame:
    """Z-scored per-slot feature block for one target's sub-graph."""

    target: str
    neighborhood: list[str]
    data: np.ndarray                 # (n_slots, F), z-scored
    channel_names: list[str]
    srs_available: np.ndarray        # (n_slots,) bool
    grid: TimeGrid
    scaler: ChannelScaler = field(repr=False, default=None)
    hops_up_effective: int = 0
    hops_down_effective: int = 0

    @property
    def width(self) -> int:
        return self.data.shape[1]


def segment_channels(
    series: SegmentSeries,
    graph: RoadGraph,
    all_series: dict[str, SegmentSeries],
    inc: np.ndarray,
    grid: TimeGrid,
    sd_distance_miles: float,
) -> np.ndarray:
    """(n_slots, 7) channel block for one segment.

    Segments with no upstream neighbour in range get a constant-zero
    slowdown channel; the z-score floor turns it into an all-zero input, so
    it carries no signal instead of a fabricated one.
    """
    upstream_ids = graph.upstream_within(series.segment_id, sd_distance_miles)
    if upstream_ids:
        upstream_v = np.stack([all_series[u].v_all for u in upstream_ids])
        sd = slowdown_speed(series.v_all, upstream_v)
    else:
        sd = np.zeros(grid.n_slots)
    tti = travel_time_index(series.v_all, series.p85)
    srs, _ = seasonal_recurrent_speed(series.v_all, inc, grid, series.p85)
    return np.column_stack([series.v_all, series.v_car, series.v_truck, series.density, sd, tti, srs])


def assemble(
    graph: RoadGraph,
    target: str,
    all_series: dict[str, SegmentSeries],
    inc_matrices: dict[str, np.ndarray],
    weather: WeatherSeries,
    grid: TimeGrid,
    train_day_mask: np.ndarray,
    hops_up: int = 3,
    hops_down: int = 3,
    sd_distance_miles: float = 2.0,
) -> FeatureFrame:
    """Build the z-scored feature block for ``target``'s sub-graph.

    Requests more hops than the graph offers are satisfied with what exists;
    the effective counts are recorded on the frame. The target itself must
    have at least one upstream segment within ``sd_distance_miles``.
    """
    if target not in graph.segments:
        raise ValueError(f"target {target} not in graph")
    if not graph.upstream_within(target, sd_distance_miles):
        raise ValueError(
            f"target {target} has no upstream segment within {sd_distance_miles} miles; "
            "widen the distance or exclude this segment"
        )
    ups = graph.upstream_hops(target, hops_up)
    downs = graph.downstream_hops(target, hops_down)
    members = [target] + ups + downs

    blocks, names = [], []
    for seg in members:
        blocks.append(
            segment_channels(all_series[seg], graph, all_series, inc_matrices[seg], grid, sd_distance_miles)
        )
        names.extend(f"{seg}:{ch}" for ch in SEGMENT_CHANNELS)
    blocks.append(encode_time_grid(grid))
    names.extend(f"time:{ch}" for ch in TIME_CHANNELS)
    blocks.append(weather.data)
    names.extend(f"weather:{ch}" for ch in weather.channels)
    raw = np.hstack(blocks)

    _, srs_available = seasonal_recurrent_speed(
        all_series[target].v_all, inc_matrices[target], grid, all_series[target].p85
    )
    train_slots = np.repeat(np.asarray(train_day_mask, dtype=bool), grid.slots_per_day)
    fit_rows = train_slots & srs_available
    if not fit_rows.any():
        raise ValueError("no training slots with seasonal history available for channel statistics")
    scaler = ChannelScaler().fit(raw[fit_rows])

    return FeatureFrame(
        target=target,
        neighborhood=members,
        data=scaler.transform(raw),
        channel_names=names,
        srs_available=srs_available,
        grid=grid,
        scaler=scaler,
        hops_up_effective=len(ups),
        hops_down_effective=len(downs),
    )
