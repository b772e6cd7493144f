"""Load raw probe-speed, incident, weather and density feeds onto the study grid.

Speed handling per segment:

* the 5-minute all-vehicle series is the primary signal;
* a missing 5-minute slot is filled with the space-mean (harmonic) average of
  whatever 1-minute observations exist inside the slot,
      v(slot) = count_observed / sum(1 / v_minute),
* if no 1-minute value exists either, traffic is assumed too thin for probes
  and the slot gets the free-flow speed (85th percentile of observed speeds
  over the training span);
* car and truck speeds are aggregated from 1-minute data the same way, and
  their remaining gaps are filled as r * v_all(t), where r is the mean
  class-to-all ratio over slots where both were actually observed.

Missing values are always NaN sentinels, never zero: a zero speed is a
physically meaningful (and here invalid) observation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd

from .grid import TimeGrid
from .validation import as_float_array, check_positive

DENSITY_LEVELS = {"A": 1.0, "B": 2.0 / 3.0, "C": 1.0 / 3.0}

WEATHER_CHANNELS = ["temp", "humidity", "precip", "snowfall", "snow_depth", "wind_speed", "wind_dir"]


class ClippedReportWarning(UserWarning):
    """A report interval extended beyond the study grid and was clipped."""


@dataclass(frozen=True)
class IncidentReport:
    segment_id: str
    start: datetime
    end: datetime
    kind: str = "incident"

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError(f"report on {self.segment_id}: start {self.start} not before end {self.end}")


@dataclass
class RoadGraph:
    """Segment adjacency with ordered upstream/downstream neighbours.

    ``upstream[s]`` and ``downstream[s]`` are lists of (segment_id,
    cumulative_distance_miles) ordered nearest first with strictly
    increasing distances.
    """

    segments: list[str]
    upstream: dict[str, list[tuple[str, float]]]
    downstream: dict[str, list[tuple[str, float]]]

    def __post_init__(self):
        for side in (self.upstream, self.downstream):
            for seg, neighbours in side.items():
                last = 0.0
                for other, dist in neighbours:
                    if other == seg:
                        raise ValueError(f"self-loop on segment {seg}")
                    if dist <= last:
                        raise ValueError(f"distances along {seg} neighbours must strictly increase")
                    last = dist

    def upstream_within(self, segment: str, max_miles: float) -> list[str]:
        return [s for s, d in self.upstream.get(segment, []) if d <= max_miles]

    def upstream_hops(self, segment: str, hops: int) -> list[str]:
        return [s for s, _ in self.upstream.get(segment, [])[:hops]]

    def downstream_hops(self, segment: str, hops: int) -> list[str]:
        return [s for s, _ in self.downstream.get(segment, [])[:hops]]


@dataclass
class SegmentSeries:
    """Complete per-segment slot series after imputation."""

    segment_id: str
    v_all: np.ndarray
    v_car: np.ndarray
    v_truck: np.ndarray
    density: np.ndarray
    p85: float
    observed_all: np.ndarray = field(repr=False, default=None)  # raw 5-min slots that were observed


@dataclass
class WeatherSeries:
    """Seven numeric weather channels on the grid, gap-free after fill."""

    data: np.ndarray  # (n_slots, 7)
    channels: list[str] = field(default_factory=lambda: list(WEATHER_CHANNELS))

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[1] != len(self.channels):
            raise ValueError(f"weather data must be (n_slots, {len(self.channels)})")


def harmonic_slot_mean(one_min: np.ndarray) -> np.ndarray:
    """Space-mean speed per slot from per-minute observations.

    ``one_min`` is (n_slots, k) with NaN for missing minutes. Returns the
    harmonic mean of the observed minutes per slot, NaN where none exist.
    """
    one_min = as_float_array(one_min, "one_min", ndim=2)
    observed = ~np.isnan(one_min)
    if (one_min[observed] <= 0).any():
        raise ValueError("one-minute speeds must be positive")
    counts = observed.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        recip = np.where(observed, 1.0 / one_min, 0.0)
        out = counts / recip.sum(axis=1)
    out[counts == 0] = np.nan
    return out


def impute_all_vehicle(five_min: np.ndarray, one_min: np.ndarray, p85: float) -> np.ndarray:
    """Fill every gap in the 5-minute all-vehicle series.

    Gaps take the harmonic mean of the slot's observed 1-minute speeds;
    slots with no observation at all take the free-flow speed ``p85``.
    """
    five_min = as_float_array(five_min, "five_min", ndim=1)
    if five_min.size == 0:
        raise ValueError("five_min series is empty")
    if one_min.shape[0] != five_min.shape[0]:
        raise ValueError("one_min must have one row per 5-minute slot")
    observed = ~np.isnan(five_min)
    if (five_min[observed] <= 0).any():
        raise ValueError("five-minute speeds must be positive")
    check_positive(p85, "p85")

    out = five_min.copy()
    gaps = ~observed
    if gaps.any():
        fallback = harmonic_slot_mean(one_min[gaps])
        fallback[np.isnan(fallback)] = p85
        out[gaps] = fallback
    return out


def impute_class_speeds(
    class_one_min: np.ndarray,
    v_all: np.ndarray,
    all_observed: np.ndarray | None = None,
) -> np.ndarray:
    """Aggregate a vehicle-class 1-minute series to slots and fill its gaps.

    Gap slots get r * v_all(t) with r the mean class/all ratio over slots
    where both the class aggregate and the all-vehicle value were observed
    (``all_observed`` mask; defaults to every slot). A wholly unobserved
    class falls back to r = 1, i.e. the all-vehicle series.
    """
    v_all = as_float_array(v_all, "v_all", ndim=1, allow_nan=False)
    class_slot = harmonic_slot_mean(class_one_min)
    if class_slot.shape != v_all.shape:
        raise ValueError("class series and v_all must share the slot grid")
    class_seen = ~np.isnan(class_slot)
    both = class_seen if all_observed is None else class_seen & np.asarray(all_observed, dtype=bool)
    ratio = float(np.mean(class_slot[both] / v_all[both])) if both.any() else 1.0
    out = np.where(class_seen, class_slot, ratio * v_all)
    return out


def normalize_density(codes) -> np.ndarray:
    """Map probe-density codes A/B/C to 1, 2/3, 1/3; missing to 0."""
    out = np.zeros(len(codes), dtype=float)
    for i, code in enumerate(codes):
        if code is None or (isinstance(code, float) and np.isnan(code)) or code == "":
            continue
        if code not in DENSITY_LEVELS:
            raise ValueError(f"unknown density code {code!r} at slot {i}")
        out[i] = DENSITY_LEVELS[code]
    return out


def rasterize_reports(reports, grid: TimeGrid, segment_id: str) -> np.ndarray:
    """Binary (n_days, slots_per_day) matrix of report coverage.

    Starts round down to the grid and ends round up, so partially covered
    slots count as covered. Overlaps union. Intervals reaching outside the
    grid are clipped with a warning.
    """
    flat = np.zeros(grid.n_slots, dtype=np.int8)
    for report in reports:
        if report.segment_id != segment_id:
            continue
        lo = grid.floor_index(report.start)
        hi = grid.ceil_index(report.end)
        if lo < 0 or hi > grid.n_slots:
            warnings.warn(
                f"report {report.start}..{report.end} on {segment_id} clipped to grid span",
                ClippedReportWarning,
                stacklevel=2,
            )
        lo, hi = max(lo, 0), min(hi, grid.n_slots)
        if lo < hi:
            flat[lo:hi] = 1
    return flat.reshape(grid.n_days, grid.slots_per_day)


def free_flow_speed(raw_values: np.ndarray, train_mask: np.ndarray, pct: float = 85.0) -> float:
    """Percentile of the raw (pre-imputation) observations on training slots."""
    raw_values = as_float_array(raw_values, "raw_values", ndim=1)
    sample = raw_values[np.asarray(train_mask, dtype=bool)]
    sample = sample[~np.isnan(sample)]
    if sample.size == 0:
        raise ValueError("no observed speeds in the training span")
    return float(np.percentile(sample, pct))


def forward_fill(data: np.ndarray) -> np.ndarray:
    """Forward-fill NaNs per column; leading gaps take the first observation."""
    out = np.array(data, dtype=float)
    for col in range(out.shape[1]):
        series = out[:, col]
        seen = ~np.isnan(series)
        if not seen.any():
            raise ValueError(f"weather channel {col} has no observations")
        idx = np.where(seen, np.arange(series.size), -1)
        np.maximum.accumulate(idx, out=idx)
        first = np.argmax(seen)
        idx[idx < 0] = first
        out[:, col] = series[idx]
    return out


# ---------------------------------------------------------------------------
# CSV loaders. Schemas (header row required, timestamps ISO-8601 local):
#   speed_1min.csv:  segment_id,timestamp,vehicle_class,speed_mph
#   speed_5min.csv:  segment_id,timestamp,speed_mph,density_code
#   incidents.csv:   segment_id,start,end,kind
#   weather.csv:     timestamp,temp,humidity,precip,snowfall,snow_depth,wind_speed,wind_dir
#   graph.csv:       segment_id,neighbor_id,direction,distance_miles
# ---------------------------------------------------------------------------


def infer_grid(speed_5min_path: Path, step_minutes: int = 5) -> TimeGrid:
    stamps = pd.to_datetime(pd.read_csv(speed_5min_path, usecols=["timestamp"])["timestamp"])
    start = stamps.min().normalize().to_pydatetime()
    n_days = (stamps.max().normalize() - stamps.min().normalize()).days + 1
    return TimeGrid(start=start, n_days=n_days, step_minutes=step_minutes)


def load_speed_5min(path: Path, grid: TimeGrid):
    """Per-segment raw 5-minute speed arrays and density code lists."""
    df = pd.read_csv(path, dtype={"segment_id": str, "density_code": str}, keep_default_na=False)
    df["speed_mph"] = pd.to_numeric(df["speed_mph"].replace("", np.nan))
    idx = _slot_indices(df["timestamp"], grid)
    speeds: dict[str, np.ndarray] = {}
    densities: dict[str, list] = {}
    for seg, sub in df.groupby("segment_id", sort=True):
        v = np.full(grid.n_slots, np.nan)
        codes = [""] * grid.n_slots
        rows = idx[sub.index]
        v[rows] = sub["speed_mph"].to_numpy()
        for r, code in zip(rows, sub["density_code"]):
            codes[r] = code
        speeds[seg] = v
        densities[seg] = codes
    return speeds, densities


def load_speed_1min(path: Path, grid: TimeGrid):
    """Per-segment, per-class (n_slots, step) minute arrays; absent rows stay NaN."""
    df = pd.read_csv(path, dtype={"segment_id": str, "vehicle_class": str})
    stamps = pd.to_datetime(df["timestamp"])
    offset = ((stamps - grid.start).dt.total_seconds() // 60).astype(int)
    slot = offset.to_numpy() // grid.step_minutes
    minute = offset.to_numpy() % grid.step_minutes
    if (slot < 0).any() or (slot >= grid.n_slots).any():
        raise ValueError("1-minute timestamps fall outside the grid")
    out: dict[str, dict[str, np.ndarray]] = {}
    for (seg, cls), sub in df.groupby(["segment_id", "vehicle_class"], sort=True):
        block = np.full((grid.n_slots, grid.step_minutes), np.nan)
        block[slot[sub.index], minute[sub.index]] = sub["speed_mph"].to_numpy()
        out.setdefault(seg, {})[cls] = block
    return out


def load_incidents(path: Path, kinds: list[str] | None = None) -> list[IncidentReport]:
    df = pd.read_csv(path, dtype={"segment_id": str, "kind": str})
    reports = []
    for row in df.itertuples(index=False):
        if kinds is not None and row.kind not in kinds:
            continue
        reports.append(
            IncidentReport(
                segment_id=row.segment_id,
                start=pd.to_datetime(row.start).to_pydatetime(),
                end=pd.to_datetime(row.end).to_pydatetime(),
                kind=row.kind,
            )
        )
    return reports


def load_weather(path: Path, grid: TimeGrid) -> WeatherSeries:
    df = pd.read_csv(path)
    data = np.full((grid.n_slots, len(WEATHER_CHANNELS)), np.nan)
    rows = _slot_indices(df["timestamp"], grid)
    data[rows] = df[WEATHER_CHANNELS].to_numpy(dtype=float)
    filled = forward_fill(data)
    filled[:, WEATHER_CHANNELS.index("wind_dir")] %= 360.0
    return WeatherSeries(data=filled)


def load_graph(path: Path) -> RoadGraph:
    df = pd.read_csv(path, dtype={"segment_id": str, "neighbor_id": str, "direction": str})
    segments = sorted(set(df["segment_id"]) | set(df["neighbor_id"]))
    upstream: dict[str, list[tuple[str, float]]] = {s: [] for s in segments}
    downstream: dict[str, list[tuple[str, float]]] = {s: [] for s in segments}
    for row in df.itertuples(index=False):
        side = upstream if row.direction == "up" else downstream
        if row.direction not in ("up", "down"):
            raise ValueError(f"unknown direction {row.direction!r} in graph file")
        side[row.segment_id].append((row.neighbor_id, float(row.distance_miles)))
    for side in (upstream, downstream):
        for seg in side:
            side[seg].sort(key=lambda pair: pair[1])
    return RoadGraph(segments=segments, upstream=upstream, downstream=downstream)


def _slot_indices(timestamps, grid: TimeGrid) -> np.ndarray:
    stamps = pd.to_datetime(timestamps)
    seconds = (stamps - grid.start).dt.total_seconds().to_numpy()
    step = grid.step_minutes * 60
    idx = seconds / step
    rounded = np.rint(idx).astype(int)
    if not np.allclose(idx, rounded):
        raise ValueError("timestamps are not aligned to the slot grid")
    if (rounded < 0).any() or (rounded >= grid.n_slots).any():
        raise ValueError("timestamps fall outside the grid span")
    return rounded
