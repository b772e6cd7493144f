"""Synthetic corridor scenarios with ground-truth incidents.

A linear corridor of segments, traffic flowing from segment 0 onward, so
segment i-1 is the nearest upstream neighbour of segment i. Each day gets a
recurrent speed profile (free flow minus AM/PM peak dips, damped on
weekends) plus Gaussian noise. An incident drops the host segment's speed
by a configured fraction for its duration with a linear recovery tail, and
the slowdown propagates upstream at a backward wave speed, attenuated
exponentially with distance, so the host segment shows the
upstream-mean-minus-own-speed signature while the queue builds.

Reports mimic the real reporting process: each incident is reported with a
random delay or dropped entirely. Observation layers add measurement noise
and missingness to the 5-minute and 1-minute feeds, probe density codes
follow the time of day, and weather channels are smooth bounded random
walks (input plumbing, not a weather model).

Everything is driven by one seed; a fixed seed yields byte-identical CSVs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
import pandas as pd

from .grid import TimeGrid
from .ingest import WEATHER_CHANNELS

REPORT_KINDS = ["crash", "disabled_vehicle", "debris"]


@dataclass
class ScenarioConfig:
    n_segments: int = 10
    segment_length_miles: float = 0.7
    n_days: int = 30
    start_date: str = "2022-08-05"  # a Friday: the chronological-split tail lands on weekdays
    # Adjacent segments of one corridor: keep free flow and peak depths nearly
    # homogeneous, or the slowdown signal picks up permanent inter-segment bias
    # instead of incidents.
    free_flow_mph: float = 65.0
    free_flow_spread_mph: float = 0.75
    am_peak_depth_mph: float = 14.0
    pm_peak_depth_mph: float = 16.0
    peak_width_slots: float = 16.0
    peak_depth_jitter: float = 0.04
    weekend_peak_factor: float = 0.3
    noise_std_mph: float = 1.4
    incident_rate: float = 0.05            # incidents per segment-day
    impact_drop: float = 0.4               # fraction of speed lost on the host
    backward_wave_mph: float = 12.0
    # strong distance attenuation: a sub-threshold neighbour slowdown is
    # visible to a detector but never labeled, which poisons calibration
    upstream_decay_miles: float = 0.25
    min_duration_min: float = 45.0
    max_duration_min: float = 105.0
    # unreported incidents are the minor ones: shorter, same impact shape
    unreported_duration_min: float = 20.0
    unreported_duration_max: float = 45.0
    recovery_min: float = 10.0
    incident_window: tuple[str, str] = ("06:30", "19:00")
    report_delay_min: float = 5.0
    report_delay_max: float = 20.0
    report_drop_prob: float = 0.3
    speed_5min_missing: float = 0.03
    speed_1min_missing: float = 0.6
    class_1min_missing: float = 0.8
    obs_noise_mph: float = 0.6
    minute_noise_mph: float = 1.5
    seed: int = 0

    def __post_init__(self):
        for name in ("report_drop_prob", "speed_5min_missing", "speed_1min_missing",
                     "class_1min_missing", "impact_drop"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.backward_wave_mph <= 0:
            raise ValueError("backward_wave_mph must be positive")
        if self.report_delay_min > self.report_delay_max:
            raise ValueError("report delay bounds are inverted")

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown scenario keys: {sorted(extra)}")
        if "incident_window" in data:
            data = {**data, "incident_window": tuple(data["incident_window"])}
        return cls(**data)


@dataclass(frozen=True)
class TrueIncident:
    segment_id: str
    start: datetime
    end: datetime
    reported: bool
    report_start: datetime | None
    kind: str


@dataclass
class Scenario:
    config: ScenarioConfig
    grid: TimeGrid
    segment_ids: list[str]
    speeds_true: np.ndarray      # (n_segments, n_slots) noiseless truth incl. incidents
    speed_5min: np.ndarray       # (n_segments, n_slots) observed with NaN gaps
    one_min: dict[str, np.ndarray] = field(repr=False, default=None)   # class -> (n_seg, n_slots, 5)
    density_codes: list[list[str]] = field(repr=False, default=None)
    weather: np.ndarray = field(repr=False, default=None)              # (n_slots, 7)
    incidents: list[TrueIncident] = field(default_factory=list)


def generate(config: ScenarioConfig) -> Scenario:
    rng = np.random.default_rng(config.seed)
    grid = TimeGrid(
        start=datetime.fromisoformat(config.start_date), n_days=config.n_days, step_minutes=5
    )
    n_seg, n_slots, spd = config.n_segments, grid.n_slots, grid.slots_per_day
    segment_ids = [f"tmc_{i:02d}" for i in range(n_seg)]

    free_flow = config.free_flow_mph + config.free_flow_spread_mph * rng.uniform(-1, 1, n_seg)
    am_mult = 1.0 + config.peak_depth_jitter * rng.uniform(-1, 1, n_seg)
    pm_mult = 1.0 + config.peak_depth_jitter * rng.uniform(-1, 1, n_seg)

    tod = np.arange(spd)
    am_bump = np.exp(-0.5 * ((tod - grid.slot_of_time("07:45")) / config.peak_width_slots) ** 2)
    pm_bump = np.exp(-0.5 * ((tod - grid.slot_of_time("17:15")) / config.peak_width_slots) ** 2)
    weekday_factor = np.array(
        [1.0 if grid.weekday(d) < 5 else config.weekend_peak_factor for d in range(grid.n_days)]
    )
    dips = (
        config.am_peak_depth_mph * am_mult[:, None, None] * am_bump[None, None, :]
        + config.pm_peak_depth_mph * pm_mult[:, None, None] * pm_bump[None, None, :]
    ) * weekday_factor[None, :, None]
    base = (free_flow[:, None, None] - dips).reshape(n_seg, n_slots)

    incidents = _draw_incidents(rng, grid, segment_ids, config)
    factor = _impact_factors(grid, segment_ids, incidents, config)
    speeds_true = base * factor + config.noise_std_mph * rng.standard_normal((n_seg, n_slots))
    if speeds_true.min() <= 0.0:
        raise ValueError(
            f"scenario produces non-positive speeds (min {speeds_true.min():.2f} mph); "
            "reduce peak depths, impact drop or noise"
        )

    speed_5min = speeds_true + config.obs_noise_mph * rng.standard_normal((n_seg, n_slots))
    speed_5min[rng.random((n_seg, n_slots)) < config.speed_5min_missing] = np.nan

    one_min = {}
    class_specs = [
        ("all", 1.0, config.speed_1min_missing),
        ("car", 1.03, config.class_1min_missing),
        ("truck", 0.93, config.class_1min_missing),
    ]
    for cls, ratio, missing in class_specs:
        block = ratio * speeds_true[:, :, None] + config.minute_noise_mph * rng.standard_normal(
            (n_seg, n_slots, grid.step_minutes)
        )
        block[rng.random(block.shape) < missing] = np.nan
        one_min[cls] = np.clip(block, 1.0, None)

    density_codes = _density_codes(rng, grid, speed_5min)
    weather = _weather_walks(rng, n_slots)

    return Scenario(
        config=config,
        grid=grid,
        segment_ids=segment_ids,
        speeds_true=speeds_true,
        speed_5min=speed_5min,
        one_min=one_min,
        density_codes=density_codes,
        weather=weather,
        incidents=incidents,
    )


def _draw_incidents(rng, grid, segment_ids, config) -> list[TrueIncident]:
    lo = grid.slot_of_time(config.incident_window[0]) * grid.step_minutes
    hi = grid.slot_of_time(config.incident_window[1]) * grid.step_minutes
    incidents = []
    for seg in segment_ids:
        for day in range(grid.n_days):
            if rng.random() >= config.incident_rate:
                continue
            start_min = day * 24 * 60 + rng.uniform(lo, hi)
            reported = rng.random() >= config.report_drop_prob
            if reported:
                duration = rng.uniform(config.min_duration_min, config.max_duration_min)
            else:
                duration = rng.uniform(config.unreported_duration_min, config.unreported_duration_max)
            start = grid.start + timedelta(minutes=round(start_min))
            end = start + timedelta(minutes=round(duration))
            delay = rng.uniform(config.report_delay_min, config.report_delay_max)
            report_start = start + timedelta(minutes=round(delay)) if reported else None
            kind = REPORT_KINDS[int(rng.integers(len(REPORT_KINDS)))]
            incidents.append(
                TrueIncident(
                    segment_id=seg, start=start, end=end,
                    reported=reported, report_start=report_start, kind=kind,
                )
            )
    return incidents


def _impact_factors(grid, segment_ids, incidents, config) -> np.ndarray:
    """Multiplicative speed factors per (segment, slot) from all incidents."""
    n_seg = len(segment_ids)
    index = {seg: i for i, seg in enumerate(segment_ids)}
    centers = (np.arange(grid.n_slots) + 0.5) * grid.step_minutes  # minutes from grid start
    factor = np.ones((n_seg, grid.n_slots))
    for inc in incidents:
        host = index[inc.segment_id]
        t0 = (inc.start - grid.start).total_seconds() / 60.0
        t1 = (inc.end - grid.start).total_seconds() / 60.0
        for seg_idx in range(host, -1, -1):
            dist = (host - seg_idx) * config.segment_length_miles
            drop = config.impact_drop * np.exp(-dist / config.upstream_decay_miles)
            if drop < 0.01:
                break
            lag = dist / config.backward_wave_mph * 60.0
            onset, clear = t0 + lag, t1 + lag
            ramp = np.clip((centers - clear) / config.recovery_min, 0.0, 1.0)
            local = np.where(centers < onset, 1.0, 1.0 - drop * (1.0 - ramp))
            factor[seg_idx] *= local
    return factor


def _density_codes(rng, grid, speed_5min) -> list[list[str]]:
    tod = np.tile(np.arange(grid.slots_per_day), grid.n_days)
    day_slots = (tod >= grid.slot_of_time("06:00")) & (tod < grid.slot_of_time("20:00"))
    evening = (tod >= grid.slot_of_time("20:00")) & (tod < grid.slot_of_time("23:00"))
    codes_all = []
    for seg in range(speed_5min.shape[0]):
        draw = rng.random(grid.n_slots)
        codes = np.full(grid.n_slots, "C", dtype=object)
        codes[evening & (draw < 0.7)] = "B"
        codes[day_slots] = np.where(draw[day_slots] < 0.8, "A", "B")
        codes[np.isnan(speed_5min[seg])] = ""
        codes_all.append(codes.tolist())
    return codes_all


def _weather_walks(rng, n_slots) -> np.ndarray:
    def walk(lo, hi, start, step):
        steps = rng.standard_normal(n_slots) * step
        series = start + np.cumsum(steps)
        return np.clip(series, lo, hi)

    temp = walk(10.0, 95.0, 55.0, 0.05)
    humidity = walk(20.0, 100.0, 60.0, 0.1)
    precip = np.maximum(walk(-2.0, 3.0, -1.0, 0.05), 0.0)
    snowfall = np.where(temp < 32.0, precip, 0.0)
    snow_depth = np.maximum.accumulate(snowfall) * 0.1
    wind_speed = walk(0.0, 35.0, 8.0, 0.08)
    wind_dir = (walk(-360.0, 720.0, 180.0, 0.5)) % 360.0
    return np.column_stack([temp, humidity, precip, snowfall, snow_depth, wind_speed, wind_dir])


# ---------------------------------------------------------------------------
# CSV emission, matching the ingest schemas exactly.
# ---------------------------------------------------------------------------


def write_csvs(scenario: Scenario, out_dir: Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = scenario.grid
    n_seg, n_slots = len(scenario.segment_ids), grid.n_slots
    seg_array = np.array(scenario.segment_ids)
    slot_stamps = (np.datetime64(grid.start, "m") + np.arange(n_slots) * grid.step_minutes).astype(str)
    minute_stamps = (np.datetime64(grid.start, "m") + np.arange(n_slots * grid.step_minutes)).astype(str)

    paths = {}

    frame5 = pd.DataFrame(
        {
            "segment_id": np.repeat(seg_array, n_slots),
            "timestamp": np.tile(slot_stamps, n_seg),
            "speed_mph": scenario.speed_5min.ravel(),
            "density_code": np.concatenate([np.asarray(c, dtype=object) for c in scenario.density_codes]),
        }
    )
    paths["speed_5min"] = _write(out_dir / "speed_5min.csv", frame5, "%.2f")

    parts = []
    for cls in sorted(scenario.one_min):
        block = scenario.one_min[cls]
        seg_idx, slot_idx, minute_idx = np.nonzero(~np.isnan(block))
        parts.append(
            pd.DataFrame(
                {
                    "segment_id": seg_array[seg_idx],
                    "timestamp": minute_stamps[slot_idx * grid.step_minutes + minute_idx],
                    "vehicle_class": cls,
                    "speed_mph": block[seg_idx, slot_idx, minute_idx],
                }
            )
        )
    paths["speed_1min"] = _write(out_dir / "speed_1min.csv", pd.concat(parts, ignore_index=True), "%.2f")

    frame_inc = pd.DataFrame(
        [
            (inc.segment_id, inc.report_start.isoformat(), inc.end.isoformat(), inc.kind)
            for inc in scenario.incidents
            if inc.reported
        ],
        columns=["segment_id", "start", "end", "kind"],
    )
    paths["incidents"] = _write(out_dir / "incidents.csv", frame_inc)

    frame_weather = pd.DataFrame(scenario.weather, columns=WEATHER_CHANNELS)
    frame_weather.insert(0, "timestamp", slot_stamps)
    paths["weather"] = _write(out_dir / "weather.csv", frame_weather, "%.3f")

    rows_graph = []
    length = scenario.config.segment_length_miles
    for i, seg in enumerate(scenario.segment_ids):
        for j in range(i - 1, -1, -1):
            rows_graph.append((seg, scenario.segment_ids[j], "up", f"{(i - j) * length:.3f}"))
        for j in range(i + 1, len(scenario.segment_ids)):
            rows_graph.append((seg, scenario.segment_ids[j], "down", f"{(j - i) * length:.3f}"))
    frame_graph = pd.DataFrame(rows_graph, columns=["segment_id", "neighbor_id", "direction", "distance_miles"])
    paths["graph"] = _write(out_dir / "graph.csv", frame_graph)

    frame_truth = pd.DataFrame(
        [
            (
                inc.segment_id,
                inc.start.isoformat(),
                inc.end.isoformat(),
                int(inc.reported),
                inc.report_start.isoformat() if inc.reported else "",
            )
            for inc in scenario.incidents
        ],
        columns=["segment_id", "true_start", "true_end", "reported", "report_start"],
    )
    paths["ground_truth"] = _write(out_dir / "ground_truth.csv", frame_truth)

    (out_dir / "scenario_config.json").write_text(json.dumps(asdict(scenario.config), indent=2, sort_keys=True))
    return paths


def _write(path: Path, frame: pd.DataFrame, float_format: str | None = None) -> Path:
    frame.to_csv(path, index=False, lineterminator="\n", float_format=float_format)
    return path
