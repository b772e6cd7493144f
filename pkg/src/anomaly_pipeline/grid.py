"""Uniform time grid shared by every series in a study.

All speed, density, weather and label series are indexed by 5-minute slots.
A slot is addressed either by a flat index into the study span or by a
(day, slot-of-day) pair; the two are a bijection. Day rows are calendar
days, so the grid start must fall on a midnight.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, time, timedelta

MINUTES_PER_DAY = 24 * 60


@dataclass(frozen=True)
class TimeGrid:
    """Discrete study clock: ``n_days`` calendar days of fixed-width slots."""

    start: datetime
    n_days: int
    step_minutes: int = 5

    def __post_init__(self):
        if self.step_minutes <= 0 or MINUTES_PER_DAY % self.step_minutes != 0:
            raise ValueError(f"step_minutes={self.step_minutes} must divide 24h")
        if self.n_days <= 0:
            raise ValueError("n_days must be positive")
        if self.start.time() != time(0, 0) or self.start.tzinfo is not None:
            raise ValueError("grid start must be a tz-free local midnight")

    @property
    def slots_per_day(self) -> int:
        return MINUTES_PER_DAY // self.step_minutes

    @property
    def n_slots(self) -> int:
        return self.n_days * self.slots_per_day

    @property
    def end(self) -> datetime:
        return self.start + timedelta(days=self.n_days)

    def index(self, day: int, slot: int) -> int:
        if not (0 <= day < self.n_days and 0 <= slot < self.slots_per_day):
            raise IndexError(f"(day={day}, slot={slot}) outside grid")
        return day * self.slots_per_day + slot

    def day_slot(self, index: int) -> tuple[int, int]:
        if not (0 <= index < self.n_slots):
            raise IndexError(f"slot index {index} outside grid")
        return divmod(index, self.slots_per_day)

    def timestamp(self, day: int, slot: int) -> datetime:
        return self.start + timedelta(minutes=int(day * self.slots_per_day + slot) * self.step_minutes)

    def date_of_day(self, day: int) -> date:
        return (self.start + timedelta(days=int(day))).date()

    def weekday(self, day: int) -> int:
        """Monday=0 .. Sunday=6 for day row ``day``."""
        return self.date_of_day(day).weekday()

    def floor_index(self, ts: datetime) -> int:
        """Flat index of the slot containing ``ts`` (no bounds check)."""
        delta = ts - self.start
        return int(delta.total_seconds() // (self.step_minutes * 60))

    def ceil_index(self, ts: datetime) -> int:
        """Flat index of the first slot boundary at or after ``ts``."""
        seconds = (ts - self.start).total_seconds()
        step = self.step_minutes * 60
        return int(-(-seconds // step))

    def exact_index(self, ts: datetime) -> int:
        """Flat index of a timestamp that must sit on a slot boundary."""
        idx = self.floor_index(ts)
        if not (0 <= idx < self.n_slots) or self.timestamp(*self.day_slot(idx)) != ts:
            raise ValueError(f"timestamp {ts} is not on the grid")
        return idx

    def slot_of_time(self, hhmm: str) -> int:
        """Slot-of-day for a 'HH:MM' wall-clock string on a slot boundary."""
        hh, mm = hhmm.split(":")
        minutes = int(hh) * 60 + int(mm)
        if minutes % self.step_minutes != 0:
            raise ValueError(f"{hhmm} is not aligned to {self.step_minutes}-minute slots")
        return minutes // self.step_minutes
