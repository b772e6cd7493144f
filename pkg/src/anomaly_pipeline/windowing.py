"""Chronological day splits and leakage-safe sliding windows.

Days are split 7:2:1 (train : test : tuning+validation) in chronological
order, and the tail block is halved into a threshold-tuning set and a
validation set. Windowing happens strictly inside each partition: because
partitions are whole days and no window crosses a day boundary, no sample
span can straddle a partition edge, which is what rules out train-test
contamination by construction.

Each sample pairs a lookback feature block with the next ``horizon`` label
slots; the anchor is the last input slot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeatureFrame
from .grid import TimeGrid


@dataclass(frozen=True)
class SplitSpec:
    """Day-index partitions, chronological and disjoint."""

    train_days: np.ndarray
    test_days: np.ndarray
    tune_days: np.ndarray
    val_days: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {
            "train": self.train_days,
            "test": self.test_days,
            "tune": self.tune_days,
            "val": self.val_days,
        }


@dataclass
class WindowSet:
    """Materialized samples of one partition."""

    X: np.ndarray          # (N, lookback * F)
    y: np.ndarray          # (N, horizon)
    anchors: np.ndarray    # (N, 2) day row, slot-of-day of the last input slot
    lookback: int
    horizon: int
    grid: TimeGrid
    skipped: int = 0       # anchors dropped for missing seasonal history

    def __len__(self) -> int:
        return self.X.shape[0]

    def spans(self) -> np.ndarray:
        """(N, 2) inclusive flat-slot span [input start, target end] per sample."""
        flat = self.anchors[:, 0] * self.grid.slots_per_day + self.anchors[:, 1]
        return np.column_stack([flat - self.lookback + 1, flat + self.horizon])


def split_days(grid: TimeGrid, ratios: tuple[float, float, float] = (7, 2, 1)) -> SplitSpec:
    """Chronological 7:2:1 split; the 1-part halves into tuning then validation."""
    n = grid.n_days
    if n < 10:
        raise ValueError(f"need at least 10 days to split, got {n}")
    total = sum(ratios)
    n_train = int(n * ratios[0] / total)
    n_test = int(n * ratios[1] / total)
    n_tail = n - n_train - n_test
    n_tune = -(-n_tail // 2)  # ceil: tuning gets the extra day
    n_val = n_tail - n_tune
    if n_tune == 0 or n_val == 0:
        raise ValueError(
            f"{n} days leave an empty tuning or validation block "
            f"(tail={n_tail}); extend the study span"
        )
    days = np.arange(n)
    return SplitSpec(
        train_days=days[:n_train],
        test_days=days[n_train:n_train + n_test],
        tune_days=days[n_train + n_test:n_train + n_test + n_tune],
        val_days=days[n_train + n_test + n_tune:],
    )


def make_windows(
    frame: FeatureFrame,
    labels: np.ndarray,
    days: np.ndarray,
    lookback: int = 12,
    horizon: int = 6,
    stride: int = 1,
    study_start: str = "06:00",
    study_end: str = "20:30",
    weekdays_only: bool = True,
) -> WindowSet:
    """Sliding-window samples over the study window of each partition day.

    Input and target slots both stay inside [study_start, study_end], so a
    day with S study slots yields S - lookback - horizon + 1 samples at
    stride 1. Anchors whose input span touches a slot without seasonal
    history are skipped and counted.
    """
    grid = frame.grid
    labels = np.asarray(labels)
    if labels.shape != (grid.n_days, grid.slots_per_day):
        raise ValueError("labels must be a (n_days, slots_per_day) matrix")
    if lookback < 1 or horizon < 1 or stride < 1:
        raise ValueError("lookback, horizon and stride must be positive")
    first_slot = grid.slot_of_time(study_start)
    last_slot = grid.slot_of_time(study_end)
    if last_slot - first_slot + 1 < lookback + horizon:
        raise ValueError("study window too short for the requested lookback + horizon")

    offsets = np.arange(-lookback + 1, 1)
    X_parts, y_parts, anchor_parts = [], [], []
    skipped = 0
    for day in np.asarray(days, dtype=int):
        if weekdays_only and grid.weekday(day) >= 5:
            continue
        anchors = np.arange(first_slot + lookback - 1, last_slot - horizon + 1, stride)
        if anchors.size == 0:
            continue
        base = day * grid.slots_per_day
        input_rows = base + anchors[:, None] + offsets[None, :]      # (A, lookback)
        ok = frame.srs_available[input_rows].all(axis=1)
        skipped += int((~ok).sum())
        anchors = anchors[ok]
        if anchors.size == 0:
            continue
        input_rows = input_rows[ok]
        X_parts.append(frame.data[input_rows].reshape(anchors.size, -1))
        target_cols = anchors[:, None] + np.arange(1, horizon + 1)[None, :]
        y_parts.append(labels[day, target_cols])
        anchor_parts.append(np.column_stack([np.full(anchors.size, day), anchors]))

    width = lookback * frame.width
    if X_parts:
        X = np.vstack(X_parts)
        y = np.vstack(y_parts).astype(np.int8)
        anchors_all = np.vstack(anchor_parts)
    else:
        X = np.empty((0, width))
        y = np.empty((0, horizon), dtype=np.int8)
        anchors_all = np.empty((0, 2), dtype=int)
    return WindowSet(
        X=X, y=y, anchors=anchors_all, lookback=lookback, horizon=horizon, grid=grid, skipped=skipped
    )


def contamination_check(a: WindowSet, b: WindowSet, max_pairs: int = 1000) -> list[tuple[int, int]]:
    """Pairs of samples (one from each set) whose slot spans overlap.

    Splitting before windowing guarantees an empty result; windowing before
    splitting does not. Diagnostic only: reporting caps at ``max_pairs``.
    """
    if len(a) == 0 or len(b) == 0:
        return []
    spans_a, spans_b = a.spans(), b.spans()
    covered_a = _coverage(spans_a, a.grid.n_slots)
    covered_b = _coverage(spans_b, b.grid.n_slots)
    shared = covered_a & covered_b
    if not shared.any():
        return []
    suspects_a = np.flatnonzero(_touches(spans_a, shared))
    suspects_b = np.flatnonzero(_touches(spans_b, shared))
    violations: list[tuple[int, int]] = []
    for i in suspects_a:
        lo, hi = spans_a[i]
        hits = suspects_b[(spans_b[suspects_b, 0] <= hi) & (spans_b[suspects_b, 1] >= lo)]
        for j in hits:
            violations.append((int(i), int(j)))
            if len(violations) >= max_pairs:
                return violations
    return violations


def _coverage(spans: np.ndarray, n_slots: int) -> np.ndarray:
    delta = np.zeros(n_slots + 1, dtype=int)
    np.add.at(delta, spans[:, 0], 1)
    np.add.at(delta, spans[:, 1] + 1, -1)
    return np.cumsum(delta[:-1]) > 0


def _touches(spans: np.ndarray, shared: np.ndarray) -> np.ndarray:
    prefix = np.concatenate(([0], np.cumsum(shared)))
    return prefix[spans[:, 1] + 1] - prefix[spans[:, 0]] > 0
