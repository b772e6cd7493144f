"""Alert events from horizon scores and incident-level evaluation.

A decision at slot a scores the next H slots; the conservative alerting
rule triggers only when the minimum of the H scores clears the threshold.
Maximal runs of consecutive alerting decisions form alarm events. An event
with decisions [a, b] asserts anomaly over slots (a, b + H], its coverage;
the alarm itself fires at decision time a.

Incident-level metrics against report intervals:

* a report is detected when any event's coverage intersects it; the time to
  detection is the first decision slot of the earliest such event minus the
  report start, in minutes -- negative means the alarm preceded the report;
* an alarm event is false only when its coverage matches neither a report
  interval nor any anomaly-labeled cell, so alarms on real but unreported
  anomalies are not penalized;
* the (S) variants restrict to reports the label-denoising step found
  significant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .labeling import episodes
from .thresholding import TAU_GRID
from .validation import as_float_array

STEP_METRIC_NAMES = ["recall", "precision", "f1", "accuracy"]


@dataclass(frozen=True)
class AlarmEvent:
    """Maximal run of alerting decisions, in flat slot indices."""

    first_decision: int
    last_decision: int
    horizon: int

    @property
    def coverage(self) -> tuple[int, int]:
        """Inclusive slot interval the event asserts anomaly over."""
        return self.first_decision + 1, self.last_decision + self.horizon

    def covers_any(self, lo: int, hi: int) -> bool:
        c_lo, c_hi = self.coverage
        return c_lo <= hi and lo <= c_hi


@dataclass
class AlertStream:
    anchors: np.ndarray      # (N,) flat decision-slot indices, strictly increasing
    min_scores: np.ndarray   # (N,)
    flags: np.ndarray        # (N,) bool
    events: list[AlarmEvent] = field(default_factory=list)


@dataclass
class ReportInterval:
    """Rasterized report episode: inclusive flat slot interval."""

    start: int
    end: int
    significant: bool = False


@dataclass
class EvalReport:
    detection_rate: float | None
    mttd_minutes: float | None
    false_alarm_rate: float | None
    detection_rate_significant: float | None
    mttd_significant: float | None
    n_reports: int
    n_significant: int
    n_detected: int
    n_detected_significant: int
    n_alarms: int
    n_false_alarms: int
    n_report_coinciding: int
    n_anomaly_only: int
    ttd_sum_minutes: float
    ttd_sum_significant: float


def alert_stream(scores: np.ndarray, tau: float, anchors: np.ndarray, horizon: int) -> AlertStream:
    """Min-of-horizons alerting plus maximal-run event extraction.

    Runs break wherever consecutive decision slots are not adjacent, so an
    event never spans a gap in the decision sequence (e.g. a day boundary).
    """
    scores = as_float_array(scores, "scores", ndim=2, allow_nan=False)
    anchors = np.asarray(anchors, dtype=int)
    if scores.shape[0] != anchors.shape[0]:
        raise ValueError("scores and anchors disagree on the number of decisions")
    if anchors.size > 1 and (np.diff(anchors) <= 0).any():
        raise ValueError("decision anchors must be strictly increasing")
    mins = scores.min(axis=1)
    flags = mins >= tau
    events: list[AlarmEvent] = []
    run_start = None
    prev = None
    for i in range(anchors.size):
        if flags[i]:
            if run_start is None or anchors[i] != prev + 1:
                if run_start is not None:
                    events.append(AlarmEvent(run_start, prev, horizon))
                run_start = int(anchors[i])
            prev = int(anchors[i])
        elif run_start is not None:
            events.append(AlarmEvent(run_start, prev, horizon))
            run_start = None
    if run_start is not None:
        events.append(AlarmEvent(run_start, prev, horizon))
    return AlertStream(anchors=anchors, min_scores=mins, flags=flags, events=events)


def step_metrics(scores: np.ndarray, targets: np.ndarray, tau: float) -> dict[str, np.ndarray]:
    """Confusion-matrix metrics per horizon step; empty cells yield 0."""
    scores = as_float_array(scores, "scores", ndim=2, allow_nan=False)
    targets = np.asarray(targets)
    preds = scores >= tau
    pos = targets == 1
    tp = (preds & pos).sum(axis=0).astype(float)
    fp = (preds & ~pos).sum(axis=0).astype(float)
    fn = (~preds & pos).sum(axis=0).astype(float)
    tn = (~preds & ~pos).sum(axis=0).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
        accuracy = (tp + tn) / np.maximum(tp + tn + fp + fn, 1.0)
    return {"recall": recall, "precision": precision, "f1": f1, "accuracy": accuracy}


def incident_metrics(
    events: list[AlarmEvent],
    reports: list[ReportInterval],
    anomaly_cells: np.ndarray,
    minutes_per_slot: float = 5.0,
) -> EvalReport:
    """Detection rate, mean time to detection and false alarm rate.

    ``anomaly_cells`` is the flat binary label series used to excuse alarms
    that coincide with labeled (possibly unreported) anomalies.
    """
    anomaly_cells = np.asarray(anomaly_cells).reshape(-1)
    detected: list[tuple[ReportInterval, int]] = []
    for report in reports:
        hits = [ev for ev in events if ev.covers_any(report.start, report.end)]
        if hits:
            earliest = min(hits, key=lambda ev: ev.first_decision)
            detected.append((report, earliest.first_decision))

    n_reports = len(reports)
    n_sig = sum(r.significant for r in reports)
    n_detected = len(detected)
    det_sig = [(r, t) for r, t in detected if r.significant]
    ttd = [(t_alarm - r.start) * minutes_per_slot for r, t_alarm in detected]
    ttd_sig = [(t_alarm - r.start) * minutes_per_slot for r, t_alarm in det_sig]

    n_report_coinciding = 0
    n_anomaly_only = 0
    n_false = 0
    for ev in events:
        lo, hi = ev.coverage
        if any(ev.covers_any(r.start, r.end) for r in reports):
            n_report_coinciding += 1
        elif anomaly_cells[max(lo, 0):hi + 1].any():
            n_anomaly_only += 1
        else:
            n_false += 1

    n_events = len(events)
    return EvalReport(
        detection_rate=n_detected / n_reports if n_reports else None,
        mttd_minutes=float(np.mean(ttd)) if ttd else None,
        false_alarm_rate=n_false / n_events if n_events else None,
        detection_rate_significant=len(det_sig) / n_sig if n_sig else None,
        mttd_significant=float(np.mean(ttd_sig)) if ttd_sig else None,
        n_reports=n_reports,
        n_significant=n_sig,
        n_detected=n_detected,
        n_detected_significant=len(det_sig),
        n_alarms=n_events,
        n_false_alarms=n_false,
        n_report_coinciding=n_report_coinciding,
        n_anomaly_only=n_anomaly_only,
        ttd_sum_minutes=float(np.sum(ttd)) if ttd else 0.0,
        ttd_sum_significant=float(np.sum(ttd_sig)) if ttd_sig else 0.0,
    )


def reports_from_matrix(inc: np.ndarray, sir: np.ndarray, days: np.ndarray) -> list[ReportInterval]:
    """Report episodes of the given day rows as flat-slot intervals.

    Significance comes from the denoised keep-mask: an episode is
    significant when the denoising step retained it.
    """
    inc = np.asarray(inc)
    sir = np.asarray(sir)
    spd = inc.shape[1]
    out: list[ReportInterval] = []
    for day in np.asarray(days, dtype=int):
        for start, stop in episodes(inc[day]):
            out.append(
                ReportInterval(
                    start=day * spd + start,
                    end=day * spd + stop - 1,
                    significant=bool(sir[day, start:stop].any()),
                )
            )
    return out


def pr_curve(scores: np.ndarray, targets: np.ndarray) -> list[dict]:
    """Step metrics at every grid threshold, one row per (tau, horizon)."""
    rows = []
    for tau in TAU_GRID:
        metrics = step_metrics(scores, targets, float(tau))
        for k in range(scores.shape[1]):
            rows.append(
                {
                    "tau": float(tau),
                    "horizon": k + 1,
                    **{name: float(metrics[name][k]) for name in STEP_METRIC_NAMES},
                }
            )
    return rows
