import numpy as np
import pytest

from anomaly_pipeline.evaluation import (
    AlarmEvent,
    ReportInterval,
    alert_stream,
    incident_metrics,
    pr_curve,
    reports_from_matrix,
    step_metrics,
)


# --- alerting rule -----------------------------------------------------------

def test_min_rule_alerts_when_all_horizons_clear():
    scores = np.array([[0.9, 0.8, 0.7, 0.6, 0.6, 0.6]])
    stream = alert_stream(scores, tau=0.56, anchors=np.array([10]), horizon=6)
    assert stream.flags[0]
    assert stream.min_scores[0] == pytest.approx(0.6)


def test_min_rule_one_low_horizon_blocks_alert():
    scores = np.array([[0.9, 0.8, 0.7, 0.6, 0.5, 0.6]])
    stream = alert_stream(scores, tau=0.56, anchors=np.array([10]), horizon=6)
    assert not stream.flags[0]


def test_flag_runs_become_events():
    scores = np.array([[0.1], [0.9], [0.9], [0.1], [0.9]])
    stream = alert_stream(scores, tau=0.5, anchors=np.arange(5), horizon=1)
    assert [(e.first_decision, e.last_decision) for e in stream.events] == [(1, 2), (4, 4)]


def test_runs_break_across_anchor_gaps():
    scores = np.full((4, 1), 0.9)
    anchors = np.array([5, 6, 30, 31])  # a day-boundary style gap
    stream = alert_stream(scores, tau=0.5, anchors=anchors, horizon=2)
    assert [(e.first_decision, e.last_decision) for e in stream.events] == [(5, 6), (30, 31)]


def test_event_coverage_extends_past_last_decision():
    event = AlarmEvent(first_decision=10, last_decision=12, horizon=6)
    assert event.coverage == (11, 18)
    assert event.covers_any(18, 25)
    assert not event.covers_any(19, 25)
    assert not event.covers_any(5, 10)


# --- step-level metrics ----------------------------------------------------------

def test_step_metrics_perfect():
    scores = np.array([[0.9, 0.1], [0.2, 0.8]])
    targets = np.array([[1, 0], [0, 1]])
    out = step_metrics(scores, targets, tau=0.5)
    for name in ("recall", "precision", "f1", "accuracy"):
        assert np.allclose(out[name], 1.0)


def test_step_metrics_all_negative_predictions():
    scores = np.full((4, 2), 0.1)
    targets = np.array([[1, 0], [0, 1], [1, 1], [0, 0]])
    out = step_metrics(scores, targets, tau=0.5)
    assert np.allclose(out["recall"], 0.0)
    assert np.allclose(out["precision"], 0.0)


def test_step_metrics_hand_counted_eight_slots():
    scores = np.array([[0.9], [0.8], [0.3], [0.7], [0.2], [0.9], [0.1], [0.6]])
    targets = np.array([[1], [0], [1], [1], [0], [0], [0], [1]])
    # at tau 0.5: preds = 1,1,0,1,0,1,0,1 -> TP=3 FP=2 FN=1 TN=2
    out = step_metrics(scores, targets, tau=0.5)
    assert out["recall"][0] == pytest.approx(3 / 4)
    assert out["precision"][0] == pytest.approx(3 / 5)
    assert out["f1"][0] == pytest.approx(2 * (3 / 5) * (3 / 4) / (3 / 5 + 3 / 4))
    assert out["accuracy"][0] == pytest.approx(5 / 8)


def test_recall_one_at_zero_threshold():
    rng = np.random.default_rng(31)
    scores = rng.random((50, 3))
    targets = (rng.random((50, 3)) < 0.4).astype(int)
    out = step_metrics(scores, targets, tau=0.0)
    assert np.allclose(out["recall"], 1.0)


# --- incident-level metrics -------------------------------------------------------

def hand_stream():
    """Four alarm events, two reports, hand-traced.

    E1 decisions [18, 22]: coverage 19..28, hits report R1 [20, 26],
       alarm at 18 is two slots (10 min) before the report start.
    E2 decisions [58, 59]: coverage 59..65, after R2 [50, 55]: no detection,
       coverage hits nothing -> false alarm.
    E3 decisions [70, 71]: coverage 71..77, anomaly cells at 72..73 -> excused.
    E4 decision [90]: coverage 91..96 -> false alarm.
    """
    events = [
        AlarmEvent(18, 22, 6),
        AlarmEvent(58, 59, 6),
        AlarmEvent(70, 71, 6),
        AlarmEvent(90, 90, 6),
    ]
    reports = [
        ReportInterval(start=20, end=26, significant=True),
        ReportInterval(start=50, end=55, significant=False),
    ]
    anomaly = np.zeros(120, dtype=np.int8)
    anomaly[19:29] = 1  # around R1
    anomaly[72:74] = 1  # unreported anomaly under E3
    return events, reports, anomaly


def test_incident_metrics_hand_traced():
    events, reports, anomaly = hand_stream()
    report = incident_metrics(events, reports, anomaly, minutes_per_slot=5.0)
    assert report.n_reports == 2
    assert report.n_detected == 1
    assert report.detection_rate == pytest.approx(0.5)
    assert report.mttd_minutes == pytest.approx(-10.0)  # alarm 2 slots before report start
    assert report.n_alarms == 4
    assert report.n_false_alarms == 2
    assert report.false_alarm_rate == pytest.approx(0.5)
    assert report.detection_rate_significant == pytest.approx(1.0)
    assert report.mttd_significant == pytest.approx(-10.0)
    assert report.n_report_coinciding + report.n_anomaly_only + report.n_false_alarms == report.n_alarms


def test_alarm_after_report_end_does_not_detect():
    events = [AlarmEvent(58, 59, 6)]
    reports = [ReportInterval(start=50, end=55)]
    out = incident_metrics(events, reports, np.zeros(100))
    assert out.n_detected == 0
    assert out.mttd_minutes is None


def test_anomaly_overlap_is_not_false_alarm():
    events = [AlarmEvent(70, 71, 6)]
    anomaly = np.zeros(100, dtype=np.int8)
    anomaly[72] = 1
    out = incident_metrics(events, [], anomaly)
    assert out.n_false_alarms == 0
    assert out.n_anomaly_only == 1
    assert out.false_alarm_rate == 0.0


def test_no_alarms_yields_null_far():
    out = incident_metrics([], [ReportInterval(0, 5)], np.zeros(50))
    assert out.false_alarm_rate is None
    assert out.n_detected == 0


def test_full_coverage_stream_has_dr_one_far_zero():
    rng = np.random.default_rng(33)
    reports = [ReportInterval(start=int(s), end=int(s) + 4) for s in rng.integers(10, 400, 8) * 2]
    events = [AlarmEvent(r.start - 2, r.end, 6) for r in reports]
    anomaly = np.zeros(1000, dtype=np.int8)
    out = incident_metrics(events, reports, anomaly)
    assert out.detection_rate == 1.0
    assert out.false_alarm_rate == 0.0


def test_event_partition_identity_random():
    rng = np.random.default_rng(34)
    for _ in range(20):
        events = []
        cursor = 0
        for _ in range(int(rng.integers(1, 12))):
            cursor += int(rng.integers(3, 30))
            events.append(AlarmEvent(cursor, cursor + int(rng.integers(0, 4)), 6))
            cursor = events[-1].last_decision
        reports = [
            ReportInterval(int(s), int(s) + int(rng.integers(1, 10)))
            for s in rng.integers(0, 400, rng.integers(0, 6))
        ]
        anomaly = (rng.random(600) < 0.05).astype(np.int8)
        out = incident_metrics(events, reports, anomaly)
        assert out.n_report_coinciding + out.n_anomaly_only + out.n_false_alarms == out.n_alarms


def test_reports_from_matrix_marks_significance():
    inc = np.zeros((3, 20), dtype=np.int8)
    inc[1, 4:8] = 1
    inc[2, 10:12] = 1
    sir = np.zeros_like(inc)
    sir[1, 4:8] = 1
    reports = reports_from_matrix(inc, sir, days=[1, 2])
    assert len(reports) == 2
    assert reports[0].start == 24 and reports[0].end == 27 and reports[0].significant
    assert reports[1].start == 50 and not reports[1].significant


# --- threshold curves -----------------------------------------------------------------

def test_pr_curve_shape_and_recall_monotonicity():
    rng = np.random.default_rng(35)
    scores = rng.random((200, 6))
    targets = (rng.random((200, 6)) < 0.2).astype(int)
    rows = pr_curve(scores, targets)
    assert len(rows) == 99 * 6
    for k in range(1, 7):
        recalls = [r["recall"] for r in rows if r["horizon"] == k]
        assert all(b <= a + 1e-12 for a, b in zip(recalls, recalls[1:]))
