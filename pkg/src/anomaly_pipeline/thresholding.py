"""Alert-threshold calibration on a dedicated tuning set.

A fixed 0.5 cutoff is a poor alert threshold on heavily imbalanced data, so
after every training epoch the threshold grid 0.01..0.99 is swept on the
tuning set and the best cutoff is scored once more on the validation set;
the epoch/threshold pair with the best validation score wins. Scores pool
all horizon steps, ties break toward the smaller threshold (higher recall),
and equal validation scores keep the earlier epoch.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, clone

from .detector import HorizonDetector
from .validation import as_float_array

TAU_GRID = np.arange(1, 100) / 100.0


def f_beta(precision: float, recall: float, beta: float = 1.0) -> float:
    """F-score weighting recall ``beta`` times as heavily as precision."""
    if not (0.0 <= precision <= 1.0 and 0.0 <= recall <= 1.0):
        raise ValueError("precision and recall must lie in [0, 1]")
    denom = beta * beta * precision + recall
    if denom == 0.0:
        return 0.0
    return (1.0 + beta * beta) * precision * recall / denom


def pooled_f_score(scores: np.ndarray, targets: np.ndarray, tau: float, beta: float = 1.0) -> float:
    """F-score over all horizon steps pooled, alerting where score >= tau."""
    scores = as_float_array(scores, "scores", allow_nan=False).ravel()
    targets = np.asarray(targets).ravel()
    preds = scores >= tau
    tp = int((preds & (targets == 1)).sum())
    fp = int((preds & (targets == 0)).sum())
    fn = int((~preds & (targets == 1)).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return f_beta(precision, recall, beta)


def sweep(scores: np.ndarray, targets: np.ndarray, beta: float = 1.0) -> tuple[float, float]:
    """Best threshold on the 0.01-step grid; the smallest wins ties."""
    targets = np.asarray(targets)
    if (targets == 1).sum() == 0:
        raise ValueError("tuning set has no positive labels; the sweep is undefined")
    best_tau, best_score = TAU_GRID[0], -1.0
    for tau in TAU_GRID:
        score = pooled_f_score(scores, targets, tau, beta)
        if score > best_score:
            best_tau, best_score = float(tau), score
    return best_tau, best_score


def select_epoch_and_threshold(
    history,
    horizon: int,
    X_tune,
    y_tune,
    X_val,
    y_val,
    beta: float = 1.0,
):
    """Pick the (epoch snapshot, threshold) pair with the best validation score.

    For every snapshot the threshold is swept on the tuning set and the
    winning threshold is scored once on the validation set; the first
    snapshot achieving the best validation score is kept. Returns
    (best_epoch, tau, trace) with trace rows (epoch, tau, f_tune, f_val).
    """
    from .detector import forward

    for name, y in (("tuning", y_tune), ("validation", y_val)):
        if (np.asarray(y) == 1).sum() == 0:
            raise ValueError(f"{name} set has no positive labels")
    best = (-1.0, None, None)
    trace = []
    for epoch, params in enumerate(history):
        scores_tune = forward(params, X_tune, horizon)
        tau, f_tune = sweep(scores_tune, y_tune, beta)
        scores_val = forward(params, X_val, horizon)
        f_val = pooled_f_score(scores_val, y_val, tau, beta)
        trace.append((epoch, tau, f_tune, f_val))
        if f_val > best[0]:
            best = (f_val, epoch, tau)
    return best[1], best[2], trace


class ThresholdedDetector(BaseEstimator):
    """Detector plus calibrated alert threshold, selected across epochs.

    ``fit`` trains the wrapped detector, then for every epoch snapshot
    sweeps the threshold on the tuning samples and scores the validation
    samples at that threshold; the snapshot/threshold pair with the best
    validation score is kept (first epoch on ties). ``selection_trace_``
    records (epoch, tau, f_tune, f_val) rows for audit.
    """

    def __init__(self, detector: HorizonDetector | None = None, beta: float = 1.0):
        self.detector = detector
        self.beta = beta

    def fit(self, X_train, y_train, X_tune, y_tune, X_val, y_val):
        base = self.detector if self.detector is not None else HorizonDetector()
        self.detector_ = clone(base).fit(X_train, y_train)
        self.best_epoch_, self.tau_, self.selection_trace_ = select_epoch_and_threshold(
            self.detector_.history_, self.detector_.horizon_,
            X_tune, y_tune, X_val, y_val, self.beta,
        )
        self.f_val_ = self.selection_trace_[self.best_epoch_][3]
        self.params_ = self.detector_.history_[self.best_epoch_]
        return self

    def predict_proba(self, X) -> np.ndarray:
        return self.detector_.predict_proba(X, epoch=self.best_epoch_)

    def predict(self, X) -> np.ndarray:
        """Binary per-step alerts at the calibrated threshold."""
        return (self.predict_proba(X) >= self.tau_).astype(np.int8)
