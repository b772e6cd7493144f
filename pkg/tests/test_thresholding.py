import numpy as np
import pytest

from anomaly_pipeline.detector import DetectorParams, HorizonDetector
from anomaly_pipeline.thresholding import (
    TAU_GRID,
    ThresholdedDetector,
    f_beta,
    pooled_f_score,
    select_epoch_and_threshold,
    sweep,
)


# --- F score ------------------------------------------------------------------

def test_f1_symmetric_point():
    assert f_beta(0.5, 0.5, beta=1.0) == pytest.approx(0.5)


def test_f_zero_denominator():
    assert f_beta(1.0, 0.0) == 0.0
    assert f_beta(0.0, 0.0) == 0.0


def test_f_beta_two_weighs_recall():
    assert f_beta(0.6, 0.9, beta=2.0) == pytest.approx(0.8181818181818182)


def test_f_beta_rejects_out_of_range():
    with pytest.raises(ValueError):
        f_beta(1.2, 0.5)


# --- threshold sweep -------------------------------------------------------------

def test_sweep_separated_scores_returns_smallest_perfect_tau():
    scores = np.array([[0.9, 0.95], [0.1, 0.05], [0.92, 0.9], [0.08, 0.1]])
    targets = np.array([[1, 1], [0, 0], [1, 1], [0, 0]])
    tau, score = sweep(scores, targets)
    assert score == pytest.approx(1.0)
    assert tau == pytest.approx(0.11)  # 0.10 still flags the 0.1-score negatives


def test_sweep_constant_scores_ties_to_smallest_tau():
    scores = np.full((6, 2), 0.5)
    targets = np.zeros((6, 2), dtype=int)
    targets[0] = 1
    tau, _ = sweep(scores, targets)
    assert tau == pytest.approx(0.01)


def test_sweep_requires_positives():
    with pytest.raises(ValueError, match="positive"):
        sweep(np.full((3, 2), 0.5), np.zeros((3, 2), dtype=int))


def brute_force_sweep(scores, targets, beta=1.0):
    best_tau, best = None, -1.0
    for tau in TAU_GRID:
        f = pooled_f_score(scores, targets, float(tau), beta)
        if f > best:
            best_tau, best = float(tau), f
    return best_tau, best


def test_sweep_equals_exhaustive_grid_search():
    rng = np.random.default_rng(21)
    for _ in range(20):
        scores = rng.random((30, 6))
        targets = (rng.random((30, 6)) < 0.3).astype(int)
        if targets.sum() == 0:
            targets[0, 0] = 1
        beta = float(rng.choice([0.5, 1.0, 2.0]))
        assert sweep(scores, targets, beta) == brute_force_sweep(scores, targets, beta)


def test_sweep_determinism():
    rng = np.random.default_rng(22)
    scores = rng.random((40, 6))
    targets = (rng.random((40, 6)) < 0.25).astype(int)
    targets[0, 0] = 1
    assert sweep(scores, targets) == sweep(scores, targets)


# --- epoch / threshold selection ----------------------------------------------------

def denoising_history(mixes):
    """Snapshots that mix a clean signal feature with a noise feature.

    Shrinking the noise weight epoch over epoch makes a genuinely improving
    model trajectory.
    """
    history = []
    for noise_weight in mixes:
        history.append(
            DetectorParams(
                w_enc=np.array([[1.0, noise_weight]]), b_enc=np.zeros(1),
                w_dec=np.array([[1.0, 0.0]]), b_dec=np.zeros(1),
                w_out=np.array([3.0]), b_out=0.0,
            )
        )
    return history


def noisy_signed_set(rng, n=80):
    y = (rng.random(n) < 0.35).astype(int)
    X = np.column_stack([2.0 * y - 1.0, rng.normal(size=n)])
    return X, np.column_stack([y, y])


def test_selection_improving_snapshots_pick_last_epoch():
    rng = np.random.default_rng(23)
    X_tune, y_tune = noisy_signed_set(rng)
    X_val, y_val = noisy_signed_set(rng)
    history = denoising_history([2.0, 1.2, 0.8, 0.5, 0.25])
    best_epoch, tau, trace = select_epoch_and_threshold(history, 2, X_tune, y_tune, X_val, y_val)
    f_vals = [row[3] for row in trace]
    assert all(b > a for a, b in zip(f_vals, f_vals[1:]))  # strictly improving run
    assert best_epoch == len(history) - 1
    assert tau in np.round(TAU_GRID, 2)


def test_selection_is_first_argmax_of_validation_score():
    rng = np.random.default_rng(24)
    X_tune, y_tune = noisy_signed_set(rng)
    X_val, y_val = noisy_signed_set(rng)
    mixes = [2.0, 0.8, 0.25]
    history = denoising_history(mixes) + denoising_history(mixes)  # duplicate block forces ties
    best_epoch, _, trace = select_epoch_and_threshold(history, 2, X_tune, y_tune, X_val, y_val)
    f_vals = np.array([row[3] for row in trace])
    assert f_vals[best_epoch] == f_vals.max()
    assert best_epoch == int(np.argmax(f_vals))  # argmax takes the first maximum
    assert best_epoch < len(mixes)


def test_selection_single_epoch():
    rng = np.random.default_rng(25)
    X_tune, y_tune = noisy_signed_set(rng)
    history = denoising_history([0.5])
    best_epoch, tau, trace = select_epoch_and_threshold(history, 2, X_tune, y_tune, X_tune, y_tune)
    assert best_epoch == 0
    assert len(trace) == 1


def test_selection_requires_positives_everywhere():
    rng = np.random.default_rng(26)
    X, y = noisy_signed_set(rng)
    with pytest.raises(ValueError, match="validation"):
        select_epoch_and_threshold(denoising_history([0.5, 0.2]), 2, X, y, X, np.zeros_like(y))


# --- estimator wrapper ----------------------------------------------------------------

def test_thresholded_detector_end_to_end():
    rng = np.random.default_rng(27)

    def make_set(n):
        y = (rng.random(n) < 0.3).astype(int)
        X = np.column_stack([2.0 * y - 1.0 + 0.3 * rng.normal(size=n), rng.normal(size=n)])
        return X, np.column_stack([y, y, y])

    X_train, y_train = make_set(200)
    X_tune, y_tune = make_set(60)
    X_val, y_val = make_set(60)
    base = HorizonDetector(hidden=6, lr=0.1, epochs=8, batch_size=32, seed=3)
    model = ThresholdedDetector(detector=base).fit(X_train, y_train, X_tune, y_tune, X_val, y_val)
    assert 0.01 <= model.tau_ <= 0.99
    assert model.best_epoch_ == int(np.argmax([row[3] for row in model.selection_trace_]))
    preds = model.predict(X_val)
    assert preds.shape == y_val.shape
    assert pooled_f_score(model.predict_proba(X_val), y_val, model.tau_) > 0.6
    # sklearn-style parameter introspection survives
    assert "detector" in model.get_params() and "beta" in model.get_params()
