"""Multi-horizon anomaly detector trained with weighted cross-entropy.

A deliberately small reference network: a one-layer tanh encoder reads the
flattened lookback block, and a single shared decoder cell rolls out the
horizon autoregressively,

    h      = tanh(W_e x + b_e)
    g_k    = tanh(W_d [h; y_{k-1}] + b_d)      k = 1..H, y_0 = 0
    yhat_k = sigmoid(w_o . g_k + b_o)

where y_{k-1} is the previous true label under teacher forcing (training)
and the previous predicted probability when self-fed (inference). Sharing
one decoder across horizons biases capacity toward the short horizons.

The loss is binary cross-entropy with an extra weight on anomaly targets,

    L = -mean[ w_ano * y * log(yhat) + (1 - y) * log(1 - yhat) ],

averaged over samples and horizon steps. Training is plain mini-batch
gradient descent with hand-written gradients; ``grad_check`` verifies them
against central finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .validation import as_float_array

PROB_EPS = 1e-7
CHECKPOINT_VERSION = 1


@dataclass
class DetectorParams:
    """All learnable parameters; hidden width d, input width m = lookback * F."""

    w_enc: np.ndarray   # (d, m)
    b_enc: np.ndarray   # (d,)
    w_dec: np.ndarray   # (d, d + 1)
    b_dec: np.ndarray   # (d,)
    w_out: np.ndarray   # (d,)
    b_out: float

    @property
    def hidden(self) -> int:
        return self.w_enc.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.w_enc.shape[1]

    def copy(self) -> "DetectorParams":
        return DetectorParams(
            self.w_enc.copy(), self.b_enc.copy(), self.w_dec.copy(),
            self.b_dec.copy(), self.w_out.copy(), float(self.b_out),
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            self.w_enc.ravel(), self.b_enc, self.w_dec.ravel(),
            self.b_dec, self.w_out, [self.b_out],
        ])

    @classmethod
    def from_vector(cls, vec: np.ndarray, n_inputs: int, hidden: int) -> "DetectorParams":
        sizes = [hidden * n_inputs, hidden, hidden * (hidden + 1), hidden, hidden, 1]
        parts = np.split(np.asarray(vec, dtype=float), np.cumsum(sizes)[:-1])
        return cls(
            w_enc=parts[0].reshape(hidden, n_inputs),
            b_enc=parts[1],
            w_dec=parts[2].reshape(hidden, hidden + 1),
            b_dec=parts[3],
            w_out=parts[4],
            b_out=float(parts[5][0]),
        )

    def check_finite(self) -> None:
        norms = {
            "w_enc": np.abs(self.w_enc).max(initial=0.0),
            "w_dec": np.abs(self.w_dec).max(initial=0.0),
            "w_out": np.abs(self.w_out).max(initial=0.0),
        }
        if not all(np.isfinite(v) for v in norms.values()) or not np.isfinite(self.b_out):
            raise FloatingPointError(f"non-finite parameters; max-abs per block: {norms}")


def init_params(rng: np.random.Generator, n_inputs: int, hidden: int) -> DetectorParams:
    """Uniform(-r, r) weights with r = sqrt(6 / (fan_in + fan_out)); zero biases."""

    def glorot(fan_in, fan_out, shape):
        r = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-r, r, size=shape)

    return DetectorParams(
        w_enc=glorot(n_inputs, hidden, (hidden, n_inputs)),
        b_enc=np.zeros(hidden),
        w_dec=glorot(hidden + 1, hidden, (hidden, hidden + 1)),
        b_dec=np.zeros(hidden),
        w_out=glorot(hidden, 1, hidden),
        b_out=0.0,
    )


def forward(
    params: DetectorParams,
    X: np.ndarray,
    horizon: int,
    teacher: np.ndarray | None = None,
) -> np.ndarray:
    """Per-step probabilities (N, horizon); teacher-forced when given."""
    probs, _ = _forward_cached(params, X, horizon, teacher)
    return probs


def _forward_cached(params, X, horizon, teacher):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if teacher is not None:
        teacher = np.atleast_2d(np.asarray(teacher, dtype=float))
        if teacher.shape != (n, horizon):
            raise ValueError(f"teacher shape {teacher.shape} != ({n}, {horizon})")
    a = X @ params.w_enc.T + params.b_enc
    h = np.tanh(a)
    prev = np.zeros(n)
    probs = np.empty((n, horizon))
    cache = {"X": X, "h": h, "u": [], "g": []}
    for k in range(horizon):
        u = np.column_stack([h, prev])
        z = u @ params.w_dec.T + params.b_dec
        g = np.tanh(z)
        o = g @ params.w_out + params.b_out
        p = 1.0 / (1.0 + np.exp(-o))
        if not np.isfinite(p).all():
            params.check_finite()
            raise FloatingPointError("non-finite activation in forward pass")
        probs[:, k] = p
        cache["u"].append(u)
        cache["g"].append(g)
        prev = teacher[:, k] if teacher is not None else p
    return probs, cache


def wbce(probs: np.ndarray, targets: np.ndarray, w_ano: float) -> float:
    """Class-weighted binary cross-entropy, mean over samples and steps."""
    probs = as_float_array(probs, "probs", allow_nan=False)
    targets = np.asarray(targets, dtype=float)
    if w_ano <= 0:
        raise ValueError("w_ano must be positive")
    p = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    return float(-np.mean(w_ano * targets * np.log(p) + (1.0 - targets) * np.log(1.0 - p)))


def wbce_gradients(
    params: DetectorParams,
    X: np.ndarray,
    Y: np.ndarray,
    w_ano: float,
    teacher_forcing: bool = True,
) -> tuple[float, DetectorParams]:
    """Loss and its analytic gradient for one batch.

    Self-fed mode backpropagates through the probability fed into the next
    decoder step; under teacher forcing that feedback is a constant.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n, horizon = Y.shape
    probs, cache = _forward_cached(params, X, horizon, Y if teacher_forcing else None)
    loss = wbce(probs, Y, w_ano)

    d = params.hidden
    scale = 1.0 / (n * horizon)
    g_w_enc = np.zeros_like(params.w_enc)
    g_b_enc = np.zeros_like(params.b_enc)
    g_w_dec = np.zeros_like(params.w_dec)
    g_b_dec = np.zeros_like(params.b_dec)
    g_w_out = np.zeros_like(params.w_out)
    g_b_out = 0.0
    d_h = np.zeros((n, d))
    carry = np.zeros(n)  # dL/d(prob fed forward), self-fed mode only
    for k in range(horizon - 1, -1, -1):
        p, y = probs[:, k], Y[:, k]
        d_o = scale * ((1.0 - y) * p - w_ano * y * (1.0 - p))
        if not teacher_forcing and k < horizon - 1:
            d_o = d_o + carry * p * (1.0 - p)
        g, u = cache["g"][k], cache["u"][k]
        g_w_out += g.T @ d_o
        g_b_out += d_o.sum()
        d_z = (d_o[:, None] * params.w_out[None, :]) * (1.0 - g * g)
        g_w_dec += d_z.T @ u
        g_b_dec += d_z.sum(axis=0)
        d_u = d_z @ params.w_dec
        d_h += d_u[:, :d]
        carry = d_u[:, d]
    d_a = d_h * (1.0 - cache["h"] ** 2)
    g_w_enc += d_a.T @ X
    g_b_enc += d_a.sum(axis=0)

    grads = DetectorParams(g_w_enc, g_b_enc, g_w_dec, g_b_dec, g_w_out, float(g_b_out))
    return loss, grads


def grad_check(
    params: DetectorParams,
    X: np.ndarray,
    Y: np.ndarray,
    w_ano: float,
    teacher_forcing: bool = True,
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    horizon = Y.shape[1]
    _, grads = wbce_gradients(params, X, Y, w_ano, teacher_forcing)
    analytic = grads.to_vector()
    vec = params.to_vector()
    numeric = np.empty_like(vec)
    for i in range(vec.size):
        bumped = vec.copy()
        bumped[i] = vec[i] + step
        up = _loss_at(bumped, params, X, Y, w_ano, teacher_forcing, horizon)
        bumped[i] = vec[i] - step
        down = _loss_at(bumped, params, X, Y, w_ano, teacher_forcing, horizon)
        numeric[i] = (up - down) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _loss_at(vec, like, X, Y, w_ano, teacher_forcing, horizon):
    p = DetectorParams.from_vector(vec, like.n_inputs, like.hidden)
    probs = forward(p, X, horizon, teacher=Y if teacher_forcing else None)
    return wbce(probs, Y, w_ano)


class HorizonDetector(BaseEstimator):
    """Sklearn-style estimator around the encoder/decoder network.

    ``fit`` keeps one parameter snapshot per epoch (``history_``) so that a
    threshold calibrator can select the best epoch afterwards. With
    ``w_ano=None`` the anomaly weight defaults to the zero/one target ratio
    of the training set. Fully deterministic for a fixed seed.
    """

    def __init__(
        self,
        hidden: int = 32,
        lr: float = 0.01,
        epochs: int = 30,
        batch_size: int = 64,
        w_ano: float | None = None,
        teacher_forcing: bool = True,
        seed: int = 0,
    ):
        self.hidden = hidden
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.w_ano = w_ano
        self.teacher_forcing = teacher_forcing
        self.seed = seed

    def fit(self, X, Y):
        X = as_float_array(X, "X", ndim=2, allow_nan=False)
        Y = np.atleast_2d(np.asarray(Y))
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y disagree on the number of samples")
        if X.shape[0] == 0:
            raise ValueError("training set is empty")
        positives = int((Y == 1).sum())
        if self.w_ano is None and positives == 0:
            raise ValueError("no positive step-targets in the training set; w_ano is undefined")
        self.w_ano_ = float(self.w_ano) if self.w_ano is not None else (Y == 0).sum() / positives
        self.horizon_ = Y.shape[1]
        self.n_features_in_ = X.shape[1]

        rng = np.random.default_rng(self.seed)
        params = init_params(rng, X.shape[1], self.hidden)
        Yf = Y.astype(float)
        self.history_: list[DetectorParams] = []
        self.loss_curve_: list[float] = []
        n = X.shape[0]
        for _ in range(self.epochs):
            order = rng.permutation(n)
            epoch_loss = 0.0
            for lo in range(0, n, self.batch_size):
                rows = order[lo:lo + self.batch_size]
                loss, grads = wbce_gradients(
                    params, X[rows], Yf[rows], self.w_ano_, self.teacher_forcing
                )
                epoch_loss += loss * rows.size
                params.w_enc -= self.lr * grads.w_enc
                params.b_enc -= self.lr * grads.b_enc
                params.w_dec -= self.lr * grads.w_dec
                params.b_dec -= self.lr * grads.b_dec
                params.w_out -= self.lr * grads.w_out
                params.b_out -= self.lr * grads.b_out
            params.check_finite()
            self.history_.append(params.copy())
            self.loss_curve_.append(epoch_loss / n)
        self.params_ = self.history_[-1]
        return self

    def predict_proba(self, X, epoch: int | None = None) -> np.ndarray:
        """Self-fed per-step probabilities from the final (or given) epoch."""
        params = self.params_ if epoch is None else self.history_[epoch]
        return forward(params, np.asarray(X, dtype=float), self.horizon_)


def save_checkpoint(path: Path, params: DetectorParams, meta: dict | None = None) -> None:
    """Exact round-trip parameter dump with a shape header and config echo."""
    np.savez(
        path,
        version=np.array([CHECKPOINT_VERSION]),
        shape=np.array([params.hidden, params.n_inputs]),
        w_enc=params.w_enc, b_enc=params.b_enc,
        w_dec=params.w_dec, b_dec=params.b_dec,
        w_out=params.w_out, b_out=np.array([params.b_out]),
        meta=np.array([json.dumps(meta or {}, sort_keys=True)]),
    )


def load_checkpoint(path: Path) -> tuple[DetectorParams, dict]:
    with np.load(path, allow_pickle=False) as blob:
        version = int(blob["version"][0])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        params = DetectorParams(
            w_enc=blob["w_enc"], b_enc=blob["b_enc"],
            w_dec=blob["w_dec"], b_dec=blob["b_dec"],
            w_out=blob["w_out"], b_out=float(blob["b_out"][0]),
        )
        meta = json.loads(str(blob["meta"][0]))
    return params, meta
