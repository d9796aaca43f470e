"""Peak-load predictor: 120 s of per-second rates in, next-20 s max out.

A 25-unit LSTM reads the normalized history and a one-unit affine
head emits the predicted peak.  Training is plain minibatch MSE
regression with Adam on windows cut from synthetic traces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Affine, LSTM, AdamState, adam_update, load_params_into, save_params
from .workload import (
    HISTORY_WINDOW_S,
    PREDICTION_HORIZON_S,
    WorkloadTrace,
    history_window,
    smape,
)

MODEL_KIND = "peak-predictor"
HIDDEN_UNITS = 25


@dataclass(frozen=True)
class PredictorHyper:
    learning_rate: float = 0.01
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    val_fraction: float = 0.2
    window_stride: int = 7

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.window_stride < 1:
            raise ValueError("epochs, batch_size, window_stride must be positive")


@dataclass(frozen=True)
class PredictorReport:
    train_loss: float
    val_loss: float
    val_smape: float
    num_train: int
    num_val: int


class PredictorModel:
    """LSTM(1→25) plus a 25→1 head; ``input_scale`` normalizes rates."""

    def __init__(self, seed: int = 0, hidden: int = HIDDEN_UNITS):
        rng = np.random.default_rng(seed)
        self.hidden = hidden
        self.lstm = LSTM(1, hidden, rng, name="lstm")
        self.head = Affine(hidden, 1, rng, name="head")
        self.input_scale = 1.0

    def params(self):
        return self.lstm.params() + self.head.params()

    def forward_normalized(self, windows: np.ndarray) -> np.ndarray:
        """Normalized predictions for a (batch, 120) array of normalized rates."""
        h = self.lstm.forward(windows[:, :, None])
        return self.head.forward(h)[:, 0]

    def backward(self, dpred: np.ndarray):
        dh = self.head.backward(dpred[:, None])
        self.lstm.backward(dh)

    def save(self, path):
        save_params(
            path,
            self.params(),
            kind=MODEL_KIND,
            meta={
                "input_scale": self.input_scale,
                "hidden": self.hidden,
                "window_s": HISTORY_WINDOW_S,
                "horizon_s": PREDICTION_HORIZON_S,
            },
        )

    @classmethod
    def load(cls, path) -> "PredictorModel":
        model = cls()
        meta = load_params_into(path, MODEL_KIND, model.params())
        model.input_scale = float(meta["input_scale"])
        return model


def make_windows(
    traces: list[WorkloadTrace],
    stride: int = 1,
    horizon: int = PREDICTION_HORIZON_S,
) -> tuple[np.ndarray, np.ndarray]:
    """(history, peak) training pairs: window ending at t, max of rates[t+1..t+horizon]."""
    xs, ys = [], []
    for trace in traces:
        last = len(trace) - horizon - 1
        for t in range(0, last + 1, stride):
            xs.append(history_window(trace, t))
            ys.append(trace.rates[t + 1 : t + 1 + horizon].max())
    if not xs:
        raise ValueError("traces too short to cut any (history, peak) pairs")
    return np.asarray(xs), np.asarray(ys)


def train_predictor(
    traces: list[WorkloadTrace], hyper: PredictorHyper | None = None
) -> tuple[PredictorModel, PredictorReport]:
    """Fit the predictor on windows from ``traces``; returns model and final report."""
    hyper = hyper or PredictorHyper()
    x, y = make_windows(traces, stride=hyper.window_stride)

    rng = np.random.default_rng(hyper.seed)
    order = rng.permutation(len(x))
    num_val = max(1, int(round(len(x) * hyper.val_fraction)))
    if num_val >= len(x):
        raise ValueError("not enough windows for a train/validation split")
    val_idx, train_idx = order[:num_val], order[num_val:]

    scale = float(max(trace.rates.max() for trace in traces))
    scale = max(scale, 1e-9)
    xn, yn = x / scale, y / scale

    model = PredictorModel(seed=hyper.seed)
    model.input_scale = scale
    opt = AdamState(learning_rate=hyper.learning_rate)

    train_loss = float("nan")
    for _ in range(hyper.epochs):
        epoch_order = rng.permutation(train_idx)
        losses = []
        for start in range(0, len(epoch_order), hyper.batch_size):
            batch = epoch_order[start : start + hyper.batch_size]
            pred = model.forward_normalized(xn[batch])
            err = pred - yn[batch]
            losses.append(float((err**2).mean()))
            model.backward(2.0 * err / len(batch))
            adam_update(opt, model.params())
        train_loss = float(np.mean(losses))

    val_pred = model.forward_normalized(xn[val_idx])
    val_loss = float(((val_pred - yn[val_idx]) ** 2).mean())
    val_rates = np.maximum(val_pred * scale, 0.0)
    report = PredictorReport(
        train_loss=train_loss,
        val_loss=val_loss,
        val_smape=smape(val_rates, y[val_idx]),
        num_train=len(train_idx),
        num_val=num_val,
    )
    return model, report


def predict_peak(model: PredictorModel, history) -> float:
    """Predicted max arrival rate over the next 20 s, clamped at 0."""
    h = np.asarray(history, dtype=float)
    if h.shape != (HISTORY_WINDOW_S,):
        raise ValueError(f"history must have length {HISTORY_WINDOW_S}, got shape {h.shape}")
    scale = max(model.input_scale, 1e-9)
    raw = model.forward_normalized(h[None, :] / scale)[0]
    return float(max(raw * scale, 0.0))
