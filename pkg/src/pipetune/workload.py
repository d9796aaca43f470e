"""Synthetic workload traces, history windows, and the SMAPE error metric.

Traces hold one arrival rate per second over an operational cycle.
Three synthetic regimes cover the usual experimental ground: steady
low, steady high, and a fluctuating pattern that swings between the
two.  A constant pattern and a CSV loader round things out.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum

import numpy as np

HISTORY_WINDOW_S = 120
PREDICTION_HORIZON_S = 20


class Pattern(str, Enum):
    STEADY_LOW = "steady_low"
    FLUCTUATING = "fluctuating"
    STEADY_HIGH = "steady_high"
    CONSTANT = "constant"
    FROM_FILE = "from_file"


@dataclass(frozen=True)
class WorkloadTrace:
    """Per-second arrival rates (requests/second) over one cycle."""

    rates: np.ndarray
    seed: int
    pattern: Pattern

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        if rates.ndim != 1 or rates.size == 0:
            raise ValueError("rates must be a nonempty 1-D sequence")
        if np.any(rates < 0):
            raise ValueError("rates must be nonnegative")
        rates.flags.writeable = False
        object.__setattr__(self, "rates", rates)

    def __len__(self) -> int:
        return len(self.rates)


# Desk-scale defaults: low regime around 20 req/s, high around 100.
DEFAULT_PARAMS: dict[Pattern, dict] = {
    Pattern.STEADY_LOW: {"mean": 20.0, "noise": 1.0},
    Pattern.STEADY_HIGH: {"mean": 100.0, "noise": 3.0},
    Pattern.FLUCTUATING: {
        "low": 20.0,
        "high": 100.0,
        "period_s": 300.0,
        "noise": 2.0,
        "waveform": "sine",
    },
    Pattern.CONSTANT: {"mean": 20.0, "noise": 0.0},
}


def generate_trace(
    pattern: Pattern | str,
    duration_s: int,
    seed: int = 0,
    params: dict | None = None,
) -> WorkloadTrace:
    """Build a trace of ``duration_s`` seconds; deterministic in (pattern, seed, params).

    Pattern parameters (missing keys fall back to desk-scale defaults):

    * steady_low / steady_high / constant: ``mean``, ``noise`` (Gaussian sd)
    * fluctuating: ``low``, ``high``, ``period_s``, ``noise``,
      ``waveform`` ("sine" or "square" for step-like swings)
    * from_file: ``path`` to a single-column CSV, one rate per second,
      optional ``rate`` header
    """
    pattern = Pattern(pattern)
    if duration_s < 1:
        raise ValueError(f"duration_s must be at least 1, got {duration_s}")

    if pattern is Pattern.FROM_FILE:
        if not params or "path" not in params:
            raise ValueError("from_file pattern needs params={'path': ...}")
        rates = load_rates_csv(params["path"])
        if len(rates) < duration_s:
            raise ValueError(
                f"trace file has {len(rates)} seconds, need {duration_s}"
            )
        return WorkloadTrace(rates=rates[:duration_s], seed=seed, pattern=pattern)

    p = dict(DEFAULT_PARAMS[pattern])
    if params:
        unknown = set(params) - set(p)
        if unknown:
            raise ValueError(f"unknown parameters for {pattern.value}: {sorted(unknown)}")
        p.update(params)

    rng = np.random.default_rng(seed)
    t = np.arange(duration_s, dtype=float)
    if pattern in (Pattern.STEADY_LOW, Pattern.STEADY_HIGH, Pattern.CONSTANT):
        base = np.full(duration_s, float(p["mean"]))
    else:
        low, high = float(p["low"]), float(p["high"])
        phase = 2.0 * np.pi * t / float(p["period_s"])
        if p["waveform"] == "square":
            swing = np.where(np.sin(phase) >= 0.0, 1.0, 0.0)
        elif p["waveform"] == "sine":
            swing = 0.5 * (1.0 + np.sin(phase))
        else:
            raise ValueError(f"unknown waveform {p['waveform']!r}")
        base = low + (high - low) * swing
    noise = float(p["noise"])
    if noise > 0:
        base = base + rng.normal(0.0, noise, size=duration_s)
    return WorkloadTrace(rates=np.maximum(base, 0.0), seed=seed, pattern=pattern)


def load_rates_csv(path) -> np.ndarray:
    """Read one rate per line from a single-column CSV, skipping a 'rate' header."""
    rates: list[float] = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or not row[0].strip():
                continue
            cell = row[0].strip()
            if cell.lower() == "rate":
                continue
            rates.append(float(cell))
    if not rates:
        raise ValueError(f"no rates found in {path}")
    return np.asarray(rates, dtype=float)


def history_window(
    trace: WorkloadTrace, t: int, width: int = HISTORY_WINDOW_S
) -> np.ndarray:
    """The last ``width`` per-second rates ending at second ``t`` inclusive.

    Seconds before the trace start are zero-filled, so the window
    always has exactly ``width`` entries.
    """
    if not 0 <= t < len(trace):
        raise ValueError(f"t={t} outside trace of length {len(trace)}")
    start = t - width + 1
    if start >= 0:
        return trace.rates[start : t + 1].copy()
    window = np.zeros(width)
    window[-(t + 1) :] = trace.rates[: t + 1]
    return window


def smape(predicted, actual) -> float:
    """Symmetric mean absolute percentage error, in percent (0..200).

    Terms where both values are zero contribute zero error.
    """
    p = np.asarray(predicted, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape or p.ndim != 1:
        raise ValueError(f"need equal-length 1-D sequences, got {p.shape} and {a.shape}")
    if p.size == 0:
        raise ValueError("sequences must be nonempty")
    denom = np.abs(p) + np.abs(a)
    terms = np.where(denom > 0, 2.0 * np.abs(p - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(100.0 * terms.mean())
