"""Train the LSTM peak-load predictor and show its held-out accuracy.

Fits on sinusoid, constant, and square-wave traces, then reports
SMAPE on freshly seeded traces from the same families and prints a
few predicted-vs-actual peaks from the held-out sinusoid.
"""

import numpy as np

from pipetune.predictor import PredictorHyper, make_windows, predict_peak, train_predictor
from pipetune.workload import Pattern, generate_trace, smape


def family_traces(seed0):
    sine = {"low": 20.0, "high": 100.0, "period_s": 300.0, "noise": 2.0}
    square = {"low": 20.0, "high": 100.0, "period_s": 200.0, "noise": 1.0, "waveform": "square"}
    out = []
    for k in range(3):
        out.append(("sine", generate_trace(Pattern.FLUCTUATING, 1200, seed=seed0 + k, params=sine)))
        out.append(
            ("constant", generate_trace(Pattern.CONSTANT, 1200, seed=seed0 + k, params={"mean": 30.0 + 30.0 * k, "noise": 1.0}))
        )
        out.append(("square", generate_trace(Pattern.FLUCTUATING, 1200, seed=seed0 + k, params=square)))
    return out


train = [trace for _, trace in family_traces(0)]
print(f"training on {len(train)} traces (sine / constant / square families)...")
model, report = train_predictor(train, PredictorHyper(epochs=40, seed=0))
print(f"validation SMAPE after training: {report.val_smape:.2f}%")

print()
print("held-out accuracy (new seeds, same families):")
for family, trace in family_traces(100)[:3] + family_traces(103)[:3]:
    X, y = make_windows([trace], stride=7)
    preds = [predict_peak(model, x) for x in X]
    print(f"  {family:<9} seed {trace.seed}: SMAPE {smape(preds, y):5.2f}% over {len(y)} windows")

print()
print("sample peaks on a held-out sinusoid (next-20s max arrival rate):")
X, y = make_windows([family_traces(100)[0][1]], stride=120)
for x, actual in list(zip(X, y))[:8]:
    predicted = predict_peak(model, np.asarray(x))
    print(f"  predicted {predicted:6.1f} req/s   actual {actual:6.1f} req/s")
