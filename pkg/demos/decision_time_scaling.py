"""Measure how per-decision time scales with configuration-space size.

The exhaustive solver re-enumerates the whole space every step, so its
cost grows with the number of joint configurations; the agent's greedy
forward pass stays near-constant.  Runs both on four pipelines spanning
roughly 1e3 to 2.4e7 configurations.
"""

from pipetune.harness import BENCHMARK_PIPELINES, benchmark_decision_times

print("running 20 decisions per pipeline (largest takes ~40s)...")
rows = benchmark_decision_times(BENCHMARK_PIPELINES, steps=20, seed=0)

print()
print(f"{'pipeline':<10} {'configs':>12} {'solver ms':>12} {'agent ms':>10} {'solver H s':>12} {'agent H s':>10}")
for r in rows:
    print(
        f"{r['pipeline']:<10} {r['space_size']:>12,} {r['solver_mean_ms']:>12.2f} "
        f"{r['ppo_mean_ms']:>10.3f} {r['solver_h_s']:>12.3f} {r['ppo_h_s']:>10.4f}"
    )

largest = rows[-1]
gain = (largest["solver_h_s"] - largest["ppo_h_s"]) / largest["ppo_h_s"] * 100.0
print()
print(f"on {largest['pipeline']}, the agent's cumulative decision time beats the solver's by {gain:,.0f}%")
