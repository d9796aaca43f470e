"""Compare all four decision policies on the desk benchmark.

Trains the PPO agent with solver guidance, then evaluates random,
greedy, exhaustive-solver, and agent policies on the same fluctuating
trace.  Writes the full artifact set (per-step CSVs, training curve,
summary.json) under runs/desk and prints the comparison table.
"""

from pathlib import Path

from pipetune.harness import format_summary_table, load_config, run_experiment, summarize

repo = Path(__file__).resolve().parents[1]
cfg = load_config(repo / "configs" / "desk.yaml")

print(f"pipeline: {len(cfg.spec)} stages, {cfg.space.size:,} joint configurations")
print(f"trace: {cfg.trace.pattern}, {cfg.trace.duration_s}s, seed {cfg.trace.seed}")
print(f"training the agent for {cfg.agent.episodes} episodes...")

out = repo / cfg.output_dir
summary = run_experiment(cfg, output_dir=out)

print()
print(format_summary_table(summarize([out])))
print()
print(f"artifacts in {out}")
