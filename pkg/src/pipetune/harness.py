"""Experiment harness: config files, comparison runs, tidy CSV outputs.

One experiment evaluates the configured algorithms (random, greedy,
solver, ppo) on identical workload traces and writes per-step CSVs, a
decision-time CSV, a training curve when the agent trains, and a
summary JSON.  All randomness is seeded through the config, so every
rerun reproduces the same decisions; only the measured decision-time
columns vary run to run.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .agent import (
    AgentPolicy,
    PolicyModel,
    PpoHyper,
    TrainResult,
    run_online,
    train_agent,
)
from .baselines import GreedyPolicy, RandomPolicy, SolverPolicy
from .env import PipelineEnv, RewardParams
from .pipeline import (
    Capacity,
    ConfigSpace,
    MetricWeights,
    ModelVariant,
    PipelineSpec,
    StageSpec,
)
from .predictor import PredictorHyper, PredictorModel, predict_peak, train_predictor
from .workload import Pattern, generate_trace

CONFIG_VERSION = 1
ALGORITHMS = ("random", "greedy", "solver", "ppo")
STEP_CSV_STATIC_COLUMNS = (
    "step",
    "time_s",
    "demand",
    "predicted",
    "qos",
    "cost",
    "reward",
    "latency",
    "throughput",
    "excess",
)


class ConfigError(ValueError):
    """A config file is missing, malformed, or inconsistent."""


class ComparisonError(ValueError):
    """Run directories cannot be compared (different trace or pipeline)."""


@dataclass(frozen=True)
class TraceConfig:
    pattern: str
    duration_s: int
    seed: int
    params: dict = field(default_factory=dict)

    def build(self, seed_offset: int = 0):
        return generate_trace(
            self.pattern, self.duration_s, seed=self.seed + seed_offset, params=self.params or None
        )


@dataclass(frozen=True)
class AgentConfig:
    hidden: int = 64
    blocks: int = 2
    episodes: int = 80
    use_expert: bool = True
    checkpoint: str | None = None


@dataclass(frozen=True)
class PredictorConfig:
    enabled: bool = False
    epochs: int = 20
    learning_rate: float = 0.01
    batch_size: int = 32
    window_stride: int = 7
    num_traces: int = 3
    checkpoint: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    spec: PipelineSpec
    capacity: Capacity
    batch_choices: tuple[int, ...]
    trace: TraceConfig
    interval_s: int
    weights: MetricWeights
    reward_params: RewardParams
    hyper: PpoHyper
    agent: AgentConfig
    predictor: PredictorConfig
    algorithms: tuple[str, ...]
    output_dir: str
    seed: int

    @property
    def space(self) -> ConfigSpace:
        return ConfigSpace(self.spec, self.capacity, batch_choices=self.batch_choices)


def _need(node: dict, key: str, path, where: str):
    if key not in node:
        raise ConfigError(f"{path}: missing field {where}.{key}")
    return node[key]


def _parse_variant(node: dict, path, where: str, index: int) -> ModelVariant:
    try:
        return ModelVariant(
            id=index,
            accuracy=float(_need(node, "accuracy", path, where)),
            cost_per_replica=float(_need(node, "cost_per_replica", path, where)),
            resource_per_replica=float(_need(node, "resource_per_replica", path, where)),
            base_latency=float(_need(node, "base_latency", path, where)),
            per_item_latency=float(_need(node, "per_item_latency", path, where)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: bad variant at {where}: {exc}") from exc


def parse_pipeline(node, path, base_dir: Path) -> PipelineSpec:
    """Pipeline from an inline mapping or a referenced YAML file."""
    if isinstance(node, str):
        sub_path = base_dir / node
        if not sub_path.exists():
            raise ConfigError(f"{path}: pipeline file {sub_path} does not exist")
        with open(sub_path) as fh:
            node = yaml.safe_load(fh)
        path = sub_path
    if not isinstance(node, dict) or "stages" not in node:
        raise ConfigError(f"{path}: pipeline must be a mapping with a 'stages' list")
    stages = []
    for i, stage_node in enumerate(node["stages"]):
        where = f"pipeline.stages[{i}]"
        name = stage_node.get("name", f"stage{i}")
        variants = tuple(
            _parse_variant(v, path, f"{where}.variants[{j}]", j)
            for j, v in enumerate(_need(stage_node, "variants", path, where))
        )
        if not variants:
            raise ConfigError(f"{path}: {where}.variants is empty")
        stages.append(StageSpec(name=str(name), variants=variants))
    if not stages:
        raise ConfigError(f"{path}: pipeline.stages is empty")
    return PipelineSpec(stages=tuple(stages))


def _build(cls, node: dict, path, where: str, **extra):
    try:
        return cls(**{**node, **extra})
    except TypeError as exc:
        raise ConfigError(f"{path}: bad field under {where}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{path}: invalid {where}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    """Read and validate an experiment config file (YAML, version 1)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: config file does not exist")
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    version = doc.get("version")
    if version != CONFIG_VERSION:
        raise ConfigError(f"{path}: version must be {CONFIG_VERSION}, got {version!r}")

    spec = parse_pipeline(_need(doc, "pipeline", path, "top level"), path, path.parent)
    capacity = _build(Capacity, _need(doc, "capacity", path, "top level"), path, "capacity")
    batch_choices = tuple(int(b) for b in doc.get("batch_choices", ()))

    trace_node = dict(_need(doc, "trace", path, "top level"))
    trace = _build(TraceConfig, trace_node, path, "trace")
    try:
        Pattern(trace.pattern)
    except ValueError as exc:
        raise ConfigError(f"{path}: trace.pattern: {exc}") from exc

    interval_s = int(doc.get("interval_s", 10))
    if interval_s < 1:
        raise ConfigError(f"{path}: interval_s must be >= 1, got {interval_s}")
    if trace.duration_s < interval_s:
        raise ConfigError(
            f"{path}: trace.duration_s ({trace.duration_s}) must be >= interval_s ({interval_s})"
        )
    if trace.duration_s % interval_s != 0:
        raise ConfigError(
            f"{path}: interval_s ({interval_s}) must divide trace.duration_s ({trace.duration_s})"
        )

    weights = _build(MetricWeights, doc.get("metric_weights", {}), path, "metric_weights")
    reward_node = dict(doc.get("reward", {}))
    reward_params = _build(
        RewardParams, reward_node, path, "reward", qos_weights=weights
    )
    hyper = _build(PpoHyper, doc.get("ppo", {}), path, "ppo")
    agent = _build(AgentConfig, doc.get("agent", {}), path, "agent")
    predictor = _build(PredictorConfig, doc.get("predictor", {}), path, "predictor")

    algorithms = tuple(doc.get("algorithms", list(ALGORITHMS)))
    for algo in algorithms:
        if algo not in ALGORITHMS:
            raise ConfigError(
                f"{path}: algorithms contains {algo!r}; valid names: {', '.join(ALGORITHMS)}"
            )
    if not algorithms:
        raise ConfigError(f"{path}: algorithms must not be empty")

    try:
        space = ConfigSpace(spec, capacity, batch_choices=batch_choices)
    except ValueError as exc:
        raise ConfigError(f"{path}: batch_choices: {exc}") from exc
    del space

    return ExperimentConfig(
        spec=spec,
        capacity=capacity,
        batch_choices=batch_choices,
        trace=trace,
        interval_s=interval_s,
        weights=weights,
        reward_params=reward_params,
        hyper=hyper,
        agent=agent,
        predictor=predictor,
        algorithms=algorithms,
        output_dir=str(doc.get("output_dir", "runs/experiment")),
        seed=int(doc.get("seed", 0)),
    )


def _pipeline_digest(spec: PipelineSpec, capacity: Capacity, batch_choices) -> dict:
    return {
        "stages": [
            {
                "name": st.name,
                "variants": [
                    [v.accuracy, v.cost_per_replica, v.resource_per_replica, v.base_latency, v.per_item_latency]
                    for v in st.variants
                ],
            }
            for st in spec.stages
        ],
        "capacity": asdict(capacity),
        "batch_choices": list(batch_choices),
    }


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_steps_csv(path, report, num_stages: int, interval_s: int):
    """Per-step time series for one algorithm's episode."""
    columns = list(STEP_CSV_STATIC_COLUMNS)
    for n in range(num_stages):
        columns += [f"s{n}_variant", f"s{n}_replicas", f"s{n}_batch"]
    columns.append("decision_time_ms")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for rec in report.steps:
            info = rec.info
            row = [
                info.step_index,
                info.step_index * interval_s,
                info.demand,
                info.predicted_load,
                info.qos_value,
                info.metrics.cost,
                rec.reward,
                info.metrics.latency,
                info.metrics.throughput,
                info.metrics.excess_load,
            ]
            for sc in info.config.per_stage:
                row += [sc.variant_index, sc.replicas, sc.batch_size]
            row.append(rec.decision_time_s * 1000.0)
            writer.writerow([_fmt(v) for v in row])


def write_training_curve_csv(path, curves):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["episode", "mean_reward", "policy_loss", "value_loss"])
        for point in curves:
            writer.writerow(
                [_fmt(v) for v in (point.episode, point.mean_reward, point.policy_loss, point.value_loss)]
            )


def write_decision_times_csv(path, reports: dict):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["algorithm", "step", "decision_time_ms"])
        for algo, report in reports.items():
            for rec in report.steps:
                writer.writerow([algo, rec.info.step_index, _fmt(rec.decision_time_s * 1000.0)])


def _train_predictor_for(cfg: ExperimentConfig):
    """Predictor trained on companion traces of the experiment's pattern."""
    if cfg.predictor.checkpoint:
        model = PredictorModel.load(cfg.predictor.checkpoint)
        return model, None
    traces = [cfg.trace.build(seed_offset=101 + i) for i in range(cfg.predictor.num_traces)]
    hyper = PredictorHyper(
        learning_rate=cfg.predictor.learning_rate,
        epochs=cfg.predictor.epochs,
        batch_size=cfg.predictor.batch_size,
        seed=cfg.seed,
        window_stride=cfg.predictor.window_stride,
    )
    return train_predictor(traces, hyper)


def _make_env(cfg: ExperimentConfig, trace, predict_fn) -> PipelineEnv:
    return PipelineEnv(
        cfg.spec,
        cfg.capacity,
        trace,
        reward_params=cfg.reward_params,
        interval_s=cfg.interval_s,
        predict_fn=predict_fn,
    )


def _train_agent_for(cfg: ExperimentConfig, space: ConfigSpace, predict_fn) -> TrainResult:
    if cfg.agent.checkpoint:
        model = PolicyModel.load(cfg.agent.checkpoint, space)
        return TrainResult(model=model, curves=[], expert_fallbacks=0)

    def env_factory(episode: int) -> PipelineEnv:
        return _make_env(cfg, cfg.trace.build(seed_offset=10_000 + episode), predict_fn)

    expert = SolverPolicy(space, cfg.weights) if cfg.agent.use_expert else None
    return train_agent(
        env_factory,
        space,
        cfg.hyper,
        episodes=cfg.agent.episodes,
        seed=cfg.seed,
        expert=expert,
        hidden=cfg.agent.hidden,
        blocks=cfg.agent.blocks,
    )


def run_experiment(cfg: ExperimentConfig, output_dir=None) -> dict:
    """Run every configured algorithm on the shared trace; write artifacts.

    Returns the summary dict (also written to summary.json).  Output
    files: <algo>_steps.csv per algorithm, decision_times.csv,
    training_curve.csv when the agent trains, summary.json.
    """
    out = Path(output_dir if output_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    space = cfg.space
    eval_trace = cfg.trace.build()

    predict_fn = None
    if cfg.predictor.enabled:
        predictor_model, _ = _train_predictor_for(cfg)
        predictor_model.save(out / "predictor.json")
        predict_fn = lambda window: predict_peak(predictor_model, window)

    policies = {}
    training: TrainResult | None = None
    for algo in cfg.algorithms:
        if algo == "random":
            policies[algo] = RandomPolicy(space, seed=cfg.seed)
        elif algo == "greedy":
            policies[algo] = GreedyPolicy(space)
        elif algo == "solver":
            policies[algo] = SolverPolicy(space, cfg.weights)
        elif algo == "ppo":
            training = _train_agent_for(cfg, space, predict_fn)
            training.model.save(out / "policy.json")
            if training.curves:
                write_training_curve_csv(out / "training_curve.csv", training.curves)
            policies[algo] = AgentPolicy(training.model)

    reports = {}
    for algo in cfg.algorithms:
        env = _make_env(cfg, eval_trace, predict_fn)
        reports[algo] = run_online(env, policies[algo])
        write_steps_csv(out / f"{algo}_steps.csv", reports[algo], len(cfg.spec), cfg.interval_s)
    write_decision_times_csv(out / "decision_times.csv", reports)

    summary = {
        "format_version": 1,
        "meta": {
            "trace": asdict(cfg.trace),
            "interval_s": cfg.interval_s,
            "seed": cfg.seed,
            "steps_per_episode": math.ceil(cfg.trace.duration_s / cfg.interval_s),
            "space_size": space.size,
            "algorithms": list(cfg.algorithms),
            "pipeline": _pipeline_digest(cfg.spec, cfg.capacity, space.batch_choices),
            "predictor_enabled": cfg.predictor.enabled,
        },
        "results": {
            algo: {
                "mean_reward": report.mean_reward,
                "mean_qos": report.mean_qos,
                "mean_cost": report.mean_cost,
                "mean_objective": report.mean_objective,
                "mean_latency": float(np.mean([s.info.metrics.latency for s in report.steps])),
                "mean_throughput": float(np.mean([s.info.metrics.throughput for s in report.steps])),
                "repaired_steps": int(sum(s.info.repaired for s in report.steps)),
            }
            for algo, report in reports.items()
        },
        "timing": {
            algo: {
                "decision_time_total_s": report.cumulative_decision_time_s,
                "decision_time_mean_ms": float(
                    np.mean([d * 1000.0 for d in report.decision_times_s])
                ),
            }
            for algo, report in reports.items()
        },
    }
    if training is not None and training.curves:
        rewards = [c.mean_reward for c in training.curves]
        summary["training"] = {
            "episodes": len(training.curves),
            "expert_fallbacks": training.expert_fallbacks,
            "first_episode_reward": rewards[0],
            "last_episode_reward": rewards[-1],
        }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _pct(value: float, base: float) -> str:
    return f"{(value - base) / base * 100.0:+.1f}%"


def summarize(run_dirs) -> dict:
    """Cross-algorithm comparison over one or more run directories.

    All runs must share the trace, interval, and pipeline.  Reports
    per-algorithm means, percentage deltas vs greedy and vs solver,
    and decision-time ratios vs the solver.
    """
    run_dirs = [Path(d) for d in run_dirs]
    if not run_dirs:
        raise ComparisonError("no run directories given")
    results = {}
    timing = {}
    reference_meta = None
    for d in run_dirs:
        summary_path = d / "summary.json"
        if not summary_path.exists():
            raise ComparisonError(f"{d}: no summary.json (not a run directory?)")
        with open(summary_path) as fh:
            doc = json.load(fh)
        meta = doc.get("meta", {})
        key = {k: meta.get(k) for k in ("trace", "interval_s", "pipeline")}
        if reference_meta is None:
            reference_meta = key
        elif key != reference_meta:
            raise ComparisonError(f"{d}: run metadata differs from {run_dirs[0]}")
        results.update(doc.get("results", {}))
        timing.update(doc.get("timing", {}))

    report = {"algorithms": results, "timing": timing, "deltas": {}}
    for base_name in ("greedy", "solver"):
        if base_name not in results:
            continue
        base = results[base_name]
        deltas = {}
        for algo, r in results.items():
            if algo == base_name:
                continue
            deltas[algo] = {
                "cost": _pct(r["mean_cost"], base["mean_cost"]),
                "qos": _pct(r["mean_qos"], base["mean_qos"]),
                "objective": _pct(r["mean_objective"], base["mean_objective"]),
            }
        report["deltas"][f"vs_{base_name}"] = deltas
    if "solver" in timing:
        h_solver = timing["solver"]["decision_time_total_s"]
        improvements = {}
        for algo, t in timing.items():
            if algo == "solver" or t["decision_time_total_s"] <= 0:
                continue
            h = t["decision_time_total_s"]
            improvements[algo] = {
                "h_total_s": h,
                "h_solver_s": h_solver,
                "improvement": f"{(h_solver - h) / h * 100.0:+.1f}%",
            }
        report["decision_time_vs_solver"] = improvements
    return report


def format_summary_table(report: dict) -> str:
    """Plain-text table for terminal output."""
    lines = []
    header = f"{'algorithm':<10} {'reward':>10} {'qos':>10} {'cost':>10} {'objective':>10} {'H_s':>12}"
    lines.append(header)
    lines.append("-" * len(header))
    for algo, r in report["algorithms"].items():
        h = report["timing"].get(algo, {}).get("decision_time_total_s", float("nan"))
        lines.append(
            f"{algo:<10} {r['mean_reward']:>10.4f} {r['mean_qos']:>10.4f} "
            f"{r['mean_cost']:>10.4f} {r['mean_objective']:>10.4f} {h:>12.6f}"
        )
    for base, deltas in report.get("deltas", {}).items():
        lines.append("")
        lines.append(f"deltas {base}:")
        for algo, d in deltas.items():
            lines.append(f"  {algo:<10} cost {d['cost']:>9} qos {d['qos']:>9} objective {d['objective']:>9}")
    for algo, imp in report.get("decision_time_vs_solver", {}).items():
        lines.append(f"decision time: {algo} H={imp['h_total_s']:.4f}s solver H={imp['h_solver_s']:.4f}s improvement {imp['improvement']}")
    return "\n".join(lines)


def make_benchmark_spec(num_stages: int, num_variants: int) -> PipelineSpec:
    """Synthetic pipeline for the decision-time study, fixed formulas."""
    stages = []
    for i in range(num_stages):
        variants = tuple(
            ModelVariant(
                id=j,
                accuracy=round(0.60 + 0.35 * (j / max(num_variants - 1, 1)), 4),
                cost_per_replica=round(0.4 + 0.4 * j, 4),
                resource_per_replica=round(0.3 + 0.3 * j, 4),
                base_latency=round(0.02 + 0.01 * j + 0.004 * i, 4),
                per_item_latency=round(0.004 + 0.002 * j, 4),
            )
            for j in range(num_variants)
        )
        stages.append(StageSpec(name=f"stage{i}", variants=variants))
    return PipelineSpec(stages=tuple(stages))


@dataclass(frozen=True)
class BenchmarkPipeline:
    name: str
    num_stages: int
    num_variants: int
    f_max: int
    batch_choices: tuple[int, ...]

    def space(self) -> ConfigSpace:
        spec = make_benchmark_spec(self.num_stages, self.num_variants)
        # budget sized so multi-replica configs stay in play
        capacity = Capacity(
            f_max=self.f_max,
            b_max=max(self.batch_choices),
            w_max=float(2 * self.num_stages * self.f_max),
        )
        return ConfigSpace(spec, capacity, batch_choices=self.batch_choices)


# Sizes span ~1e3 to ~2.4e7 joint configurations.
BENCHMARK_PIPELINES = (
    BenchmarkPipeline("p1_2x2", 2, 2, 4, (1, 2, 4, 8)),
    BenchmarkPipeline("p2_3x3", 3, 3, 4, (1, 2, 4, 8)),
    BenchmarkPipeline("p3_4x4", 4, 4, 4, (1, 2)),
    BenchmarkPipeline("p4_5x5", 5, 5, 3, (1, 2)),
)


def benchmark_decision_times(
    pipelines=BENCHMARK_PIPELINES,
    steps: int = 20,
    interval_s: int = 10,
    seed: int = 0,
    weights: MetricWeights | None = None,
) -> list[dict]:
    """Per-decision timing of solver vs agent across pipeline sizes.

    Timing does not depend on trained weights, so the agent runs with
    a freshly initialized policy.  Returns one row per pipeline with
    space size, mean decision times, and cumulative H for both.
    """
    weights = weights or MetricWeights()
    rows = []
    for bench in pipelines:
        space = bench.space()
        trace = generate_trace(
            Pattern.FLUCTUATING, steps * interval_s, seed=seed, params={"low": 20.0, "high": 100.0}
        )
        model = PolicyModel(space, obs_size=9 * space.num_stages, seed=seed)
        results = {}
        for name, policy in (
            ("solver", SolverPolicy(space, weights)),
            ("ppo", AgentPolicy(model)),
        ):
            env = PipelineEnv(space.spec, space.capacity, trace, interval_s=interval_s)
            report = run_online(env, policy)
            results[name] = report
        rows.append(
            {
                "pipeline": bench.name,
                "space_size": space.size,
                "steps": steps,
                "solver_mean_ms": float(np.mean(results["solver"].decision_times_s)) * 1000.0,
                "ppo_mean_ms": float(np.mean(results["ppo"].decision_times_s)) * 1000.0,
                "solver_h_s": results["solver"].cumulative_decision_time_s,
                "ppo_h_s": results["ppo"].cumulative_decision_time_s,
            }
        )
    return rows
