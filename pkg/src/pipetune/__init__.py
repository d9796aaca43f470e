"""Configuration selection for multi-model inference pipelines.

A simulator and decision engine that picks per-stage configurations
(model variant, replica count, batch size) for linear inference
pipelines under dynamic workloads.  Ships pipeline metric models, a
synthetic workload generator, an LSTM load predictor, a PPO agent with
expert-guided training, random/greedy/exhaustive-solver baselines, and
an experiment harness that compares them on identical traces.
"""

__version__ = "0.1.0"

from .agent import (
    AgentPolicy,
    EpisodeReport,
    PolicyModel,
    PpoHyper,
    TrainResult,
    run_online,
    train_agent,
)
from .baselines import (
    ExhaustiveSolver,
    GreedyPolicy,
    InfeasibleError,
    RandomPolicy,
    SolverPolicy,
    greedy_policy,
    random_config,
    solver_policy,
)
from .env import (
    ClusterState,
    DecisionContext,
    PipelineEnv,
    RewardParams,
    StepInfo,
    observe,
    repair_config,
    reward,
)
from .harness import (
    BENCHMARK_PIPELINES,
    ComparisonError,
    ConfigError,
    ExperimentConfig,
    benchmark_decision_times,
    load_config,
    run_experiment,
    summarize,
)
from .pipeline import (
    Capacity,
    ConfigSpace,
    MetricWeights,
    ModelVariant,
    PipelineConfig,
    PipelineMetrics,
    PipelineSpec,
    ShapeMismatchError,
    StageConfig,
    StageSpec,
    check_feasible,
    objective,
    pipeline_metrics,
    qos,
    stage_latency,
    stage_throughput,
)
from .predictor import PredictorHyper, PredictorModel, predict_peak, train_predictor
from .workload import Pattern, WorkloadTrace, generate_trace, history_window, smape

__all__ = [
    "AgentPolicy",
    "BENCHMARK_PIPELINES",
    "Capacity",
    "ClusterState",
    "ComparisonError",
    "ConfigError",
    "ConfigSpace",
    "DecisionContext",
    "EpisodeReport",
    "ExhaustiveSolver",
    "ExperimentConfig",
    "GreedyPolicy",
    "InfeasibleError",
    "MetricWeights",
    "ModelVariant",
    "Pattern",
    "PipelineConfig",
    "PipelineEnv",
    "PipelineMetrics",
    "PipelineSpec",
    "PolicyModel",
    "PpoHyper",
    "PredictorHyper",
    "PredictorModel",
    "RandomPolicy",
    "RewardParams",
    "ShapeMismatchError",
    "SolverPolicy",
    "StageConfig",
    "StageSpec",
    "StepInfo",
    "TrainResult",
    "WorkloadTrace",
    "benchmark_decision_times",
    "check_feasible",
    "generate_trace",
    "greedy_policy",
    "history_window",
    "load_config",
    "objective",
    "observe",
    "pipeline_metrics",
    "predict_peak",
    "qos",
    "random_config",
    "repair_config",
    "reward",
    "run_experiment",
    "run_online",
    "smape",
    "solver_policy",
    "stage_latency",
    "stage_throughput",
    "summarize",
    "train_agent",
    "train_predictor",
]
