"""Simulated cluster environment for per-interval configuration decisions.

Each step installs the chosen pipeline configuration, repairs it if
the joint resource budget is exceeded, advances the workload trace by
one adaptation interval, and scores the interval with the QoS-minus-
penalties reward.  Observations are per-stage feature tuples
(node resources, incoming and predicted load, stage latency,
throughput, variant, replicas, batch, cost), normalized to fixed
scales and concatenated into one vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .pipeline import (
    Capacity,
    MetricWeights,
    PipelineConfig,
    PipelineMetrics,
    PipelineSpec,
    StageConfig,
    check_feasible,
    objective,
    pipeline_metrics,
    qos,
    stage_stats,
)
from .workload import WorkloadTrace, history_window

FEATURES_PER_STAGE = 9
DEFAULT_INTERVAL_S = 10


class StateError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterState:
    """Node-level view: free resources plus current and predicted load."""

    available_resource: float
    incoming_load: float
    predicted_load: float

    def __post_init__(self):
        if self.available_resource < 0:
            raise ValueError(f"available_resource must be >= 0, got {self.available_resource}")
        if self.incoming_load < 0 or self.predicted_load < 0:
            raise ValueError("loads must be >= 0")


@dataclass(frozen=True)
class StageFeatures:
    """Raw per-stage observation entries before normalization."""

    latency: float
    throughput: float
    variant_index: float
    replicas: float
    batch_size: float
    cost: float


@dataclass(frozen=True)
class ObsScales:
    """Fixed normalization constants for the observation vector."""

    w_max: float
    load_scale: float
    f_max: int
    b_max: int
    variants_per_stage: tuple[int, ...]

    def __post_init__(self):
        if self.w_max <= 0 or self.load_scale <= 0:
            raise ValueError("w_max and load_scale must be positive")


@dataclass(frozen=True)
class RewardParams:
    """Eq.-style reward: QoS minus cost and batch penalties.

    The batch term aggregates per-stage batch sizes by max (default)
    or sum.  ``repair_penalty`` is charged when an action had to be
    repaired to fit the resource budget.
    """

    qos_weights: MetricWeights = MetricWeights()
    cost_weight: float = 0.1
    batch_penalty: float = 0.05
    repair_penalty: float = 0.0
    batch_aggregate: str = "max"

    def __post_init__(self):
        if min(self.cost_weight, self.batch_penalty, self.repair_penalty) < 0:
            raise ValueError("reward penalties must be >= 0")
        if self.batch_aggregate not in ("max", "sum"):
            raise ValueError(f"batch_aggregate must be 'max' or 'sum', got {self.batch_aggregate!r}")


def aggregate_batches(batch_sizes, mode: str = "max") -> float:
    sizes = list(batch_sizes)
    if not sizes:
        raise ValueError("no batch sizes to aggregate")
    return float(max(sizes) if mode == "max" else sum(sizes))


def reward(q: float, cost: float, batch_value: float, params: RewardParams) -> float:
    """q − cost_weight·cost − batch_penalty·batch_value."""
    return q - params.cost_weight * cost - params.batch_penalty * batch_value


def observe(
    cluster: ClusterState, features: list[StageFeatures], scales: ObsScales
) -> np.ndarray:
    """Normalized observation vector, 9 entries per stage.

    Layout per stage: (free resources, incoming load, predicted load,
    latency, throughput, variant, replicas, batch, cost).  Loads and
    throughput are scaled by the trace maximum, latency by one second,
    resource-like quantities by the budget, indices by their menu
    cardinalities.
    """
    if len(features) != len(scales.variants_per_stage):
        raise StateError(
            f"got {len(features)} stage feature tuples, expected {len(scales.variants_per_stage)}"
        )
    out = np.empty(FEATURES_PER_STAGE * len(features))
    node = (
        cluster.available_resource / scales.w_max,
        cluster.incoming_load / scales.load_scale,
        cluster.predicted_load / scales.load_scale,
    )
    for n, f in enumerate(features):
        out[9 * n : 9 * n + 3] = node
        out[9 * n + 3] = f.latency / 1.0
        out[9 * n + 4] = f.throughput / scales.load_scale
        out[9 * n + 5] = f.variant_index / scales.variants_per_stage[n]
        out[9 * n + 6] = f.replicas / scales.f_max
        out[9 * n + 7] = f.batch_size / scales.b_max
        out[9 * n + 8] = f.cost / scales.w_max
    if not np.all(np.isfinite(out)):
        raise StateError("observation has non-finite entries")
    return out


@dataclass(frozen=True)
class DecisionContext:
    """What a policy sees when asked for the next configuration."""

    observation: np.ndarray
    cluster: ClusterState
    step_index: int


@dataclass(frozen=True)
class StepInfo:
    """Everything the harness logs about one environment step."""

    step_index: int
    demand: float
    incoming_load: float
    predicted_load: float
    config: PipelineConfig
    repaired: bool
    metrics: PipelineMetrics
    qos_value: float
    objective_value: float


def total_resource(spec: PipelineSpec, config: PipelineConfig) -> float:
    return sum(
        st.variants[sc.variant_index].resource_per_replica * sc.replicas
        for st, sc in zip(spec.stages, config.per_stage)
    )


def repair_config(
    spec: PipelineSpec, config: PipelineConfig, capacity: Capacity
) -> tuple[PipelineConfig, bool]:
    """Shrink an over-budget config until the resource constraint holds.

    First pass: repeatedly decrement the replicas of the stage whose
    replicas consume the most resources (ties go to the earlier
    stage), never below one.  Second pass, only if every stage is
    already at one replica: move the heaviest stages onto their
    lightest variant.  Returns (config, repaired flag).
    """
    per_stage = list(config.per_stage)
    repaired = False

    def stage_load(sc: StageConfig, n: int) -> float:
        return spec.stages[n].variants[sc.variant_index].resource_per_replica * sc.replicas

    def total() -> float:
        return sum(stage_load(sc, n) for n, sc in enumerate(per_stage))

    while total() > capacity.w_max:
        candidates = [n for n, sc in enumerate(per_stage) if sc.replicas > 1]
        if not candidates:
            break
        n = max(candidates, key=lambda k: (stage_load(per_stage[k], k), -k))
        per_stage[n] = replace(per_stage[n], replicas=per_stage[n].replicas - 1)
        repaired = True

    while total() > capacity.w_max:
        # all stages at one replica: downgrade the heaviest stage's variant
        downgradable = []
        for n, sc in enumerate(per_stage):
            variants = spec.stages[n].variants
            lightest = min(range(len(variants)), key=lambda j: (variants[j].resource_per_replica, j))
            if variants[lightest].resource_per_replica < variants[sc.variant_index].resource_per_replica:
                downgradable.append((n, lightest))
        if not downgradable:
            raise ValueError(
                f"cannot repair config within resource budget {capacity.w_max}"
            )
        n, lightest = max(downgradable, key=lambda pair: (stage_load(per_stage[pair[0]], pair[0]), -pair[0]))
        per_stage[n] = replace(per_stage[n], variant_index=lightest)
        repaired = True

    return PipelineConfig(per_stage=tuple(per_stage)), repaired


class PipelineEnv:
    """Gym-style episodic environment over one workload trace.

    An episode covers the whole trace in ``interval_s``-second steps;
    the demand each step is the interval's mean arrival rate.  The
    predicted load comes from ``predict_fn`` (a callable mapping a
    120-entry history to a rate); without one it falls back to the
    incoming load.
    """

    def __init__(
        self,
        spec: PipelineSpec,
        capacity: Capacity,
        trace: WorkloadTrace,
        reward_params: RewardParams | None = None,
        interval_s: int = DEFAULT_INTERVAL_S,
        predict_fn=None,
        initial_config: PipelineConfig | None = None,
    ):
        if interval_s < 1:
            raise ValueError("interval_s must be >= 1")
        self.spec = spec
        self.capacity = capacity
        self.trace = trace
        self.reward_params = reward_params or RewardParams()
        self.interval_s = interval_s
        self.predict_fn = predict_fn
        self.initial_config = initial_config or PipelineConfig(
            per_stage=tuple(
                StageConfig(variant_index=0, replicas=1, batch_size=1) for _ in spec.stages
            )
        )
        rep = check_feasible(spec, self.initial_config, capacity)
        if not rep.ok:
            raise ValueError(f"initial config infeasible: {rep.violations}")
        # the repair loop needs some all-lightest-variant config to fit
        lightest = PipelineConfig(
            per_stage=tuple(
                StageConfig(
                    variant_index=min(
                        range(len(st.variants)),
                        key=lambda j: (st.variants[j].resource_per_replica, j),
                    ),
                    replicas=1,
                    batch_size=1,
                )
                for st in spec.stages
            )
        )
        if total_resource(spec, lightest) > capacity.w_max:
            raise ValueError("resource budget cannot fit even one lightest replica per stage")

        self.scales = ObsScales(
            w_max=capacity.w_max,
            load_scale=max(float(trace.rates.max()), 1e-9),
            f_max=capacity.f_max,
            b_max=capacity.b_max,
            variants_per_stage=tuple(len(st.variants) for st in spec.stages),
        )
        self.episode_len = math.ceil(len(trace) / interval_s)
        self._step_index = 0
        self._config = self.initial_config

    @property
    def observation_size(self) -> int:
        return FEATURES_PER_STAGE * len(self.spec)

    @property
    def config(self) -> PipelineConfig:
        return self._config

    @property
    def step_index(self) -> int:
        return self._step_index

    def interval_demand(self, k: int) -> float:
        """Mean arrival rate over interval k (the last interval may be short)."""
        if not 0 <= k < self.episode_len:
            raise ValueError(f"interval {k} outside episode of {self.episode_len} steps")
        lo = k * self.interval_s
        hi = min(lo + self.interval_s, len(self.trace))
        return float(self.trace.rates[lo:hi].mean())

    def cluster_state(self) -> ClusterState:
        now = min(self._step_index * self.interval_s, len(self.trace) - 1)
        incoming = float(self.trace.rates[now])
        if self.predict_fn is not None:
            predicted = float(self.predict_fn(history_window(self.trace, now)))
        else:
            predicted = incoming
        used = total_resource(self.spec, self._config)
        return ClusterState(
            available_resource=max(self.capacity.w_max - used, 0.0),
            incoming_load=incoming,
            predicted_load=max(predicted, 0.0),
        )

    def _observe(self, cluster: ClusterState | None = None) -> np.ndarray:
        if cluster is None:
            cluster = self.cluster_state()
        stats = stage_stats(self.spec, self._config)
        features = [
            StageFeatures(
                latency=st.latency,
                throughput=st.throughput,
                variant_index=sc.variant_index,
                replicas=sc.replicas,
                batch_size=sc.batch_size,
                cost=st.cost,
            )
            for st, sc in zip(stats, self._config.per_stage)
        ]
        return observe(cluster, features, self.scales)

    def reset(self) -> np.ndarray:
        self._step_index = 0
        self._config = self.initial_config
        return self._observe()

    def decision_context(self) -> DecisionContext:
        cluster = self.cluster_state()
        return DecisionContext(
            observation=self._observe(cluster),
            cluster=cluster,
            step_index=self._step_index,
        )

    def validate_action(self, action: PipelineConfig):
        if len(action) != len(self.spec):
            raise ValueError(f"action has {len(action)} stages, expected {len(self.spec)}")
        for n, sc in enumerate(action.per_stage):
            nv = len(self.spec.stages[n].variants)
            if not 0 <= sc.variant_index < nv:
                raise ValueError(f"stage {n}: variant {sc.variant_index} out of range")
            if not 1 <= sc.replicas <= self.capacity.f_max:
                raise ValueError(f"stage {n}: replicas {sc.replicas} out of range")
            if not 1 <= sc.batch_size <= self.capacity.b_max:
                raise ValueError(f"stage {n}: batch {sc.batch_size} out of range")

    def step(self, action: PipelineConfig) -> tuple[np.ndarray, float, bool, StepInfo]:
        """Install ``action``, advance one interval, score it.

        Returns (next observation, reward, done, info).
        """
        if self._step_index >= self.episode_len:
            raise RuntimeError("episode finished; call reset()")
        self.validate_action(action)
        config, repaired = repair_config(self.spec, action, self.capacity)
        assert check_feasible(self.spec, config, self.capacity).ok
        self._config = config

        cluster = self.cluster_state()
        k = self._step_index
        demand = self.interval_demand(k)
        metrics = pipeline_metrics(self.spec, config, demand)
        q = qos(metrics, self.reward_params.qos_weights)
        batch_value = aggregate_batches(
            (sc.batch_size for sc in config.per_stage), self.reward_params.batch_aggregate
        )
        r = reward(q, metrics.cost, batch_value, self.reward_params)
        if repaired:
            r -= self.reward_params.repair_penalty

        info = StepInfo(
            step_index=k,
            demand=demand,
            incoming_load=cluster.incoming_load,
            predicted_load=cluster.predicted_load,
            config=config,
            repaired=repaired,
            metrics=metrics,
            qos_value=q,
            objective_value=objective(q, metrics.cost, self.reward_params.qos_weights),
        )
        self._step_index += 1
        done = self._step_index >= self.episode_len
        return self._observe(), r, done, info
