"""Domain types and pure metric computations for inference pipelines.

A pipeline is a linear chain of stages.  Each stage runs one of several
interchangeable model variants, replicated across some number of
replicas, each replica processing requests in fixed-size batches.  The
functions here score a concrete configuration: summed accuracy, core
cost, end-to-end latency, bottleneck throughput, excess load, the
composite QoS score, and the cost-penalized objective used by the
solver and the agent's reward.

Everything in this module is a pure function over immutable inputs and
safe for concurrent callers.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field


class ShapeMismatchError(ValueError):
    """A config does not line up with the pipeline it is scored against."""


@dataclass(frozen=True)
class ModelVariant:
    """One deployable model option for a stage.

    ``accuracy`` is a unitless score in [0, 1].  ``cost_per_replica``
    is in CPU cores, ``resource_per_replica`` in abstract resource
    units.  Latency of one inference call is modeled as
    ``base_latency + per_item_latency * batch`` seconds.
    """

    id: int
    accuracy: float
    cost_per_replica: float
    resource_per_replica: float
    base_latency: float
    per_item_latency: float

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy must be in [0, 1], got {self.accuracy}")
        if self.cost_per_replica <= 0:
            raise ValueError("cost_per_replica must be positive")
        if self.resource_per_replica <= 0:
            raise ValueError("resource_per_replica must be positive")
        if self.base_latency < 0 or self.per_item_latency < 0:
            raise ValueError("latency parameters must be nonnegative")
        if self.base_latency == 0 and self.per_item_latency == 0:
            raise ValueError("latency must be positive for some batch size")


@dataclass(frozen=True)
class StageSpec:
    """A named stage with its ordered menu of model variants."""

    name: str
    variants: tuple[ModelVariant, ...]

    def __post_init__(self):
        if not self.variants:
            raise ValueError(f"stage {self.name!r} has no variants")
        object.__setattr__(self, "variants", tuple(self.variants))
        for i, v in enumerate(self.variants):
            if v.id != i:
                raise ValueError(
                    f"stage {self.name!r}: variant ids must be 0..{len(self.variants) - 1} "
                    f"in order, got id {v.id} at position {i}"
                )


@dataclass(frozen=True)
class PipelineSpec:
    """An ordered, nonempty chain of stages."""

    stages: tuple[StageSpec, ...]

    def __post_init__(self):
        if not self.stages:
            raise ValueError("pipeline needs at least one stage")
        object.__setattr__(self, "stages", tuple(self.stages))

    def __len__(self) -> int:
        return len(self.stages)


@dataclass(frozen=True)
class StageConfig:
    """Concrete choice for one stage: (variant, replicas, batch)."""

    variant_index: int
    replicas: int
    batch_size: int

    def __post_init__(self):
        if self.variant_index < 0:
            raise ValueError("variant_index must be nonnegative")
        if self.replicas < 1:
            raise ValueError("replicas must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass(frozen=True)
class PipelineConfig:
    """One StageConfig per stage, in stage order."""

    per_stage: tuple[StageConfig, ...]

    def __post_init__(self):
        object.__setattr__(self, "per_stage", tuple(self.per_stage))

    def __len__(self) -> int:
        return len(self.per_stage)


@dataclass(frozen=True)
class Capacity:
    """Per-stage replica/batch bounds and the node's total resource budget."""

    f_max: int
    b_max: int
    w_max: float

    def __post_init__(self):
        if self.f_max < 1 or self.b_max < 1 or self.w_max <= 0:
            raise ValueError("capacity bounds must be strictly positive")


@dataclass(frozen=True)
class MetricWeights:
    """Weights of the QoS score and the cost-penalized objective.

    ``alpha`` scales accuracy, ``beta_q`` throughput; latency enters
    with weight 1.  ``gamma_q`` penalizes unmet demand (excess load
    >= 0), ``delta_q`` penalizes spare capacity (excess load < 0).
    ``lambda_obj`` is the cost weight of the final objective.
    """

    alpha: float = 1.0
    beta_q: float = 0.01
    gamma_q: float = 0.1
    delta_q: float = 0.01
    lambda_obj: float = 0.1

    def __post_init__(self):
        for name in ("alpha", "beta_q", "gamma_q", "delta_q", "lambda_obj"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class PipelineMetrics:
    """Scored configuration: accuracy sum, cost, latency, throughput, excess load."""

    accuracy_sum: float
    cost: float
    latency: float
    throughput: float
    excess_load: float


def stage_latency(variant: ModelVariant, batch: int) -> float:
    """Seconds one replica takes to finish a batch: base + per_item * batch."""
    if batch < 1:
        raise ValueError(f"batch must be at least 1, got {batch}")
    return variant.base_latency + variant.per_item_latency * batch


def stage_throughput(variant: ModelVariant, batch: int, replicas: int) -> float:
    """Requests/second of one stage: each replica completes one batch per latency period."""
    if replicas < 1:
        raise ValueError(f"replicas must be at least 1, got {replicas}")
    return replicas * batch / stage_latency(variant, batch)


def _check_shape(spec: PipelineSpec, config: PipelineConfig) -> None:
    if len(config) != len(spec):
        raise ShapeMismatchError(
            f"config has {len(config)} stages, pipeline has {len(spec)}"
        )


def _variant_of(stage: StageSpec, sc: StageConfig) -> ModelVariant:
    if not 0 <= sc.variant_index < len(stage.variants):
        raise ValueError(
            f"stage {stage.name!r}: variant index {sc.variant_index} out of range "
            f"0..{len(stage.variants) - 1}"
        )
    return stage.variants[sc.variant_index]


@dataclass(frozen=True)
class StageStats:
    """Per-stage latency, throughput, and cost of a concrete choice."""

    latency: float
    throughput: float
    cost: float


def stage_stats(spec: PipelineSpec, config: PipelineConfig) -> tuple[StageStats, ...]:
    """Latency, throughput, and cost of each stage under ``config``."""
    _check_shape(spec, config)
    out = []
    for stage, sc in zip(spec.stages, config.per_stage):
        v = _variant_of(stage, sc)
        out.append(
            StageStats(
                latency=stage_latency(v, sc.batch_size),
                throughput=stage_throughput(v, sc.batch_size, sc.replicas),
                cost=sc.replicas * v.cost_per_replica,
            )
        )
    return tuple(out)


def pipeline_metrics(
    spec: PipelineSpec, config: PipelineConfig, demand: float
) -> PipelineMetrics:
    """Score ``config`` against ``demand`` requests/second.

    Accuracy and cost are sums over stages, latency is the sum of
    stage latencies, throughput is the bottleneck (minimum) stage
    throughput, and excess load is demand minus throughput (positive:
    unmet demand; negative: spare capacity).
    """
    _check_shape(spec, config)
    if demand < 0:
        raise ValueError(f"demand must be nonnegative, got {demand}")
    acc = 0.0
    cost = 0.0
    latency = 0.0
    throughput = float("inf")
    for stage, sc in zip(spec.stages, config.per_stage):
        v = _variant_of(stage, sc)
        acc = acc + v.accuracy
        cost = cost + sc.replicas * v.cost_per_replica
        lat = stage_latency(v, sc.batch_size)
        latency = latency + lat
        thr = sc.replicas * sc.batch_size / lat
        if thr < throughput:
            throughput = thr
    return PipelineMetrics(
        accuracy_sum=acc,
        cost=cost,
        latency=latency,
        throughput=throughput,
        excess_load=demand - throughput,
    )


def qos(metrics: PipelineMetrics, weights: MetricWeights) -> float:
    """Composite QoS: accuracy and throughput up, latency and load mismatch down.

    Unmet demand (excess load >= 0) is penalized by ``gamma_q``, spare
    capacity by ``delta_q``; the two branches agree at zero excess.
    """
    base = (
        weights.alpha * metrics.accuracy_sum
        + weights.beta_q * metrics.throughput
        - metrics.latency
    )
    e = metrics.excess_load
    if e >= 0:
        return base - weights.gamma_q * e
    return base - weights.delta_q * (-e)


def objective(q: float, cost: float, weights: MetricWeights) -> float:
    """Final decision score: QoS minus ``lambda_obj`` times cost."""
    return q - weights.lambda_obj * cost


@dataclass(frozen=True)
class FeasibilityReport:
    """Outcome of constraint checking: ok, or the list of violations."""

    ok: bool
    violations: tuple[str, ...] = ()


def check_feasible(
    spec: PipelineSpec, config: PipelineConfig, capacity: Capacity
) -> FeasibilityReport:
    """Check every configuration constraint and report all violations.

    Constraints: variant index within the stage menu, 0 < replicas <=
    f_max, 0 < batch <= b_max, and total resource demand
    sum(resource_per_replica * replicas) <= w_max.
    """
    _check_shape(spec, config)
    violations: list[str] = []
    resource = 0.0
    for stage, sc in zip(spec.stages, config.per_stage):
        if not 0 <= sc.variant_index < len(stage.variants):
            violations.append(
                f"stage {stage.name!r}: variant index {sc.variant_index} outside "
                f"0..{len(stage.variants) - 1}"
            )
            continue
        v = stage.variants[sc.variant_index]
        if not 0 < sc.replicas <= capacity.f_max:
            violations.append(
                f"stage {stage.name!r}: replicas {sc.replicas} outside 1..{capacity.f_max}"
            )
        if not 0 < sc.batch_size <= capacity.b_max:
            violations.append(
                f"stage {stage.name!r}: batch {sc.batch_size} outside 1..{capacity.b_max}"
            )
        resource = resource + v.resource_per_replica * sc.replicas
    if resource > capacity.w_max:
        violations.append(
            f"total resource {resource:g} exceeds budget {capacity.w_max:g}"
        )
    return FeasibilityReport(ok=not violations, violations=tuple(violations))


def default_batch_choices(b_max: int) -> tuple[int, ...]:
    """Powers of two up to ``b_max``: 1, 2, 4, ..."""
    choices = []
    b = 1
    while b <= b_max:
        choices.append(b)
        b *= 2
    return tuple(choices)


@dataclass(frozen=True)
class ConfigSpace:
    """The enumerable set of pipeline configurations.

    Per stage the choices are: every variant, replica counts
    1..f_max, and the batch menu (powers of two up to b_max unless an
    explicit menu is given).  Enumeration order is lexicographic by
    (variant, replicas, batch) with stage 0 most significant, which
    the solver relies on for deterministic tie-breaking.
    """

    spec: PipelineSpec
    capacity: Capacity
    batch_choices: tuple[int, ...] = field(default=())

    def __post_init__(self):
        choices = tuple(self.batch_choices) or default_batch_choices(self.capacity.b_max)
        if list(choices) != sorted(set(choices)):
            raise ValueError("batch_choices must be strictly increasing")
        if choices[0] < 1 or choices[-1] > self.capacity.b_max:
            raise ValueError(
                f"batch_choices must lie within 1..{self.capacity.b_max}, got {choices}"
            )
        object.__setattr__(self, "batch_choices", choices)

    @property
    def replica_choices(self) -> range:
        return range(1, self.capacity.f_max + 1)

    @property
    def num_stages(self) -> int:
        return len(self.spec)

    def head_sizes(self, stage: int) -> tuple[int, int, int]:
        """Cardinalities of the (variant, replicas, batch) choices of one stage."""
        return (
            len(self.spec.stages[stage].variants),
            self.capacity.f_max,
            len(self.batch_choices),
        )

    def stage_size(self, stage: int) -> int:
        nv, nf, nb = self.head_sizes(stage)
        return nv * nf * nb

    @property
    def size(self) -> int:
        """Number of joint configurations."""
        total = 1
        for s in range(self.num_stages):
            total *= self.stage_size(s)
        return total

    def stage_choice(self, stage: int, choice_id: int) -> StageConfig:
        """Decode a per-stage choice id (lexicographic by variant, replicas, batch)."""
        nv, nf, nb = self.head_sizes(stage)
        if not 0 <= choice_id < nv * nf * nb:
            raise ValueError(f"choice id {choice_id} out of range for stage {stage}")
        v, rest = divmod(choice_id, nf * nb)
        f_idx, b_idx = divmod(rest, nb)
        return StageConfig(
            variant_index=v,
            replicas=f_idx + 1,
            batch_size=self.batch_choices[b_idx],
        )

    def config_from_indices(self, indices) -> PipelineConfig:
        """Build a config from per-stage (variant, replica, batch) head indices."""
        per_stage = []
        for s, (vi, fi, bi) in enumerate(indices):
            nv, nf, nb = self.head_sizes(s)
            if not (0 <= vi < nv and 0 <= fi < nf and 0 <= bi < nb):
                raise ValueError(f"head indices {(vi, fi, bi)} out of range for stage {s}")
            per_stage.append(
                StageConfig(
                    variant_index=int(vi),
                    replicas=int(fi) + 1,
                    batch_size=self.batch_choices[int(bi)],
                )
            )
        return PipelineConfig(per_stage=tuple(per_stage))

    def indices_of(self, config: PipelineConfig) -> list[tuple[int, int, int]]:
        """Head indices of a config; raises if any component is off the menu."""
        _check_shape(self.spec, config)
        out = []
        for s, sc in enumerate(config.per_stage):
            nv, nf, nb = self.head_sizes(s)
            if not 0 <= sc.variant_index < nv:
                raise ValueError(f"stage {s}: variant {sc.variant_index} not in menu")
            if not 1 <= sc.replicas <= nf:
                raise ValueError(f"stage {s}: replicas {sc.replicas} not in menu")
            if sc.batch_size not in self.batch_choices:
                raise ValueError(
                    f"stage {s}: batch {sc.batch_size} not in menu {self.batch_choices}"
                )
            out.append(
                (
                    sc.variant_index,
                    sc.replicas - 1,
                    self.batch_choices.index(sc.batch_size),
                )
            )
        return out

    def iter_configs(self):
        """Yield every configuration in lexicographic enumeration order."""
        per_stage_choices = [
            [self.stage_choice(s, k) for k in range(self.stage_size(s))]
            for s in range(self.num_stages)
        ]
        for combo in itertools.product(*per_stage_choices):
            yield PipelineConfig(per_stage=combo)
