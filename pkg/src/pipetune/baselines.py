"""Comparison policies: random draw, min-cost greedy, exhaustive solver.

The solver enumerates the full discrete configuration space and
maximizes the QoS-minus-cost objective at a given demand.  A chunked
vectorized path handles spaces into the tens of millions; its
arithmetic replays the scalar metric fold operation for operation, so
argmax tie-breaking agrees exactly with a plain loop over
``ConfigSpace.iter_configs()``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .pipeline import (
    Capacity,
    ConfigSpace,
    MetricWeights,
    PipelineConfig,
    PipelineSpec,
    StageConfig,
    check_feasible,
    objective,
    pipeline_metrics,
    qos,
    stage_latency,
)


class InfeasibleError(ValueError):
    """No configuration satisfies the constraints."""


def random_config(space: ConfigSpace, rng: np.random.Generator) -> PipelineConfig:
    """Draw each stage's (variant, replicas, batch) uniformly from its menus."""
    per_stage = []
    for s in range(space.num_stages):
        nv, nf, nb = space.head_sizes(s)
        per_stage.append(
            StageConfig(
                variant_index=int(rng.integers(0, nv)),
                replicas=int(rng.integers(1, nf + 1)),
                batch_size=space.batch_choices[int(rng.integers(0, nb))],
            )
        )
    return PipelineConfig(per_stage=tuple(per_stage))


def greedy_policy(
    spec: PipelineSpec, capacity: Capacity, batch_choices: tuple[int, ...] = ()
) -> PipelineConfig:
    """Cheapest feasible configuration.

    Ties are broken by higher pipeline throughput, then lower variant
    indices, then smaller batches, then fewer replicas.
    """
    space = ConfigSpace(spec, capacity, batch_choices=batch_choices)
    best_key = None
    best = None
    for config in space.iter_configs():
        if not check_feasible(spec, config, capacity).ok:
            continue
        m = pipeline_metrics(spec, config, demand=0.0)
        key = (
            m.cost,
            -m.throughput,
            tuple(sc.variant_index for sc in config.per_stage),
            tuple(sc.batch_size for sc in config.per_stage),
            tuple(sc.replicas for sc in config.per_stage),
        )
        if best_key is None or key < best_key:
            best_key = key
            best = config
    if best is None:
        raise InfeasibleError("no feasible configuration under the given capacity")
    return best


def solve_exhaustive_scalar(
    space: ConfigSpace, demand: float, weights: MetricWeights
) -> tuple[PipelineConfig, float]:
    """Reference solver: plain loop in enumeration order, first max wins."""
    best = None
    best_val = -np.inf
    for config in space.iter_configs():
        if not check_feasible(space.spec, config, space.capacity).ok:
            continue
        m = pipeline_metrics(space.spec, config, demand)
        val = objective(qos(m, weights), m.cost, weights)
        if val > best_val:
            best_val = val
            best = config
    if best is None:
        raise InfeasibleError("no feasible configuration under the given capacity")
    return best, float(best_val)


@dataclass(frozen=True)
class _StageTable:
    """Per-choice metric columns for one stage, in choice-id order."""

    accuracy: np.ndarray
    cost: np.ndarray
    resource: np.ndarray
    latency: np.ndarray
    throughput: np.ndarray


def _stage_table(space: ConfigSpace, stage: int) -> _StageTable:
    size = space.stage_size(stage)
    variants = space.spec.stages[stage].variants
    acc = np.empty(size)
    cost = np.empty(size)
    res = np.empty(size)
    lat = np.empty(size)
    thr = np.empty(size)
    for k in range(size):
        sc = space.stage_choice(stage, k)
        v = variants[sc.variant_index]
        acc[k] = v.accuracy
        cost[k] = sc.replicas * v.cost_per_replica
        res[k] = v.resource_per_replica * sc.replicas
        l = stage_latency(v, sc.batch_size)
        lat[k] = l
        thr[k] = sc.replicas * sc.batch_size / l
    return _StageTable(acc, cost, res, lat, thr)


class ExhaustiveSolver:
    """Chunked vectorized argmax over every configuration in a space."""

    def __init__(self, space: ConfigSpace, weights: MetricWeights, chunk_size: int = 262_144):
        if chunk_size < 1:
            raise ValueError("chunk_size must be positive")
        self.space = space
        self.weights = weights
        self.chunk_size = chunk_size
        self.tables = [_stage_table(space, s) for s in range(space.num_stages)]
        sizes = [space.stage_size(s) for s in range(space.num_stages)]
        suffix = [1] * len(sizes)
        for s in range(len(sizes) - 2, -1, -1):
            suffix[s] = suffix[s + 1] * sizes[s + 1]
        self._sizes = sizes
        self._suffix = suffix

    def solve(self, demand: float) -> tuple[PipelineConfig, float, float]:
        """Best (config, objective value, elapsed seconds) at ``demand``."""
        if demand < 0:
            raise ValueError(f"demand must be nonnegative, got {demand}")
        start_time = time.perf_counter()
        w = self.weights
        w_max = self.space.capacity.w_max
        total = self.space.size
        best_val = -np.inf
        best_flat = -1
        for start in range(0, total, self.chunk_size):
            flat = np.arange(start, min(start + self.chunk_size, total), dtype=np.int64)
            acc = np.zeros(len(flat))
            cost = np.zeros(len(flat))
            lat = np.zeros(len(flat))
            res = np.zeros(len(flat))
            thr = np.full(len(flat), np.inf)
            for s, table in enumerate(self.tables):
                ks = (flat // self._suffix[s]) % self._sizes[s]
                acc = acc + table.accuracy[ks]
                cost = cost + table.cost[ks]
                lat = lat + table.latency[ks]
                res = res + table.resource[ks]
                thr = np.minimum(thr, table.throughput[ks])
            e = demand - thr
            base = w.alpha * acc + w.beta_q * thr - lat
            q = np.where(e >= 0, base - w.gamma_q * e, base - w.delta_q * (-e))
            obj = q - w.lambda_obj * cost
            obj[res > w_max] = -np.inf
            k = int(np.argmax(obj))
            if obj[k] > best_val:
                best_val = float(obj[k])
                best_flat = start + k
        if best_flat < 0 or best_val == -np.inf:
            raise InfeasibleError("no feasible configuration under the given capacity")
        per_stage = []
        for s in range(self.space.num_stages):
            choice = (best_flat // self._suffix[s]) % self._sizes[s]
            per_stage.append(self.space.stage_choice(s, int(choice)))
        config = PipelineConfig(per_stage=tuple(per_stage))
        return config, best_val, time.perf_counter() - start_time


def solver_policy(
    spec: PipelineSpec,
    capacity: Capacity,
    demand: float,
    weights: MetricWeights,
    batch_choices: tuple[int, ...] = (),
) -> tuple[PipelineConfig, float]:
    """One-shot exhaustive solve; returns (best config, elapsed seconds)."""
    space = ConfigSpace(spec, capacity, batch_choices=batch_choices)
    config, _, elapsed = ExhaustiveSolver(space, weights).solve(demand)
    return config, elapsed


class RandomPolicy:
    """Uniform per-stage draws, seed-deterministic."""

    name = "random"

    def __init__(self, space: ConfigSpace, seed: int = 0):
        self.space = space
        self.rng = np.random.default_rng(seed)

    def select(self, ctx) -> PipelineConfig:
        return random_config(self.space, self.rng)


class GreedyPolicy:
    """Min-cost configuration, computed once (it is demand-independent)."""

    name = "greedy"

    def __init__(self, space: ConfigSpace):
        self.space = space
        self._config = greedy_policy(space.spec, space.capacity, space.batch_choices)

    def select(self, ctx) -> PipelineConfig:
        return self._config


class SolverPolicy:
    """Exhaustive re-solve every step at the predicted load."""

    name = "solver"

    def __init__(self, space: ConfigSpace, weights: MetricWeights, chunk_size: int = 262_144):
        self.solver = ExhaustiveSolver(space, weights, chunk_size=chunk_size)

    def select(self, ctx) -> PipelineConfig:
        config, _, _ = self.solver.solve(ctx.cluster.predicted_load)
        return config
