"""Baseline policies: random bounds, greedy min-cost, solver vs brute force."""

import numpy as np
import pytest

from pipetune.baselines import (
    ExhaustiveSolver,
    GreedyPolicy,
    InfeasibleError,
    RandomPolicy,
    SolverPolicy,
    greedy_policy,
    random_config,
    solve_exhaustive_scalar,
    solver_policy,
)
from pipetune.env import ClusterState, DecisionContext
from pipetune.pipeline import (
    Capacity,
    ConfigSpace,
    MetricWeights,
    ModelVariant,
    PipelineSpec,
    StageSpec,
    check_feasible,
    objective,
    pipeline_metrics,
    qos,
)


def make_variant(vid, accuracy, cost, resource, base, per_item):
    return ModelVariant(
        id=vid,
        accuracy=accuracy,
        cost_per_replica=cost,
        resource_per_replica=resource,
        base_latency=base,
        per_item_latency=per_item,
    )


def two_variant_stage(name):
    return StageSpec(
        name=name,
        variants=(
            make_variant(0, 0.70, 0.5, 0.5, 0.030, 0.008),
            make_variant(1, 0.80, 1.0, 1.0, 0.040, 0.010),
        ),
    )


def small_spec():
    return PipelineSpec(stages=(two_variant_stage("a"), two_variant_stage("b")))


def random_spec(rng, max_stages=3, max_variants=3):
    stages = []
    for i in range(int(rng.integers(1, max_stages + 1))):
        variants = tuple(
            make_variant(
                j,
                float(rng.uniform(0.5, 1.0)),
                float(rng.uniform(0.2, 2.0)),
                float(rng.uniform(0.2, 1.5)),
                float(rng.uniform(0.005, 0.1)),
                float(rng.uniform(0.001, 0.02)),
            )
            for j in range(int(rng.integers(1, max_variants + 1)))
        )
        stages.append(StageSpec(name=f"s{i}", variants=variants))
    return PipelineSpec(stages=tuple(stages))


def ctx_with_load(load):
    return DecisionContext(
        observation=np.zeros(1),
        cluster=ClusterState(1.0, load, load),
        step_index=0,
    )


def test_random_config_within_bounds():
    space = ConfigSpace(small_spec(), Capacity(f_max=4, b_max=8, w_max=100.0))
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        cfg = random_config(space, rng)
        for sc in cfg.per_stage:
            assert 0 <= sc.variant_index < 2
            assert 1 <= sc.replicas <= 4
            assert sc.batch_size in (1, 2, 4, 8)


def test_random_config_deterministic():
    space = ConfigSpace(small_spec(), Capacity(f_max=4, b_max=8, w_max=100.0))
    a = [random_config(space, np.random.default_rng(7)) for _ in range(50)]
    b = [random_config(space, np.random.default_rng(7)) for _ in range(50)]
    assert a == b


def test_random_config_uniform_variants():
    space = ConfigSpace(small_spec(), Capacity(f_max=4, b_max=8, w_max=100.0))
    rng = np.random.default_rng(1)
    picks = np.array([random_config(space, rng).per_stage[0].variant_index for _ in range(10_000)])
    freq = picks.mean()
    assert 0.49 <= freq <= 0.51


def test_greedy_picks_cheapest_variants():
    cfg = greedy_policy(small_spec(), Capacity(f_max=2, b_max=2, w_max=4.0))
    assert all(sc.variant_index == 0 for sc in cfg.per_stage)
    assert all(sc.replicas == 1 for sc in cfg.per_stage)


def test_greedy_singleton_space():
    spec = PipelineSpec(
        stages=(StageSpec(name="one", variants=(make_variant(0, 0.9, 1.0, 1.0, 0.05, 0.0),)),)
    )
    cfg = greedy_policy(spec, Capacity(f_max=1, b_max=1, w_max=2.0))
    assert cfg.per_stage[0].variant_index == 0
    assert cfg.per_stage[0].replicas == 1
    assert cfg.per_stage[0].batch_size == 1


def test_greedy_tie_breaks_on_throughput():
    # equal costs, variant 1 has lower latency so higher throughput
    spec = PipelineSpec(
        stages=(
            StageSpec(
                name="a",
                variants=(
                    make_variant(0, 0.7, 1.0, 1.0, 0.050, 0.010),
                    make_variant(1, 0.7, 1.0, 1.0, 0.020, 0.004),
                ),
            ),
        )
    )
    cfg = greedy_policy(spec, Capacity(f_max=2, b_max=4, w_max=8.0))
    assert cfg.per_stage[0].variant_index == 1


def test_greedy_matches_exhaustive_min_cost():
    rng = np.random.default_rng(2)
    for _ in range(10):
        spec = random_spec(rng)
        cap = Capacity(f_max=2, b_max=4, w_max=float(rng.uniform(1.5, 6.0)))
        try:
            cfg = greedy_policy(spec, cap)
        except InfeasibleError:
            continue
        space = ConfigSpace(spec, cap)
        feasible_costs = [
            pipeline_metrics(spec, c, 0.0).cost
            for c in space.iter_configs()
            if check_feasible(spec, c, cap).ok
        ]
        assert pipeline_metrics(spec, cfg, 0.0).cost == pytest.approx(min(feasible_costs))


def test_greedy_infeasible_raises():
    with pytest.raises(InfeasibleError):
        greedy_policy(small_spec(), Capacity(f_max=2, b_max=2, w_max=0.1))


def test_solver_single_stage_brute_force():
    spec = PipelineSpec(stages=(two_variant_stage("only"),))
    cap = Capacity(f_max=2, b_max=2, w_max=4.0)
    weights = MetricWeights(alpha=1.0, beta_q=0.01, gamma_q=0.1, delta_q=0.01, lambda_obj=0.1)
    demand = 60.0
    space = ConfigSpace(spec, cap)
    assert space.size == 8

    vals = []
    for c in space.iter_configs():
        m = pipeline_metrics(spec, c, demand)
        vals.append(objective(qos(m, weights), m.cost, weights))
    best_by_hand = list(space.iter_configs())[int(np.argmax(vals))]

    cfg, elapsed = solver_policy(spec, cap, demand, weights)
    assert cfg == best_by_hand
    assert elapsed >= 0.0


def test_solver_scalar_and_vectorized_agree():
    rng = np.random.default_rng(3)
    weights = MetricWeights(alpha=1.0, beta_q=0.02, gamma_q=0.2, delta_q=0.01, lambda_obj=0.15)
    for trial in range(15):
        spec = random_spec(rng)
        cap = Capacity(f_max=3, b_max=4, w_max=float(rng.uniform(2.0, 8.0)))
        space = ConfigSpace(spec, cap, batch_choices=(1, 2, 3, 4))
        demand = float(rng.uniform(0, 150))
        try:
            ref_cfg, ref_val = solve_exhaustive_scalar(space, demand, weights)
        except InfeasibleError:
            with pytest.raises(InfeasibleError):
                ExhaustiveSolver(space, weights).solve(demand)
            continue
        # small chunks force the cross-chunk tie-break path
        cfg, val, _ = ExhaustiveSolver(space, weights, chunk_size=17).solve(demand)
        assert cfg == ref_cfg, f"trial {trial}"
        assert val == ref_val


def test_solver_high_lambda_matches_greedy_on_singleton_batches():
    spec = small_spec()
    cap = Capacity(f_max=2, b_max=1, w_max=6.0)
    weights = MetricWeights(lambda_obj=1e6)
    cfg, _ = solver_policy(spec, cap, demand=50.0, weights=weights)
    assert cfg == greedy_policy(spec, cap)


def test_solver_zero_demand_free_slack_picks_accurate_variants():
    # same latency profile, higher accuracy on variant 1; slack costs nothing
    stage = StageSpec(
        name="a",
        variants=(
            make_variant(0, 0.60, 1.0, 1.0, 0.030, 0.005),
            make_variant(1, 0.90, 1.0, 1.0, 0.030, 0.005),
        ),
    )
    spec = PipelineSpec(stages=(stage, stage))
    cap = Capacity(f_max=2, b_max=2, w_max=8.0)
    weights = MetricWeights(alpha=1.0, beta_q=0.05, gamma_q=0.1, delta_q=0.0, lambda_obj=0.0)
    cfg, _ = solver_policy(spec, cap, demand=0.0, weights=weights)
    assert all(sc.variant_index == 1 for sc in cfg.per_stage)


def test_solver_infeasible_raises():
    with pytest.raises(InfeasibleError):
        solver_policy(small_spec(), Capacity(f_max=2, b_max=2, w_max=0.1), 10.0, MetricWeights())


def test_solver_elapsed_grows_with_space():
    weights = MetricWeights()
    small = ConfigSpace(small_spec(), Capacity(f_max=2, b_max=2, w_max=100.0))
    big_spec = PipelineSpec(
        stages=(two_variant_stage("a"), two_variant_stage("b"), two_variant_stage("c"))
    )
    big = ConfigSpace(big_spec, Capacity(f_max=4, b_max=8, w_max=100.0), batch_choices=(1, 2, 4, 8))
    assert big.size > 50 * small.size
    t_small = min(ExhaustiveSolver(small, weights).solve(40.0)[2] for _ in range(3))
    t_big = min(ExhaustiveSolver(big, weights).solve(40.0)[2] for _ in range(3))
    assert t_big > t_small


def test_policy_adapters():
    spec = small_spec()
    cap = Capacity(f_max=2, b_max=4, w_max=6.0)
    space = ConfigSpace(spec, cap)
    weights = MetricWeights()

    rand = RandomPolicy(space, seed=4)
    greedy = GreedyPolicy(space)
    solver = SolverPolicy(space, weights)

    ctx = ctx_with_load(55.0)
    for policy in (rand, greedy, solver):
        cfg = policy.select(ctx)
        assert len(cfg) == 2

    # greedy is constant; solver matches a direct solve at the context load
    assert greedy.select(ctx) == greedy.select(ctx_with_load(10.0))
    direct, _ = solver_policy(spec, cap, 55.0, weights)
    assert solver.select(ctx) == direct

    # random adapter is deterministic per seed
    first = RandomPolicy(space, seed=4)
    again = RandomPolicy(space, seed=4)
    assert [first.select(ctx) for _ in range(5)] == [again.select(ctx) for _ in range(5)]
