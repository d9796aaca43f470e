"""Environment: observation layout, reward oracle, repair rule, episode mechanics."""

import math

import numpy as np
import pytest

from pipetune.env import (
    ClusterState,
    ObsScales,
    PipelineEnv,
    RewardParams,
    StageFeatures,
    StateError,
    aggregate_batches,
    observe,
    repair_config,
    reward,
    total_resource,
)
from pipetune.pipeline import (
    Capacity,
    MetricWeights,
    ModelVariant,
    PipelineConfig,
    PipelineSpec,
    StageConfig,
    StageSpec,
    check_feasible,
    pipeline_metrics,
    qos,
)
from pipetune.workload import Pattern, generate_trace


def make_variant(vid, accuracy, cost, resource, base, per_item):
    return ModelVariant(
        id=vid,
        accuracy=accuracy,
        cost_per_replica=cost,
        resource_per_replica=resource,
        base_latency=base,
        per_item_latency=per_item,
    )


def two_stage_spec():
    s1 = StageSpec(
        name="detect",
        variants=(
            make_variant(0, 0.70, 0.5, 0.5, 0.030, 0.008),
            make_variant(1, 0.80, 1.0, 1.0, 0.040, 0.010),
        ),
    )
    s2 = StageSpec(
        name="classify",
        variants=(
            make_variant(0, 0.60, 0.4, 0.4, 0.015, 0.004),
            make_variant(1, 0.70, 0.5, 0.5, 0.020, 0.005),
        ),
    )
    return PipelineSpec(stages=(s1, s2))


def make_env(w_max=8.0, interval=10, duration=200, reward_params=None, predict_fn=None):
    spec = two_stage_spec()
    cap = Capacity(f_max=4, b_max=8, w_max=w_max)
    trace = generate_trace(
        Pattern.CONSTANT, duration, seed=0, params={"mean": 50.0, "noise": 0.0}
    )
    return PipelineEnv(
        spec,
        cap,
        trace,
        reward_params=reward_params,
        interval_s=interval,
        predict_fn=predict_fn,
    )


def test_reward_oracle():
    p = RewardParams(cost_weight=0.1, batch_penalty=0.05)
    b = aggregate_batches([4, 2], "max")
    assert b == 4.0
    assert reward(0.7237, 2.5, b, p) == pytest.approx(0.7237 - 0.25 - 0.2)
    assert reward(0.9, 3.0, 4.0, RewardParams(cost_weight=0.1, batch_penalty=0.0)) == pytest.approx(0.6)
    assert reward(0.9, 3.0, 4.0, RewardParams(cost_weight=0.0, batch_penalty=0.0)) == pytest.approx(0.9)


def test_aggregate_batches_modes():
    assert aggregate_batches([4, 2], "sum") == 6.0
    with pytest.raises(ValueError):
        aggregate_batches([], "max")


def test_reward_params_validation():
    with pytest.raises(ValueError):
        RewardParams(cost_weight=-0.1)
    with pytest.raises(ValueError):
        RewardParams(batch_aggregate="median")


def test_observe_layout_and_node_triple():
    scales = ObsScales(w_max=8.0, load_scale=100.0, f_max=4, b_max=8, variants_per_stage=(2, 2))
    cluster = ClusterState(available_resource=4.0, incoming_load=50.0, predicted_load=75.0)
    features = [
        StageFeatures(latency=0.08, throughput=100.0, variant_index=1, replicas=2, batch_size=4, cost=2.0),
        StageFeatures(latency=0.03, throughput=66.67, variant_index=0, replicas=1, batch_size=2, cost=0.5),
    ]
    v = observe(cluster, features, scales)
    assert v.shape == (18,)
    # node triple repeats per stage block
    assert np.array_equal(v[0:3], v[9:12])
    assert v[0] == pytest.approx(0.5)
    assert v[1] == pytest.approx(0.5)
    assert v[2] == pytest.approx(0.75)
    # stage 0 block: latency/1, thr/load, variant/nv, f/f_max, b/b_max, cost/w_max
    assert v[3] == pytest.approx(0.08)
    assert v[4] == pytest.approx(1.0)
    assert v[5] == pytest.approx(0.5)
    assert v[6] == pytest.approx(0.5)
    assert v[7] == pytest.approx(0.5)
    assert v[8] == pytest.approx(0.25)


def test_observe_zero_everything_is_zero_vector():
    scales = ObsScales(w_max=8.0, load_scale=100.0, f_max=4, b_max=8, variants_per_stage=(2, 2))
    cluster = ClusterState(0.0, 0.0, 0.0)
    features = [StageFeatures(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)] * 2
    assert np.array_equal(observe(cluster, features, scales), np.zeros(18))


def test_observe_wrong_stage_count():
    scales = ObsScales(w_max=8.0, load_scale=100.0, f_max=4, b_max=8, variants_per_stage=(2, 2))
    with pytest.raises(StateError):
        observe(ClusterState(1.0, 1.0, 1.0), [StageFeatures(0, 0, 0, 0, 0, 0)], scales)


def test_repair_decrements_largest_consumer():
    spec = two_stage_spec()
    cap = Capacity(f_max=4, b_max=8, w_max=3.0)
    # resources: stage0 variant1 w=1.0 x3 = 3.0, stage1 variant1 w=0.5 x2 = 1.0, total 4.0
    cfg = PipelineConfig(per_stage=(StageConfig(1, 3, 4), StageConfig(1, 2, 2)))
    fixed, repaired = repair_config(spec, cfg, cap)
    assert repaired
    assert check_feasible(spec, fixed, cap).ok
    # stage 0 is the largest consumer: 3.0 > 1.0, so it loses a replica first
    assert fixed.per_stage[0].replicas == 2
    assert total_resource(spec, fixed) <= 3.0
    # batches are untouched by repair
    assert fixed.per_stage[0].batch_size == 4
    assert fixed.per_stage[1].batch_size == 2


def test_repair_tie_goes_to_earlier_stage():
    v = make_variant(0, 0.7, 1.0, 1.0, 0.02, 0.005)
    spec = PipelineSpec(
        stages=(StageSpec(name="a", variants=(v,)), StageSpec(name="b", variants=(v,)))
    )
    cap = Capacity(f_max=4, b_max=8, w_max=3.0)
    cfg = PipelineConfig(per_stage=(StageConfig(0, 2, 1), StageConfig(0, 2, 1)))
    fixed, repaired = repair_config(spec, cfg, cap)
    assert repaired
    assert fixed.per_stage[0].replicas == 1
    assert fixed.per_stage[1].replicas == 2


def test_repair_noop_when_feasible():
    spec = two_stage_spec()
    cap = Capacity(f_max=4, b_max=8, w_max=8.0)
    cfg = PipelineConfig(per_stage=(StageConfig(0, 1, 1), StageConfig(0, 1, 1)))
    fixed, repaired = repair_config(spec, cfg, cap)
    assert not repaired
    assert fixed == cfg


def test_repair_variant_downgrade_fallback():
    spec = two_stage_spec()
    # even one replica of variant 1 everywhere (1.0 + 0.5) exceeds 1.0
    cap = Capacity(f_max=4, b_max=8, w_max=1.0)
    cfg = PipelineConfig(per_stage=(StageConfig(1, 1, 2), StageConfig(1, 1, 2)))
    fixed, repaired = repair_config(spec, cfg, cap)
    assert repaired
    assert check_feasible(spec, fixed, cap).ok
    # lightest variants: 0.5 + 0.4 = 0.9 fits
    assert fixed.per_stage[0].variant_index == 0


def test_repair_impossible_budget_raises():
    spec = two_stage_spec()
    cap = Capacity(f_max=4, b_max=8, w_max=0.5)
    cfg = PipelineConfig(per_stage=(StageConfig(0, 1, 1), StageConfig(0, 1, 1)))
    with pytest.raises(ValueError):
        repair_config(spec, cfg, cap)


def test_episode_length_and_done():
    env = make_env(duration=200, interval=10)
    assert env.episode_len == 20
    env.reset()
    action = PipelineConfig(per_stage=(StageConfig(0, 1, 2), StageConfig(0, 1, 2)))
    done = False
    steps = 0
    while not done:
        _, _, done, _ = env.step(action)
        steps += 1
    assert steps == 20
    with pytest.raises(RuntimeError):
        env.step(action)


def test_episode_length_partial_interval():
    env = make_env(duration=205, interval=10)
    assert env.episode_len == math.ceil(205 / 10) == 21


def test_observation_size_and_reset():
    env = make_env()
    obs = env.reset()
    assert obs.shape == (env.observation_size,)
    assert env.observation_size == 18
    assert np.all(np.isfinite(obs))


def test_step_reward_matches_hand_computation():
    params = RewardParams(
        qos_weights=MetricWeights(alpha=1.0, beta_q=0.01, gamma_q=0.1, delta_q=0.01),
        cost_weight=0.1,
        batch_penalty=0.05,
    )
    env = make_env(reward_params=params)
    env.reset()
    action = PipelineConfig(per_stage=(StageConfig(1, 2, 4), StageConfig(0, 1, 2)))
    _, r, _, info = env.step(action)
    assert not info.repaired
    m = pipeline_metrics(env.spec, action, info.demand)
    q = qos(m, params.qos_weights)
    expect = q - 0.1 * m.cost - 0.05 * 4
    assert r == pytest.approx(expect, rel=1e-12)
    assert info.qos_value == pytest.approx(q)
    assert info.metrics == m


def test_step_repaired_action_pays_penalty():
    params = RewardParams(repair_penalty=1.5)
    env = make_env(w_max=3.0, reward_params=params)
    env.reset()
    heavy = PipelineConfig(per_stage=(StageConfig(1, 3, 4), StageConfig(1, 2, 2)))
    _, r, _, info = env.step(heavy)
    assert info.repaired
    assert check_feasible(env.spec, info.config, env.capacity).ok
    # same step without the penalty, replayed on a fresh env
    env2 = make_env(w_max=3.0, reward_params=RewardParams(repair_penalty=0.0))
    env2.reset()
    _, r2, _, info2 = env2.step(heavy)
    assert info2.config == info.config
    assert r == pytest.approx(r2 - 1.5)


def test_demand_is_interval_mean():
    spec = two_stage_spec()
    cap = Capacity(f_max=4, b_max=8, w_max=8.0)
    rates = np.concatenate([np.full(10, 30.0), np.full(10, 70.0)])
    from pipetune.workload import WorkloadTrace

    trace = WorkloadTrace(rates=rates, seed=0, pattern=Pattern.CONSTANT)
    env = PipelineEnv(spec, cap, trace, interval_s=10)
    env.reset()
    action = PipelineConfig(per_stage=(StageConfig(0, 1, 1), StageConfig(0, 1, 1)))
    _, _, _, info0 = env.step(action)
    assert info0.demand == pytest.approx(30.0)
    _, _, _, info1 = env.step(action)
    assert info1.demand == pytest.approx(70.0)


def test_predict_fn_feeds_predicted_load():
    env = make_env(predict_fn=lambda window: 123.0)
    env.reset()
    assert env.cluster_state().predicted_load == pytest.approx(123.0)
    env_no = make_env()
    env_no.reset()
    cs = env_no.cluster_state()
    assert cs.predicted_load == cs.incoming_load


def test_available_resource_tracks_config():
    env = make_env(w_max=8.0)
    env.reset()
    action = PipelineConfig(per_stage=(StageConfig(1, 2, 4), StageConfig(1, 1, 2)))
    env.step(action)
    # used = 2x1.0 + 1x0.5
    assert env.cluster_state().available_resource == pytest.approx(8.0 - 2.5)


def test_invalid_action_rejected_not_repaired():
    env = make_env()
    env.reset()
    with pytest.raises(ValueError):
        env.step(PipelineConfig(per_stage=(StageConfig(0, 9, 1), StageConfig(0, 1, 1))))
    with pytest.raises(ValueError):
        env.step(PipelineConfig(per_stage=(StageConfig(0, 1, 99), StageConfig(0, 1, 1))))


def test_env_rejects_impossible_budget():
    spec = two_stage_spec()
    cap = Capacity(f_max=4, b_max=8, w_max=0.5)
    trace = generate_trace(Pattern.CONSTANT, 100, seed=0)
    with pytest.raises(ValueError):
        PipelineEnv(spec, cap, trace)


def test_feasible_after_every_step():
    env = make_env(w_max=3.0, duration=100)
    env.reset()
    rng = np.random.default_rng(5)
    done = False
    while not done:
        action = PipelineConfig(
            per_stage=tuple(
                StageConfig(
                    variant_index=int(rng.integers(0, 2)),
                    replicas=int(rng.integers(1, 5)),
                    batch_size=int(rng.integers(1, 9)),
                )
                for _ in range(2)
            )
        )
        _, _, done, info = env.step(action)
        assert check_feasible(env.spec, info.config, env.capacity).ok


def test_cluster_state_validation():
    with pytest.raises(ValueError):
        ClusterState(-1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        ClusterState(1.0, -2.0, 0.0)
