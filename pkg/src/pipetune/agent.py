"""PPO agent for per-interval pipeline configuration.

A residual feature extractor feeds three categorical heads per stage
(variant, replicas, batch) plus a scalar value head.  Training
follows the clipped-surrogate objective with GAE advantages and an
entropy bonus; every ``expert_frequency``-th episode replays an
expert policy's actions, and those samples contribute an imitation
log-likelihood term instead of the ratio term (switchable).  All
gradients are hand-derived on the neuralnet kernel.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .env import PipelineEnv, StepInfo
from .nn import (
    AdamState,
    Affine,
    Param,
    ResidualBlock,
    adam_update,
    categorical_sample,
    load_params_into,
    log_softmax,
    relu,
    save_params,
    softmax,
)
from .pipeline import ConfigSpace, PipelineConfig

MODEL_KIND = "config-policy"
HEAD_NAMES = ("variant", "replicas", "batch")


@dataclass(frozen=True)
class PpoHyper:
    clip_epsilon: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    discount: float = 0.99
    gae_lambda: float = 0.95
    epochs: int = 4
    minibatch_size: int = 64
    expert_frequency: int = 4
    imitation_weight: float = 1.0
    expert_mode: str = "imitation"
    learning_rate: float = 3e-4

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must be in (0, 1)")
        if min(self.value_coef, self.entropy_coef, self.imitation_weight) < 0:
            raise ValueError("loss coefficients must be >= 0")
        if not 0.0 <= self.discount <= 1.0 or not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("discount and gae_lambda must be in [0, 1]")
        if self.epochs < 1 or self.minibatch_size < 1 or self.expert_frequency < 1:
            raise ValueError("epochs, minibatch_size, expert_frequency must be >= 1")
        if self.expert_mode not in ("imitation", "ratio"):
            raise ValueError(f"expert_mode must be 'imitation' or 'ratio', got {self.expert_mode!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


class PolicyModel:
    """Residual trunk with per-stage categorical heads and a value head."""

    def __init__(
        self,
        space: ConfigSpace,
        obs_size: int,
        hidden: int = 64,
        blocks: int = 2,
        seed: int = 0,
    ):
        rng = np.random.default_rng(seed)
        self.space = space
        self.obs_size = obs_size
        self.hidden = hidden
        self.num_blocks = blocks
        self.input = Affine(obs_size, hidden, rng, name="extractor.in")
        self.blocks = [ResidualBlock(hidden, rng, name=f"extractor.res{i}") for i in range(blocks)]
        self.heads: list[list[Affine]] = []
        for n in range(space.num_stages):
            sizes = space.head_sizes(n)
            self.heads.append(
                [
                    Affine(hidden, k, rng, name=f"head.s{n}.{part}")
                    for part, k in zip(HEAD_NAMES, sizes)
                ]
            )
        self.value_head = Affine(hidden, 1, rng, name="value")
        self._pre_relu = None

    def params(self) -> list[Param]:
        out = self.input.params()
        for block in self.blocks:
            out += block.params()
        for stage_heads in self.heads:
            for head in stage_heads:
                out += head.params()
        out += self.value_head.params()
        return out

    def flat_heads(self) -> list[Affine]:
        return [head for stage_heads in self.heads for head in stage_heads]

    def trunk_forward(self, states: np.ndarray) -> np.ndarray:
        pre = self.input.forward(states)
        self._pre_relu = pre
        h = relu(pre)
        for block in self.blocks:
            h = block.forward(h)
        return h

    def trunk_backward(self, dfeat: np.ndarray) -> np.ndarray:
        dh = dfeat
        for block in reversed(self.blocks):
            dh = block.backward(dh)
        return self.input.backward(dh * (self._pre_relu > 0))

    def save(self, path, extra_meta: dict | None = None):
        meta = {
            "obs_size": self.obs_size,
            "hidden": self.hidden,
            "blocks": self.num_blocks,
            "head_sizes": [list(self.space.head_sizes(n)) for n in range(self.space.num_stages)],
            "batch_choices": list(self.space.batch_choices),
        }
        meta.update(extra_meta or {})
        save_params(path, self.params(), kind=MODEL_KIND, meta=meta)

    @classmethod
    def load(cls, path, space: ConfigSpace) -> "PolicyModel":
        import json

        with open(path) as fh:
            meta = json.load(fh).get("meta", {})
        model = cls(
            space,
            obs_size=int(meta["obs_size"]),
            hidden=int(meta.get("hidden", 64)),
            blocks=int(meta.get("blocks", 2)),
        )
        stored_sizes = [tuple(s) for s in meta["head_sizes"]]
        own_sizes = [space.head_sizes(n) for n in range(space.num_stages)]
        if stored_sizes != own_sizes:
            raise ValueError(
                f"checkpoint head sizes {stored_sizes} do not match the space {own_sizes}"
            )
        load_params_into(path, MODEL_KIND, model.params())
        return model


@dataclass(frozen=True)
class ActionSample:
    """One decision: per-stage head indices plus its evaluation."""

    indices: tuple[tuple[int, int, int], ...]
    config: PipelineConfig
    log_prob: float
    value: float
    entropies: tuple[float, ...]


def policy_evaluate(
    model: PolicyModel,
    state: np.ndarray,
    mode: str = "sample",
    rng: np.random.Generator | None = None,
    forced=None,
) -> ActionSample:
    """Evaluate the policy on one state.

    ``sample`` draws each head from its categorical (needs ``rng``),
    ``greedy`` takes per-head argmax.  ``forced`` pins the action to
    the given per-stage index triples (used when replaying expert
    decisions) and just evaluates it.
    """
    state = np.asarray(state, dtype=float)
    if state.shape != (model.obs_size,):
        raise ValueError(f"state shape {state.shape} != ({model.obs_size},)")
    if mode not in ("sample", "greedy"):
        raise ValueError(f"mode must be 'sample' or 'greedy', got {mode!r}")
    if mode == "sample" and rng is None and forced is None:
        raise ValueError("sampling needs an rng")

    feat = model.trunk_forward(state[None, :])
    value = float(model.value_head.forward(feat)[0, 0])
    if forced is not None:
        forced = [tuple(int(i) for i in triple) for triple in forced]
        if len(forced) != model.space.num_stages:
            raise ValueError(f"forced action has {len(forced)} stages, expected {model.space.num_stages}")

    indices = []
    log_prob = 0.0
    entropies = []
    for n, stage_heads in enumerate(model.heads):
        triple = []
        for h, head in enumerate(stage_heads):
            logits = head.forward(feat)[0]
            logp = log_softmax(logits)
            probs = softmax(logits)
            if forced is not None:
                a = forced[n][h]
                if not 0 <= a < len(logits):
                    raise ValueError(f"forced index {a} out of range for head {head.w.name}")
            elif mode == "greedy":
                a = int(np.argmax(logits))
            else:
                a = categorical_sample(rng, probs)
            triple.append(a)
            log_prob += float(logp[a])
            entropies.append(float(-(probs * logp).sum()))
        indices.append(tuple(triple))

    indices = tuple(indices)
    return ActionSample(
        indices=indices,
        config=model.space.config_from_indices(indices),
        log_prob=log_prob,
        value=value,
        entropies=tuple(entropies),
    )


@dataclass
class Trajectory:
    """One episode's transitions in collection order."""

    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    expert_flags: list = field(default_factory=list)

    def append(self, state, action_indices, log_prob, reward, value, expert: bool):
        self.states.append(np.asarray(state, dtype=float))
        self.actions.append(tuple(action_indices))
        self.log_probs.append(float(log_prob))
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.expert_flags.append(bool(expert))

    def __len__(self) -> int:
        return len(self.states)


def compute_advantages(
    rewards,
    values,
    discount: float,
    gae_lambda: float,
    normalize: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """GAE advantages and value targets.

    ``values`` must hold one more entry than ``rewards`` (the bootstrap
    value of the state after the last step; 0 for terminal).  Targets
    are raw advantages plus values; advantages are then normalized to
    zero mean and unit variance when requested.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    if v.shape != (len(r) + 1,):
        raise ValueError(f"need len(rewards)+1 values, got {len(r)} rewards and {len(v)} values")
    if len(r) == 0:
        raise ValueError("empty trajectory")
    adv = np.empty(len(r))
    running = 0.0
    for t in range(len(r) - 1, -1, -1):
        delta = r[t] + discount * v[t + 1] - v[t]
        running = delta + discount * gae_lambda * running
        adv[t] = running
    targets = adv + v[:-1]
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, targets


@dataclass(frozen=True)
class PpoBatch:
    """Aligned update arrays cut from one or more trajectories."""

    states: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    value_targets: np.ndarray
    expert_flags: np.ndarray

    def __len__(self) -> int:
        return len(self.states)

    def take(self, idx) -> "PpoBatch":
        return PpoBatch(
            states=self.states[idx],
            actions=self.actions[idx],
            old_log_probs=self.old_log_probs[idx],
            advantages=self.advantages[idx],
            value_targets=self.value_targets[idx],
            expert_flags=self.expert_flags[idx],
        )

    @classmethod
    def from_trajectory(
        cls, traj: Trajectory, advantages: np.ndarray, value_targets: np.ndarray
    ) -> "PpoBatch":
        if not len(traj) == len(advantages) == len(value_targets):
            raise ValueError("trajectory and advantage lengths differ")
        return cls(
            states=np.stack(traj.states),
            actions=np.asarray(traj.actions, dtype=np.int64),
            old_log_probs=np.asarray(traj.log_probs),
            advantages=np.asarray(advantages, dtype=float),
            value_targets=np.asarray(value_targets, dtype=float),
            expert_flags=np.asarray(traj.expert_flags, dtype=bool),
        )


@dataclass(frozen=True)
class LossBreakdown:
    """Batch-mean loss components (terms as maximized/measured, not weighted)."""

    clip_term: float
    value_term: float
    entropy_term: float
    imitation_term: float
    total: float

    @property
    def policy_loss(self) -> float:
        """The minimized policy portion: −(surrogate + imitation)."""
        return -(self.clip_term + self.imitation_term)

    @property
    def value_loss(self) -> float:
        return self.value_term


def ppo_loss(
    model: PolicyModel, batch: PpoBatch, hyper: PpoHyper, accumulate_grads: bool = True
) -> LossBreakdown:
    """Clipped-surrogate PPO loss over one minibatch.

    total = −(clip + w·imitation + c2·entropy) + c1·valueMSE, where the
    clip term covers ratio samples and the imitation term (expert
    samples, weighted by ``imitation_weight``) is their log-likelihood
    under the current policy.  With ``accumulate_grads`` the exact
    analytic gradient lands in the model's parameter grads.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    b = len(batch)
    eps = hyper.clip_epsilon
    feat = model.trunk_forward(batch.states)
    values = model.value_head.forward(feat)[:, 0]

    # ratio samples: expert rows too when expert_mode == "ratio"
    use_ratio = (
        np.ones(b, dtype=bool) if hyper.expert_mode == "ratio" else ~batch.expert_flags
    )
    new_log_probs = np.zeros(b)
    entropy = np.zeros(b)
    head_cache = []
    for n, stage_heads in enumerate(model.heads):
        for h, head in enumerate(stage_heads):
            logits = head.forward(feat)
            logp = log_softmax(logits, axis=1)
            probs = softmax(logits, axis=1)
            acts = batch.actions[:, n, h]
            new_log_probs += logp[np.arange(b), acts]
            head_entropy = -(probs * logp).sum(axis=1)
            entropy += head_entropy
            head_cache.append((head, probs, logp, acts, head_entropy))

    ratios = np.exp(new_log_probs - batch.old_log_probs)
    adv = batch.advantages
    surr_raw = ratios * adv
    surr_clip = np.clip(ratios, 1.0 - eps, 1.0 + eps) * adv
    surrogate = np.minimum(surr_raw, surr_clip)

    err = values - batch.value_targets

    clip_term = float(surrogate[use_ratio].sum() / b)
    imitation_term = float(new_log_probs[~use_ratio].sum() / b)
    entropy_term = float(entropy.mean())
    value_term = float((err**2).mean())
    total = (
        -(clip_term + hyper.imitation_weight * imitation_term + hyper.entropy_coef * entropy_term)
        + hyper.value_coef * value_term
    )
    if not np.isfinite(total):
        raise FloatingPointError("non-finite PPO loss")

    breakdown = LossBreakdown(
        clip_term=clip_term,
        value_term=value_term,
        entropy_term=entropy_term,
        imitation_term=imitation_term,
        total=total,
    )
    if not accumulate_grads:
        return breakdown

    # d(total)/d(new_log_prob): ratio rows flow iff the unclipped branch
    # is the active min; imitation rows get the flat imitation weight.
    dlogp = np.where(
        use_ratio,
        np.where(surr_raw <= surr_clip, ratios * adv, 0.0) * (-1.0 / b),
        -hyper.imitation_weight / b,
    )
    dentropy = -hyper.entropy_coef / b
    dfeat = np.zeros_like(feat)
    for head, probs, logp, acts, head_entropy in head_cache:
        dlogits = -probs.copy()
        dlogits[np.arange(b), acts] += 1.0
        dlogits *= dlogp[:, None]
        # per-head entropy gradient: dH/dz = −p(logp + H)
        dlogits += dentropy * (-probs * (logp + head_entropy[:, None]))
        dfeat += head.backward(dlogits)
    dvalues = hyper.value_coef * 2.0 * err / b
    dfeat += model.value_head.backward(dvalues[:, None])
    model.trunk_backward(dfeat)
    return breakdown


def ppo_update(
    model: PolicyModel,
    batch: PpoBatch,
    hyper: PpoHyper,
    optimizer: AdamState,
    rng: np.random.Generator,
) -> LossBreakdown:
    """Minibatch-epoch Adam optimization of the PPO loss over ``batch``.

    The stored old log-probabilities act as the frozen behavior policy.
    Returns the mean loss breakdown across all optimization steps.
    """
    sums = np.zeros(5)
    steps = 0
    for _ in range(hyper.epochs):
        order = rng.permutation(len(batch))
        for start in range(0, len(order), hyper.minibatch_size):
            idx = order[start : start + hyper.minibatch_size]
            part = ppo_loss(model, batch.take(idx), hyper, accumulate_grads=True)
            adam_update(optimizer, model.params())
            sums += (
                part.clip_term,
                part.value_term,
                part.entropy_term,
                part.imitation_term,
                part.total,
            )
            steps += 1
    mean = sums / steps
    return LossBreakdown(
        clip_term=float(mean[0]),
        value_term=float(mean[1]),
        entropy_term=float(mean[2]),
        imitation_term=float(mean[3]),
        total=float(mean[4]),
    )


@dataclass(frozen=True)
class CurvePoint:
    episode: int
    mean_reward: float
    policy_loss: float
    value_loss: float
    expert_episode: bool


@dataclass(frozen=True)
class TrainResult:
    model: PolicyModel
    curves: list[CurvePoint]
    expert_fallbacks: int


def train_agent(
    env_factory,
    space: ConfigSpace,
    hyper: PpoHyper,
    episodes: int,
    seed: int = 0,
    expert=None,
    model: PolicyModel | None = None,
    hidden: int = 64,
    blocks: int = 2,
) -> TrainResult:
    """Expert-guided PPO training loop.

    ``env_factory(episode)`` builds the episode's environment (1-based
    index).  Every ``expert_frequency``-th episode executes the expert
    policy's actions and marks those samples; the rest sample from the
    current policy.  One PPO update runs after each episode.  Fully
    deterministic in (factory, hyper, episodes, seed).
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = np.random.default_rng(seed)
    probe_env = env_factory(1)
    if model is None:
        model = PolicyModel(space, probe_env.observation_size, hidden=hidden, blocks=blocks, seed=seed)
    optimizer = AdamState(learning_rate=hyper.learning_rate)
    curves: list[CurvePoint] = []
    fallbacks = 0

    for episode in range(1, episodes + 1):
        env = env_factory(episode)
        obs = env.reset()
        expert_episode = expert is not None and episode % hyper.expert_frequency == 0
        traj = Trajectory()
        done = False
        while not done:
            expert_step = expert_episode
            sample = None
            if expert_step:
                try:
                    expert_config = expert.select(env.decision_context())
                    sample = policy_evaluate(
                        model, obs, forced=space.indices_of(expert_config)
                    )
                except Exception:
                    fallbacks += 1
                    expert_step = False
            if sample is None:
                sample = policy_evaluate(model, obs, mode="sample", rng=rng)
            next_obs, r, done, _ = env.step(sample.config)
            traj.append(obs, sample.indices, sample.log_prob, r, sample.value, expert_step)
            obs = next_obs

        values = traj.values + [0.0]
        advantages, targets = compute_advantages(
            traj.rewards, values, hyper.discount, hyper.gae_lambda
        )
        batch = PpoBatch.from_trajectory(traj, advantages, targets)
        breakdown = ppo_update(model, batch, hyper, optimizer, rng)
        curves.append(
            CurvePoint(
                episode=episode,
                mean_reward=float(np.mean(traj.rewards)),
                policy_loss=breakdown.policy_loss,
                value_loss=breakdown.value_loss,
                expert_episode=expert_episode,
            )
        )
    return TrainResult(model=model, curves=curves, expert_fallbacks=fallbacks)


class AgentPolicy:
    """Greedy-mode policy adapter around a trained model."""

    name = "ppo"

    def __init__(self, model: PolicyModel):
        self.model = model

    def select(self, ctx) -> PipelineConfig:
        return policy_evaluate(self.model, ctx.observation, mode="greedy").config


@dataclass(frozen=True)
class StepRecord:
    info: StepInfo
    reward: float
    decision_time_s: float


@dataclass(frozen=True)
class EpisodeReport:
    """One evaluated episode: per-step records plus summary scalars."""

    steps: list[StepRecord]
    cumulative_decision_time_s: float

    @property
    def mean_reward(self) -> float:
        return float(np.mean([s.reward for s in self.steps]))

    @property
    def mean_qos(self) -> float:
        return float(np.mean([s.info.qos_value for s in self.steps]))

    @property
    def mean_cost(self) -> float:
        return float(np.mean([s.info.metrics.cost for s in self.steps]))

    @property
    def mean_objective(self) -> float:
        return float(np.mean([s.info.objective_value for s in self.steps]))

    @property
    def decision_times_s(self) -> list[float]:
        return [s.decision_time_s for s in self.steps]


def run_online(env: PipelineEnv, policy) -> EpisodeReport:
    """Run one episode, timing only the action-selection call each step.

    The decision time d_t brackets ``policy.select`` alone; observing,
    prediction, and the simulated step fall outside the timer.  The
    cumulative time is the exact sum of the recorded d_t.
    """
    env.reset()
    records: list[StepRecord] = []
    done = False
    while not done:
        ctx = env.decision_context()
        t0 = time.perf_counter()
        config = policy.select(ctx)
        d_t = time.perf_counter() - t0
        _, r, done, info = env.step(config)
        records.append(StepRecord(info=info, reward=r, decision_time_s=d_t))
    return EpisodeReport(
        steps=records,
        cumulative_decision_time_s=float(sum(rec.decision_time_s for rec in records)),
    )
