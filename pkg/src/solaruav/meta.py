"""Meta-training across task variations: fast per-task adaptation of one policy.

Tasks differ in sensor count and placement.  The policy is sized for the
largest sensor count; smaller tasks pad their observations and mask invalid
schedule indices.  Inner adaptation is a plain score-function gradient step
per task; the outer step sums the per-task importance surrogates (ratios
against each task's adapted snapshot, gradients evaluated at the adapted
parameters) and moves the meta-parameters under the pooled KL budget.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .cadrl import (RolloutBatch, UpdateInfo, build_batch, collect_episode,
                    critic_update, natural_step, normalize_advantages, train_cadrl)
from .config import MetaTrainingConfig, ScenarioConfig, TrainingConfig
from .env import UavEnv
from .nets import (ActorParams, CriticArch, CriticParams, actor_forward,
                   actor_subset_mask, clamp_log_std, categorical_kl,
                   discrete_log_prob, flatten_actor, fvp_discrete, fvp_gaussian,
                   gaussian_kl, gaussian_log_prob, gradient, init_actor,
                   init_critic, softmax, unflatten_actor)
from .world import NodeLayout
from . import cadrl as _cadrl


@dataclass(frozen=True)
class TaskDistribution:
    """Family of scenarios sharing everything except sensor count and placement."""

    scenario: ScenarioConfig
    sn_count_min: int
    sn_count_max: int

    def __post_init__(self):
        if not 1 <= self.sn_count_min <= self.sn_count_max:
            raise ValueError("need 1 <= sn_count_min <= sn_count_max")

    @property
    def n_max(self) -> int:
        return self.sn_count_max


@dataclass(frozen=True)
class Task:
    task_id: str
    env: UavEnv


@dataclass
class AdaptedPolicy:
    task_id: str
    actor: ActorParams
    meta_version: int
    inner_steps: int


def sample_tasks(dist: TaskDistribution, count: int,
                 rng: np.random.Generator) -> list[Task]:
    """Draw `count` tasks: sensor count uniform in range, positions uniform."""
    if count < 1:
        raise ValueError("need at least one task")
    tasks = []
    for i in range(count):
        n = int(rng.integers(dist.sn_count_min, dist.sn_count_max + 1))
        positions = rng.uniform(0.0, dist.scenario.area_side, size=(n, 2))
        layout = NodeLayout(sn_positions=positions,
                            dc_position=np.asarray(dist.scenario.dc_position),
                            area_side=dist.scenario.area_side)
        scenario = dataclasses.replace(dist.scenario, n_sns=n, sn_positions=None)
        tasks.append(Task(task_id=f"task-{i}-n{n}", env=UavEnv(layout, scenario)))
    return tasks


# ---------------------------------------------------------------------------
# inner loop


def inner_loss(params: ActorParams, batch: RolloutBatch,
               which: str) -> tuple[float, np.ndarray]:
    """Per-task adaptation surrogate mean(log pi * advantage) and its gradient.

    Larger is better; `inner_adapt` ascends it.  The mean runs over the K*T
    transitions in the task's training batch.
    """
    fields = {"obs": batch.obs, "advantages": batch.advantages, "mask": batch.mask,
              "discrete": batch.discrete, "continuous": batch.continuous}
    value, grad = gradient(f"reinforce_{which}", params, fields)
    return -value, -grad


def adapt_params(params: ActorParams, batch: RolloutBatch, inner_lr: float,
                 inner_steps: int) -> ActorParams:
    """Plain ascent steps on both heads' adaptation surrogates (trunk included)."""
    adapted = params.copy()
    for _ in range(inner_steps):
        _, g_d = inner_loss(adapted, batch, "discrete")
        _, g_c = inner_loss(adapted, batch, "continuous")
        adapted = unflatten_actor(flatten_actor(adapted) + inner_lr * (g_d + g_c),
                                  adapted.arch)
        clamp_log_std(adapted)
    return adapted


def inner_adapt(meta_actor: ActorParams, task: Task, critic: CriticParams,
                meta_cfg: MetaTrainingConfig, train_cfg: TrainingConfig,
                rng_env: np.random.Generator, rng_policy: np.random.Generator,
                pad_to: int, meta_version: int = 0) -> tuple[AdaptedPolicy, RolloutBatch]:
    """Collect K trajectories under the meta-policy and take the inner step(s)."""
    episodes = [collect_episode(task.env, meta_actor, rng_env, rng_policy, k, pad_to)
                for k in range(meta_cfg.trajs_per_task)]
    batch = build_batch(episodes, critic, train_cfg, _row_mask(task.env, pad_to))
    adapted = adapt_params(meta_actor, batch, meta_cfg.inner_lr, meta_cfg.inner_steps)
    policy = AdaptedPolicy(task_id=task.task_id, actor=adapted,
                           meta_version=meta_version,
                           inner_steps=meta_cfg.inner_steps)
    return policy, batch


def _row_mask(env: UavEnv, pad_to: int) -> np.ndarray:
    mask = env.action_mask(pad_to)
    if mask is None:
        mask = np.ones(2 * (pad_to + 1), dtype=bool)
    return mask


# ---------------------------------------------------------------------------
# outer loop


@dataclass
class TaskRollouts:
    task: Task
    adapted: AdaptedPolicy
    train_batch: RolloutBatch
    valid_batch: RolloutBatch
    mask: np.ndarray


def meta_update(meta_actor: ActorParams, rollouts: list[TaskRollouts],
                cfg: TrainingConfig, which: str) -> tuple[ActorParams, UpdateInfo]:
    """One KL-constrained meta step for one head.

    The ascent direction sums each task's surrogate gradient evaluated at its
    adapted parameters (first-order treatment of the inner step); the KL
    budget and curvature are measured at the meta-parameters over the pooled
    validation states.  Advantages are re-normalized over the pool.
    """
    if which not in ("discrete", "continuous"):
        raise ValueError(f"unknown update target {which!r}")
    pooled_adv = normalize_advantages(
        np.concatenate([r.valid_batch.advantages_raw for r in rollouts]))
    slices = []
    start = 0
    for r in rollouts:
        stop = start + len(r.valid_batch)
        slices.append(slice(start, stop))
        start = stop

    grad_sum = None
    surr0 = 0.0
    for r, sl in zip(rollouts, slices):
        batch = r.valid_batch
        fields = {"obs": batch.obs, "advantages": pooled_adv[sl], "mask": batch.mask,
                  "discrete": batch.discrete, "continuous": batch.continuous,
                  "old_log_prob_discrete": batch.log_prob_discrete,
                  "old_log_prob_continuous": batch.log_prob_continuous}
        value, grad = gradient(f"surrogate_{which}", r.adapted.actor, fields)
        grad_sum = grad if grad_sum is None else grad_sum + grad

    obs_pool = np.concatenate([r.valid_batch.obs for r in rollouts])
    mask_pool = np.concatenate([
        np.broadcast_to(r.mask, (len(r.valid_batch), r.mask.shape[0]))
        for r in rollouts])
    logits0, mean0, log_std0, cache = actor_forward(meta_actor, obs_pool, mask_pool)
    probs0 = softmax(logits0)
    active = actor_subset_mask(meta_actor.arch, which)

    def fvp(v):
        if which == "discrete":
            out = fvp_discrete(meta_actor, cache, probs0, v, active)
        else:
            out = fvp_gaussian(meta_actor, cache, log_std0, v, active)
        return out + cfg.cg_damping * (v * active)

    def summed_surrogate(params: ActorParams) -> float:
        total = 0.0
        for r, sl in zip(rollouts, slices):
            batch = r.valid_batch
            logits, mean, log_std, _ = actor_forward(params, batch.obs, batch.mask)
            if which == "discrete":
                logp = discrete_log_prob(logits, batch.discrete)
                ratio = np.exp(logp - batch.log_prob_discrete)
            else:
                logp = gaussian_log_prob(mean, log_std, batch.continuous)
                ratio = np.exp(logp - batch.log_prob_continuous)
            total += float((ratio * pooled_adv[sl]).mean())
        return total

    def evaluate(params: ActorParams) -> tuple[float, float]:
        logits, mean, log_std, _ = actor_forward(params, obs_pool, mask_pool)
        if which == "discrete":
            kl = categorical_kl(logits0, logits)
        else:
            kl = gaussian_kl(mean0, log_std0, mean, log_std)
        return summed_surrogate(params), kl

    surr0 = summed_surrogate(meta_actor)
    return natural_step(meta_actor, grad_sum, fvp, surr0, evaluate, cfg, active)


# ---------------------------------------------------------------------------
# meta-training and adaptation to new tasks


@dataclass(frozen=True)
class MetaIterationStats:
    iteration: int
    mean_return_pre: float    # under the meta-policy (training trajectories)
    mean_return_post: float   # under the adapted policies (validation trajectories)
    mean_avg_aoi: float
    mean_avg_energy: float
    kl_discrete: float
    kl_continuous: float
    accepted_discrete: bool
    accepted_continuous: bool


@dataclass
class MetaResult:
    actor: ActorParams
    critic: CriticParams
    n_max: int
    iterations: list = field(default_factory=list)


def meta_train(dist: TaskDistribution, meta_cfg: MetaTrainingConfig,
               train_cfg: TrainingConfig, seed: int,
               on_iteration=None) -> MetaResult:
    """Alternate per-task inner adaptation and the pooled outer step."""
    seq = np.random.SeedSequence(seed)
    init_seq, task_seq, critic_seq, work_seq = seq.spawn(4)
    rng_init = np.random.default_rng(init_seq)
    rng_task = np.random.default_rng(task_seq)
    rng_critic = np.random.default_rng(critic_seq)
    n_max = dist.n_max
    arch = _cadrl.make_actor_arch(n_max)
    actor = init_actor(arch, rng_init)
    critic = init_critic(CriticArch(input_dim=arch.input_dim), rng_init)
    result = MetaResult(actor=actor, critic=critic, n_max=n_max)

    for iteration in range(meta_cfg.meta_iters):
        tasks = sample_tasks(dist, meta_cfg.tasks_per_iter, rng_task)
        rollouts = []
        for task in tasks:
            rng_env, rng_policy, rng_env_vd, rng_policy_vd = (
                np.random.default_rng(s) for s in work_seq.spawn(4))
            adapted, train_batch = inner_adapt(actor, task, critic, meta_cfg,
                                               train_cfg, rng_env, rng_policy,
                                               n_max, iteration)
            valid_eps = [collect_episode(task.env, adapted.actor, rng_env_vd,
                                         rng_policy_vd, k, n_max)
                         for k in range(meta_cfg.trajs_per_task)]
            valid_batch = build_batch(valid_eps, critic, train_cfg,
                                      _row_mask(task.env, n_max))
            rollouts.append(TaskRollouts(task=task, adapted=adapted,
                                         train_batch=train_batch,
                                         valid_batch=valid_batch,
                                         mask=_row_mask(task.env, n_max)))

        actor, info_d = meta_update(actor, rollouts, train_cfg, "discrete")
        actor, info_c = meta_update(actor, rollouts, train_cfg, "continuous")

        obs_pool = np.concatenate(
            [r.train_batch.obs for r in rollouts]
            + [r.valid_batch.obs for r in rollouts])
        target_pool = np.concatenate(
            [r.train_batch.value_targets for r in rollouts]
            + [r.valid_batch.value_targets for r in rollouts])
        critic, _ = critic_update(critic, obs_pool, target_pool, train_cfg, rng_critic)

        valid_stats = [s for r in rollouts for s in r.valid_batch.episode_stats]
        stats = MetaIterationStats(
            iteration=iteration,
            mean_return_pre=float(np.mean([r.train_batch.mean_return()
                                           for r in rollouts])),
            mean_return_post=float(np.mean([r.valid_batch.mean_return()
                                            for r in rollouts])),
            mean_avg_aoi=float(np.mean([s.avg_aoi for s in valid_stats])),
            mean_avg_energy=float(np.mean([s.avg_energy for s in valid_stats])),
            kl_discrete=info_d.kl, kl_continuous=info_c.kl,
            accepted_discrete=info_d.accepted, accepted_continuous=info_c.accepted)
        result.iterations.append(stats)
        if on_iteration is not None:
            on_iteration(stats)
        result.actor = actor
        result.critic = critic
    return result


@dataclass(frozen=True)
class AdaptationStep:
    step: int
    mean_return: float
    mean_avg_aoi: float
    mean_avg_energy: float


def adapt_to_new_task(meta_actor: ActorParams, env: UavEnv, steps: int,
                      meta_cfg: MetaTrainingConfig, train_cfg: TrainingConfig,
                      seed: int, n_max: int, mode: str = "trust_region",
                      init_critic_params: CriticParams | None = None):
    """Specialize the meta-policy to one new task, recording the learning curve.

    mode 'trust_region' hands off to the full training loop warm-started from
    the meta-parameters (steps = episodes); mode 'reinforce' repeats the inner
    adaptation step (steps = gradient steps of K trajectories each).
    """
    if mode == "trust_region":
        result = train_cadrl(env, dataclasses.replace(train_cfg, episodes=steps),
                             seed, pad_to=n_max, init_actor_params=meta_actor,
                             init_critic_params=init_critic_params)
        curve = [AdaptationStep(step=s.episode, mean_return=s.ret,
                                mean_avg_aoi=s.avg_aoi, mean_avg_energy=s.avg_energy)
                 for s in result.episodes]
        return result.actor, curve
    if mode != "reinforce":
        raise ValueError(f"unknown adaptation mode {mode!r}")

    seq = np.random.SeedSequence(seed)
    rng_init, rng_env, rng_policy = (np.random.default_rng(s) for s in seq.spawn(3))
    actor = meta_actor.copy()
    critic = init_critic_params.copy() if init_critic_params is not None \
        else init_critic(CriticArch(input_dim=actor.arch.input_dim), rng_init)
    curve = []
    for step in range(steps):
        episodes = [collect_episode(env, actor, rng_env, rng_policy, k, n_max)
                    for k in range(meta_cfg.trajs_per_task)]
        batch = build_batch(episodes, critic, train_cfg, _row_mask(env, n_max))
        curve.append(AdaptationStep(
            step=step,
            mean_return=float(np.mean([e.stats.ret for e in episodes])),
            mean_avg_aoi=float(np.mean([e.stats.avg_aoi for e in episodes])),
            mean_avg_energy=float(np.mean([e.stats.avg_energy for e in episodes]))))
        actor = adapt_params(actor, batch, meta_cfg.inner_lr, meta_cfg.inner_steps)
    return actor, curve
