"""Compound-action trust-region training: rollouts, GAE, critic fits, KL-capped steps.

The rollout buffer is an on-policy accumulator: whole episodes are collected
until it holds at least `rollout_capacity` transitions, advantages are
computed, the critic is regressed, and the two policy heads take sequential
natural-gradient steps, each constrained to a mean KL budget against a fresh
snapshot.  The buffer is then flushed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import TrainingConfig
from .env import CompoundAction, UavEnv, decode_discrete
from .nets import (ActorArch, ActorParams, CriticArch, CriticParams,
                   NonFiniteGradientError, actor_forward, actor_subset_mask,
                   clamp_log_std, categorical_kl, critic_forward, discrete_log_prob,
                   flatten_actor, flatten_critic, fvp_discrete, fvp_gaussian,
                   gaussian_kl, gaussian_log_prob, gradient, init_actor, init_critic,
                   sample_action, softmax, unflatten_actor, unflatten_critic)
from .world import clamp_action


# ---------------------------------------------------------------------------
# rollouts


@dataclass(frozen=True)
class EpisodeStats:
    episode: int
    ret: float
    avg_aoi: float
    avg_energy: float
    energy_exhausted: bool


@dataclass
class EpisodeData:
    obs: np.ndarray          # (T, obs_dim)
    discrete: np.ndarray     # (T,) int
    continuous: np.ndarray   # (T, 2) raw pre-squash actions
    rewards: np.ndarray      # (T,)
    log_prob_discrete: np.ndarray
    log_prob_continuous: np.ndarray
    stats: EpisodeStats


@dataclass
class RolloutBatch:
    obs: np.ndarray
    discrete: np.ndarray
    continuous: np.ndarray
    rewards: np.ndarray
    log_prob_discrete: np.ndarray
    log_prob_continuous: np.ndarray
    values: np.ndarray
    advantages: np.ndarray      # normalized: zero mean, unit variance
    advantages_raw: np.ndarray  # GAE output before normalization
    value_targets: np.ndarray
    episode_bounds: list        # (start, stop) per episode
    episode_stats: list         # EpisodeStats per episode
    mask: np.ndarray | None = None

    def __len__(self) -> int:
        return self.obs.shape[0]

    def mean_return(self) -> float:
        return float(np.mean([s.ret for s in self.episode_stats]))


def raw_to_compound(env: UavEnv, state, d_index: int, cont_raw: np.ndarray,
                    n_base: int) -> CompoundAction:
    """Decode a sampled discrete index and squash raw motion into a legal action."""
    schedule, offload = decode_discrete(d_index, n_base)
    if schedule > env.n_sns:
        raise ValueError(f"schedule {schedule} exceeds live sensor count {env.n_sns}")
    speed, heading = clamp_action(float(cont_raw[0]), float(cont_raw[1]),
                                  state.kin, env.limits)
    return CompoundAction(schedule=schedule, offload=offload,
                          speed_next=speed, heading=heading)


def collect_episode(env: UavEnv, actor: ActorParams, rng_env: np.random.Generator,
                    rng_policy: np.random.Generator, episode_index: int = 0,
                    pad_to: int | None = None) -> EpisodeData:
    """Roll one full episode under the stochastic policy, caching log-probs."""
    n_base = pad_to if pad_to is not None else env.n_sns
    mask = env.action_mask(pad_to)
    state = env.reset(rng_env)
    T = env.horizon
    obs = np.empty((T, actor.arch.input_dim))
    discrete = np.empty(T, dtype=np.int64)
    continuous = np.empty((T, actor.arch.n_continuous))
    rewards = np.empty(T)
    lpd = np.empty(T)
    lpc = np.empty(T)
    aoi_total = 0.0
    energy_total = 0.0
    exhausted = False
    for t in range(T):
        vec = env.encode_state(state, pad_to)
        sampled = sample_action(actor, vec, rng_policy, mask)
        action = raw_to_compound(env, state, sampled.discrete, sampled.continuous, n_base)
        out = env.step(state, action, rng_env)
        obs[t] = vec
        discrete[t] = sampled.discrete
        continuous[t] = sampled.continuous
        rewards[t] = out.reward
        lpd[t] = sampled.log_prob_discrete
        lpc[t] = sampled.log_prob_continuous
        aoi_total += float(out.next_state.freshness.aoi.mean())
        energy_total += out.events.consumed
        exhausted = exhausted or out.events.energy_exhausted
        state = out.next_state
    stats = EpisodeStats(episode=episode_index, ret=float(rewards.sum()),
                         avg_aoi=aoi_total / T, avg_energy=energy_total / T,
                         energy_exhausted=exhausted)
    return EpisodeData(obs=obs, discrete=discrete, continuous=continuous,
                       rewards=rewards, log_prob_discrete=lpd,
                       log_prob_continuous=lpc, stats=stats)


# ---------------------------------------------------------------------------
# advantages


def compute_gae(rewards: np.ndarray, values: np.ndarray, discount: float,
                lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Backward-accumulated GAE advantages plus value regression targets.

    `values` must hold one bootstrap entry beyond the rewards (0 at episode end).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape[0] != rewards.shape[0] + 1:
        raise ValueError("values must be one longer than rewards")
    adv = np.empty_like(rewards)
    acc = 0.0
    for t in range(rewards.shape[0] - 1, -1, -1):
        delta = rewards[t] + discount * values[t + 1] - values[t]
        acc = delta + discount * lam * acc
        adv[t] = acc
    return adv, adv + values[:-1]


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    centered = adv - adv.mean()
    std = centered.std()
    if std < 1e-8:
        return centered
    return centered / std


def build_batch(episodes: list[EpisodeData], critic: CriticParams,
                cfg: TrainingConfig, mask: np.ndarray | None = None) -> RolloutBatch:
    """Stack episodes, compute per-episode GAE with the current critic, normalize."""
    advantages, targets, values, bounds = [], [], [], []
    start = 0
    for ep in episodes:
        v = critic_forward(critic, ep.obs)[0]
        v_boot = np.append(v, 0.0)  # finite horizon: terminal value is exactly 0
        adv, tgt = compute_gae(ep.rewards, v_boot, cfg.discount, cfg.gae_lambda)
        advantages.append(adv)
        targets.append(tgt)
        values.append(v)
        bounds.append((start, start + ep.rewards.shape[0]))
        start += ep.rewards.shape[0]
    adv_raw = np.concatenate(advantages)
    return RolloutBatch(
        obs=np.concatenate([ep.obs for ep in episodes]),
        discrete=np.concatenate([ep.discrete for ep in episodes]),
        continuous=np.concatenate([ep.continuous for ep in episodes]),
        rewards=np.concatenate([ep.rewards for ep in episodes]),
        log_prob_discrete=np.concatenate([ep.log_prob_discrete for ep in episodes]),
        log_prob_continuous=np.concatenate([ep.log_prob_continuous for ep in episodes]),
        values=np.concatenate(values),
        advantages=normalize_advantages(adv_raw),
        advantages_raw=adv_raw,
        value_targets=np.concatenate(targets),
        episode_bounds=bounds,
        episode_stats=[ep.stats for ep in episodes],
        mask=mask,
    )


# ---------------------------------------------------------------------------
# critic regression


@dataclass(frozen=True)
class CriticInfo:
    loss_before: float
    loss_after: float


def critic_update(critic: CriticParams, obs: np.ndarray, targets: np.ndarray,
                  cfg: TrainingConfig, rng: np.random.Generator) -> tuple[CriticParams, CriticInfo]:
    """Fixed-step gradient descent on the squared value error, in minibatches."""
    n = targets.shape[0]
    loss_before = float(((critic_forward(critic, obs)[0] - targets) ** 2).mean())
    mb = min(cfg.minibatch, n) if cfg.minibatch else n
    for _ in range(cfg.critic_epochs):
        order = rng.permutation(n) if mb < n else np.arange(n)
        for lo in range(0, n, mb):
            sel = order[lo:lo + mb]
            _, grad = gradient("critic_mse", critic,
                               {"obs": obs[sel], "targets": targets[sel]})
            critic = unflatten_critic(flatten_critic(critic) - cfg.critic_lr * grad,
                                      critic.arch)
    loss_after = float(((critic_forward(critic, obs)[0] - targets) ** 2).mean())
    return critic, CriticInfo(loss_before=loss_before, loss_after=loss_after)


# ---------------------------------------------------------------------------
# trust-region policy step


@dataclass(frozen=True)
class UpdateInfo:
    accepted: bool
    kl: float
    surrogate_before: float
    surrogate_after: float
    backtracks: int
    reason: str


def conjugate_gradient(fvp, b: np.ndarray, iters: int, tol: float = 1e-12) -> np.ndarray:
    x = np.zeros_like(b)
    r = b.copy()
    p = b.copy()
    rs = float(r @ r)
    for _ in range(iters):
        ap = fvp(p)
        pap = float(p @ ap)
        if pap <= 0.0:
            break
        alpha = rs / pap
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        if rs_new < tol:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def natural_step(actor: ActorParams, grad_vec: np.ndarray, fvp, surrogate_before: float,
                 evaluate, cfg: TrainingConfig,
                 active: np.ndarray) -> tuple[ActorParams, UpdateInfo]:
    """One KL-constrained ascent step along the conjugate-gradient direction.

    `evaluate(candidate) -> (surrogate, kl)` scores a parameter proposal; the
    first backtracked candidate that improves the surrogate within 1.5x the KL
    budget is accepted, otherwise the parameters are returned unchanged.
    """
    if not np.isfinite(grad_vec).all():
        raise NonFiniteGradientError("policy gradient contains NaN/inf")
    g = grad_vec * active
    if float(np.abs(g).max(initial=0.0)) < 1e-12:
        return actor, UpdateInfo(False, 0.0, surrogate_before, surrogate_before,
                                 0, "zero_gradient")
    direction = conjugate_gradient(fvp, g, cfg.cg_iters)
    shs = float(direction @ fvp(direction))
    if not math.isfinite(shs) or shs <= 0.0:
        return actor, UpdateInfo(False, 0.0, surrogate_before, surrogate_before,
                                 0, "bad_curvature")
    full_step = math.sqrt(2.0 * cfg.max_kl / shs) * direction
    theta0 = flatten_actor(actor)
    kl = float("nan")
    surrogate = float("nan")
    for j in range(cfg.backtrack_steps):
        candidate = unflatten_actor(theta0 + (cfg.backtrack_coef ** j) * full_step,
                                    actor.arch)
        surrogate, kl = evaluate(candidate)
        if (math.isfinite(surrogate) and math.isfinite(kl)
                and kl <= 1.5 * cfg.max_kl and surrogate > surrogate_before):
            clamp_log_std(candidate)
            return candidate, UpdateInfo(True, kl, surrogate_before, surrogate, j,
                                         "accepted")
    return actor, UpdateInfo(False, kl, surrogate_before, surrogate,
                             cfg.backtrack_steps, "line_search_exhausted")


def trust_region_update(actor: ActorParams, batch: RolloutBatch, cfg: TrainingConfig,
                        which: str) -> tuple[ActorParams, UpdateInfo]:
    """KL-constrained surrogate ascent for one head ('discrete'/'continuous')
    or both at once ('joint'); the shared trunk moves in every case."""
    logits0, mean0, log_std0, cache = actor_forward(actor, batch.obs, batch.mask)
    old_lpd = discrete_log_prob(logits0, batch.discrete)
    old_lpc = gaussian_log_prob(mean0, log_std0, batch.continuous)
    probs0 = softmax(logits0)
    adv = batch.advantages
    active = actor_subset_mask(actor.arch, "all" if which == "joint" else which)

    base = {"obs": batch.obs, "advantages": adv, "mask": batch.mask,
            "discrete": batch.discrete, "continuous": batch.continuous,
            "old_log_prob_discrete": old_lpd, "old_log_prob_continuous": old_lpc}

    def surrogates(params) -> dict:
        logits, mean, log_std, _ = actor_forward(params, batch.obs, batch.mask)
        out = {}
        out["discrete"] = (
            float((np.exp(discrete_log_prob(logits, batch.discrete) - old_lpd) * adv).mean()),
            categorical_kl(logits0, logits))
        out["continuous"] = (
            float((np.exp(gaussian_log_prob(mean, log_std, batch.continuous) - old_lpc) * adv).mean()),
            gaussian_kl(mean0, log_std0, mean, log_std))
        return out

    if which == "discrete":
        surr0, g = gradient("surrogate_discrete", actor, base)

        def fvp(v):
            return fvp_discrete(actor, cache, probs0, v, active) + cfg.cg_damping * (v * active)

        def evaluate(params):
            return surrogates(params)["discrete"]
    elif which == "continuous":
        surr0, g = gradient("surrogate_continuous", actor, base)

        def fvp(v):
            return fvp_gaussian(actor, cache, log_std0, v, active) + cfg.cg_damping * (v * active)

        def evaluate(params):
            return surrogates(params)["continuous"]
    elif which == "joint":
        sd, gd = gradient("surrogate_discrete", actor, base)
        sc, gc = gradient("surrogate_continuous", actor, base)
        surr0, g = sd + sc, gd + gc

        def fvp(v):
            return (fvp_discrete(actor, cache, probs0, v, active)
                    + fvp_gaussian(actor, cache, log_std0, v, active)
                    + cfg.cg_damping * (v * active))

        def evaluate(params):
            both = surrogates(params)
            return (both["discrete"][0] + both["continuous"][0],
                    both["discrete"][1] + both["continuous"][1])
    else:
        raise ValueError(f"unknown update target {which!r}")

    return natural_step(actor, g, fvp, surr0, evaluate, cfg, active)


# ---------------------------------------------------------------------------
# full training loop


@dataclass(frozen=True)
class UpdateRecord:
    episode: int
    critic: CriticInfo
    discrete: UpdateInfo
    continuous: UpdateInfo


@dataclass
class TrainResult:
    actor: ActorParams
    critic: CriticParams
    episodes: list = field(default_factory=list)   # EpisodeStats
    updates: list = field(default_factory=list)    # UpdateRecord


def make_actor_arch(n_sns: int, horizon_independent: bool = True) -> ActorArch:
    return ActorArch(input_dim=5 * n_sns + 5, n_actions=2 * (n_sns + 1))


def train_cadrl(env: UavEnv, cfg: TrainingConfig, seed: int,
                pad_to: int | None = None,
                init_actor_params: ActorParams | None = None,
                init_critic_params: CriticParams | None = None,
                on_episode=None, on_update=None) -> TrainResult:
    """Run the episodic trust-region training loop on one environment."""
    seq = np.random.SeedSequence(seed)
    rng_init, rng_env, rng_policy, rng_critic = (np.random.default_rng(s)
                                                 for s in seq.spawn(4))
    n_base = pad_to if pad_to is not None else env.n_sns
    arch = make_actor_arch(n_base)
    actor = init_actor_params.copy() if init_actor_params is not None \
        else init_actor(arch, rng_init)
    critic = init_critic_params.copy() if init_critic_params is not None \
        else init_critic(CriticArch(input_dim=arch.input_dim), rng_init)
    if actor.arch.input_dim != arch.input_dim or actor.arch.n_actions != arch.n_actions:
        raise ValueError("initial actor architecture does not fit this environment")
    mask = env.action_mask(pad_to)

    result = TrainResult(actor=actor, critic=critic)
    pending: list[EpisodeData] = []
    pending_size = 0
    for episode in range(cfg.episodes):
        data = collect_episode(env, actor, rng_env, rng_policy, episode, pad_to)
        result.episodes.append(data.stats)
        if on_episode is not None:
            on_episode(data.stats)
        pending.append(data)
        pending_size += data.rewards.shape[0]
        if pending_size < cfg.rollout_capacity:
            continue
        batch = build_batch(pending, critic, cfg, mask)
        critic, critic_info = critic_update(critic, batch.obs, batch.value_targets,
                                            cfg, rng_critic)
        if cfg.joint_heads:
            actor, info_joint = trust_region_update(actor, batch, cfg, "joint")
            record = UpdateRecord(episode=episode, critic=critic_info,
                                  discrete=info_joint, continuous=info_joint)
        else:
            actor, info_d = trust_region_update(actor, batch, cfg, "discrete")
            actor, info_c = trust_region_update(actor, batch, cfg, "continuous")
            record = UpdateRecord(episode=episode, critic=critic_info,
                                  discrete=info_d, continuous=info_c)
        result.updates.append(record)
        if on_update is not None:
            on_update(record)
        pending = []
        pending_size = 0
    result.actor = actor
    result.critic = critic
    return result
