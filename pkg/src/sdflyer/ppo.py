"""Clipped-objective PPO with generalized advantage estimation over vectorized
free-flyer environments.

The rollout batch is rectangular (n_envs x n_steps); fixed-horizon episode
ends are marked done and never bootstrap across the boundary. Updates are
single-threaded and deterministic for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import freeflyer, mlp
from .freeflyer import ACT_DIM, OBS_DIM, FlyerParams, RewardWeights, VecFlyer
from .mathcore import SeededRng


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch_size: int = 512
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    n_envs: int = 256
    n_steps: int = 64
    iterations: int = 300
    lr: float = 3e-4
    log_std_init: float = float(np.log(0.5))
    max_grad_norm: float = 0.5
    # Initial-state randomization at training resets: pose perturbed within
    # the random-goal envelope, velocities uniform per axis. Covers the
    # off-nominal states coarse observation feedback produces.
    randomize_initial_pose: bool = True
    init_lin_vel: float = 0.15
    init_ang_vel: float = 0.3

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must be in [0, 1]")
        if self.clip_eps <= 0.0:
            raise ValueError("clip_eps must be positive")


@dataclass
class RolloutBatch:
    """Per (env, step) trajectories plus the bootstrap value for each env."""

    obs: np.ndarray        # (n_envs, n_steps, OBS_DIM)
    actions: np.ndarray    # (n_envs, n_steps, ACT_DIM)
    log_probs: np.ndarray  # (n_envs, n_steps)
    rewards: np.ndarray    # (n_envs, n_steps)
    values: np.ndarray     # (n_envs, n_steps)
    dones: np.ndarray      # (n_envs, n_steps) bool
    bootstrap_values: np.ndarray  # (n_envs,)

    def __post_init__(self) -> None:
        n_envs, n_steps = self.rewards.shape
        for name in ("obs", "actions", "log_probs", "values", "dones"):
            if getattr(self, name).shape[:2] != (n_envs, n_steps):
                raise ValueError(f"{name} shape does not match rewards {self.rewards.shape}")
        if self.bootstrap_values.shape != (n_envs,):
            raise ValueError("bootstrap_values must be (n_envs,)")
        if not np.all(np.isfinite(self.log_probs)):
            raise ValueError("non-finite log_probs in rollout")


@dataclass
class AdvantageSet:
    advantages: np.ndarray
    returns: np.ndarray


def compute_gae(batch: RolloutBatch, gamma: float, lam: float) -> AdvantageSet:
    """Backward recursion A_t = delta_t + gamma*lam*(1-done_t)*A_{t+1} with
    delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t; returns are A_t + V_t."""
    n_envs, n_steps = batch.rewards.shape
    adv = np.zeros((n_envs, n_steps))
    not_done = 1.0 - batch.dones.astype(np.float64)
    next_adv = np.zeros(n_envs)
    next_value = batch.bootstrap_values
    for t in range(n_steps - 1, -1, -1):
        delta = batch.rewards[:, t] + gamma * next_value * not_done[:, t] - batch.values[:, t]
        next_adv = delta + gamma * lam * not_done[:, t] * next_adv
        adv[:, t] = next_adv
        next_value = batch.values[:, t]
    return AdvantageSet(adv, adv + batch.values)


def clipped_loss(
    new_log_probs: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    clip_eps: float,
) -> tuple[float, np.ndarray]:
    """Clipped surrogate L = -mean(min(rho*A, clip(rho)*A)) and its per-sample
    gradient w.r.t. new_log_probs. Gradient is zero where the clipped branch is
    strictly selected (rho outside the interval on the losing side)."""
    with np.errstate(over="ignore"):
        ratio = np.exp(new_log_probs - old_log_probs)
    if not np.all(np.isfinite(ratio)):
        raise FloatingPointError("non-finite probability ratio in PPO update")
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    loss = -float(np.mean(np.minimum(unclipped, clipped)))
    active = unclipped <= clipped  # min picks the unclipped branch (ties included)
    grad = -(ratio * advantages * active) / new_log_probs.size
    return loss, grad


@dataclass
class IterationLog:
    iteration: int
    mean_reward: float
    mean_return: float
    final_pos_err: float
    final_ang_err_deg: float
    policy_loss: float
    value_loss: float


@dataclass
class TrainResult:
    actor: mlp.DenseNet
    head: mlp.GaussianHead
    critic: mlp.DenseNet
    log: list[IterationLog]


def collect_rollout(
    env: VecFlyer,
    actor: mlp.DenseNet,
    head: mlp.GaussianHead,
    critic: mlp.DenseNet,
    n_steps: int,
    rng: SeededRng,
) -> RolloutBatch:
    n = env.n_envs
    obs = np.empty((n_steps, n, OBS_DIM))
    actions = np.empty((n_steps, n, ACT_DIM))
    log_probs = np.empty((n_steps, n))
    rewards = np.empty((n_steps, n))
    values = np.empty((n_steps, n))
    dones = np.empty((n_steps, n), dtype=bool)
    cur = env.observations()
    for t in range(n_steps):
        obs[t] = cur
        mean, _ = mlp.forward(actor, cur)
        act = mlp.sample_action(mean, head, rng)
        actions[t] = act
        log_probs[t] = mlp.log_prob(mean, head, act)
        values[t] = mlp.forward(critic, cur)[0][:, 0]
        cur, rewards[t], dones[t] = env.step(act)
    bootstrap = mlp.forward(critic, cur)[0][:, 0]
    swap = lambda a: np.ascontiguousarray(np.swapaxes(a, 0, 1))
    return RolloutBatch(
        obs=swap(obs),
        actions=swap(actions),
        log_probs=swap(log_probs),
        rewards=swap(rewards),
        values=swap(values),
        dones=swap(dones).astype(bool),
        bootstrap_values=bootstrap,
    )


def _clip_grads(grads: list[np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale


def ppo_update(
    actor: mlp.DenseNet,
    head: mlp.GaussianHead,
    critic: mlp.DenseNet,
    batch: RolloutBatch,
    adv: AdvantageSet,
    config: PpoConfig,
    actor_opt: mlp.AdamState,
    critic_opt: mlp.AdamState,
    rng: SeededRng,
) -> tuple[float, float]:
    """One PPO update (epochs x minibatches); returns mean policy/value loss."""
    n_total = batch.rewards.size
    flat_obs = batch.obs.reshape(n_total, OBS_DIM)
    flat_actions = batch.actions.reshape(n_total, ACT_DIM)
    flat_old_logp = batch.log_probs.reshape(n_total)
    flat_returns = adv.returns.reshape(n_total)
    flat_adv = adv.advantages.reshape(n_total)
    flat_adv = (flat_adv - flat_adv.mean()) / (flat_adv.std() + 1e-8)

    adam_cfg = mlp.AdamConfig(lr=config.lr)
    policy_losses, value_losses = [], []
    for _ in range(config.epochs):
        order = rng.permutation(n_total)
        for start in range(0, n_total, config.minibatch_size):
            idx = order[start : start + config.minibatch_size]
            m = idx.size
            mb_obs = flat_obs[idx]
            mb_actions = flat_actions[idx]

            mean, cache = mlp.forward(actor, mb_obs)
            new_logp = mlp.log_prob(mean, head, mb_actions)
            p_loss, dldp = clipped_loss(new_logp, flat_old_logp[idx], flat_adv[idx], config.clip_eps)
            d_mean, d_logstd_per = mlp.log_prob_grads(mean, head, mb_actions)
            actor_grads = mlp.backward(actor, cache, dldp[:, None] * d_mean)
            d_log_std = (dldp[:, None] * d_logstd_per).sum(axis=0)
            d_log_std -= config.entropy_coef  # d(-coef*entropy)/d(log_std) = -coef
            grads = actor_grads.as_list() + [d_log_std]
            _clip_grads(grads, config.max_grad_norm)
            mlp.adam_step(actor.params() + [head.log_std], grads, actor_opt, adam_cfg)
            head.clamp()

            v, v_cache = mlp.forward(critic, mb_obs)
            v_err = v[:, 0] - flat_returns[idx]
            v_loss = config.value_coef * float(np.mean(v_err**2))
            v_grads = mlp.backward(critic, v_cache, (2.0 * config.value_coef / m) * v_err[:, None])
            vg = v_grads.as_list()
            _clip_grads(vg, config.max_grad_norm)
            mlp.adam_step(critic.params(), vg, critic_opt, adam_cfg)

            policy_losses.append(p_loss)
            value_losses.append(v_loss)
    return float(np.mean(policy_losses)), float(np.mean(value_losses))


def train(
    config: PpoConfig,
    env_params: FlyerParams,
    rng: SeededRng,
    reward_weights: RewardWeights = RewardWeights(),
    task: str = "random",
    progress=None,
) -> TrainResult:
    """Train actor [12,64,64,6] and critic [12,64,64,1] with PPO; the returned
    actor's greedy mean policy is the controller handed to conversion."""
    init_rng = rng.spawn(0)
    env_rng = rng.spawn(1)
    sample_rng = rng.spawn(2)
    shuffle_rng = rng.spawn(3)

    actor = mlp.init_dense([OBS_DIM, 64, 64, ACT_DIM], init_rng)
    critic = mlp.init_dense([OBS_DIM, 64, 64, 1], init_rng, out_gain=1.0)
    head = mlp.GaussianHead(np.full(ACT_DIM, config.log_std_init))
    actor_opt = mlp.AdamState.for_params(actor.params() + [head.log_std])
    critic_opt = mlp.AdamState.for_params(critic.params())

    env = VecFlyer(
        config.n_envs,
        env_params,
        env_rng,
        task=task,
        weights=reward_weights,
        randomize_pose=config.randomize_initial_pose,
        init_lin_vel=config.init_lin_vel,
        init_ang_vel=config.init_ang_vel,
    )
    log: list[IterationLog] = []
    for it in range(1, config.iterations + 1):
        batch = collect_rollout(env, actor, head, critic, config.n_steps, sample_rng)
        adv = compute_gae(batch, config.gamma, config.lam)
        try:
            p_loss, v_loss = ppo_update(
                actor, head, critic, batch, adv, config, actor_opt, critic_opt, shuffle_rng
            )
        except FloatingPointError as exc:
            raise TrainingDiverged(it, str(exc)) from exc
        if not (np.isfinite(p_loss) and np.isfinite(v_loss)):
            raise TrainingDiverged(it, f"non-finite loss (policy={p_loss}, value={v_loss})")
        mean_reward = float(batch.rewards.mean())
        row = IterationLog(
            iteration=it,
            mean_reward=mean_reward,
            mean_return=mean_reward * env_params.episode_len,
            final_pos_err=env.last_final_pos_err,
            final_ang_err_deg=env.last_final_ang_err_deg,
            policy_loss=p_loss,
            value_loss=v_loss,
        )
        log.append(row)
        if progress is not None:
            progress(row)
    return TrainResult(actor, head, critic, log)
