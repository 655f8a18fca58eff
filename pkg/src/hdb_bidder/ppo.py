"""On-policy training loop: rollouts, advantage estimation, clipped updates.

The actor maximizes the clipped surrogate objective over shuffled
mini-batches; the critic regresses onto the advantage-plus-value targets.
Action noise is a shared scalar std on a linear decay schedule, so only the
mean head is learned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nets import (AdamState, PolicyNet, ValueNet, adam_step, backward_from_cache,
                   forward_cache, gaussian_logprob, gaussian_sample, make_policy,
                   make_value, net_grad_list, net_param_list, save_checkpoint,
                   std_schedule, SIGMA_DECAY, SIGMA_FINAL, SIGMA_INITIAL)

LOG_HEADER = "step,rollout_reward_mean,policy_loss,value_loss,clip_frac,sigma"


@dataclass
class PpoConfig:
    """Training hyperparameters; defaults follow the experiment settings."""

    total_steps: int = 3_000_000
    rollout_steps: int = 2048
    batch_size: int = 256
    clip_eps: float = 0.2
    gamma: float = 0.999
    gae_lambda: float = 0.95
    update_epochs: int = 10
    lr_actor: float = 5e-5
    lr_critic: float = 3e-4
    sigma_initial: float = SIGMA_INITIAL
    sigma_final: float = SIGMA_FINAL
    sigma_decay: float = SIGMA_DECAY
    reward_scale: float = 10.0
    seed: int = 0
    checkpoint_every: int = 0  # rollouts between checkpoints; 0 = final only
    net_dtype: str = "float32"  # training-net precision; tests use float64 nets

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must lie in (0, 1)")
        if self.batch_size < 1 or self.rollout_steps < self.batch_size:
            raise ValueError("rollout must hold at least one batch")


class RolloutBuffer:
    """Fixed-capacity on-policy transition store.

    Holds states, raw actions, behavior log-probs, scaled rewards, value
    estimates, and done flags; advantages and returns are attached by
    :func:`compute_gae` before any update and the buffer is discarded after.
    """

    def __init__(self, steps: int, state_dim: int, action_dim: int):
        self.capacity = steps
        self.states = np.zeros((steps, state_dim))
        self.actions = np.zeros((steps, action_dim))
        self.logprobs = np.zeros(steps)
        self.rewards = np.zeros(steps)
        self.rewards_usd = np.zeros(steps)
        self.values = np.zeros(steps)
        self.dones = np.zeros(steps, dtype=bool)
        self.advantages = None
        self.returns = None
        self.size = 0

    def add(self, state, action, logprob, reward, reward_usd, done):
        i = self.size
        self.states[i] = state
        self.actions[i] = action
        self.logprobs[i] = logprob
        self.rewards[i] = reward
        self.rewards_usd[i] = reward_usd
        self.dones[i] = done
        self.size += 1


def collect_rollout(env, policy: PolicyNet, value_net: ValueNet, steps: int,
                    rng: np.random.Generator) -> tuple[RolloutBuffer, float]:
    """Gather exactly ``steps`` transitions, resuming the env's open episode.

    Actions are Gaussian draws around the policy mean with the policy's
    current std.  Returns the buffer and the bootstrap value of the state
    after the final transition (0 when that transition ended an episode).
    """
    buffer = RolloutBuffer(steps, env.state_dim, env.action_dim)
    state = env.state_snapshot() if env.episode_active else env.reset(rng)
    done = False
    for _ in range(steps):
        mean = policy.mean(state)
        action = gaussian_sample(mean, policy.sigma, rng)
        logprob = float(gaussian_logprob(mean, policy.sigma, action))
        next_state, r, done, info = env.step(action)
        buffer.add(state, action, logprob, r, info["reward_usd"], done)
        state = env.reset(rng) if done else next_state
    buffer.values = value_net.value(buffer.states)
    bootstrap = 0.0 if done else float(value_net.value(state))
    return buffer, bootstrap


def compute_gae(buffer: RolloutBuffer, gamma: float, lam: float,
                bootstrap_value: float = 0.0):
    """Generalized advantage estimation over the buffer; attaches and
    returns (advantages, returns) with returns = advantages + values."""
    n = buffer.size
    adv = np.zeros(n)
    next_value = bootstrap_value
    gae = 0.0
    for t in range(n - 1, -1, -1):
        not_done = 0.0 if buffer.dones[t] else 1.0
        delta = buffer.rewards[t] + gamma * next_value * not_done - buffer.values[t]
        gae = delta + gamma * lam * not_done * gae
        adv[t] = gae
        next_value = buffer.values[t]
    buffer.advantages = adv
    buffer.returns = adv + buffer.values[:n]
    return buffer.advantages, buffer.returns


def ppo_update(policy: PolicyNet, value_net: ValueNet, buffer: RolloutBuffer,
               cfg: PpoConfig, adam_policy: AdamState, adam_value: AdamState,
               rng: np.random.Generator) -> dict:
    """Clipped-objective policy ascent and squared-error value descent.

    Runs ``update_epochs`` passes of shuffled mini-batches; advantages are
    normalized within each mini-batch.  Returns mean losses and the clip
    fraction; aborts on non-finite losses.
    """
    if buffer.advantages is None:
        raise RuntimeError("compute_gae must run before ppo_update")
    n = buffer.size
    sigma = policy.sigma
    policy_losses, value_losses, clip_fracs = [], [], []

    for _ in range(cfg.update_epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            b = len(idx)
            states = buffer.states[idx]
            actions = buffer.actions[idx]
            logp_old = buffer.logprobs[idx]
            adv = buffer.advantages[idx]
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
            rets = buffer.returns[idx]

            mean, cache = forward_cache(policy.mlp, states)
            logp_new = gaussian_logprob(mean, sigma, actions)
            ratio = np.exp(logp_new - logp_old)
            surr1 = ratio * adv
            surr2 = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv
            objective = np.minimum(surr1, surr2)
            policy_loss = -float(objective.mean())

            # Gradient flows only through samples where the unclipped term
            # attains the min; elsewhere the clipped constant has zero grad.
            active = (surr1 <= surr2).astype(np.float64)
            coef = active * ratio * adv / b
            dmean = coef[:, None] * (actions - mean) / (sigma * sigma)
            grads = backward_from_cache(policy.mlp, cache, -dmean)  # descend -objective
            adam_pstep(policy, grads, adam_policy, cfg.lr_actor)

            v, vcache = forward_cache(value_net.mlp, states)
            err = v[:, 0] - rets
            value_loss = float(np.mean(err ** 2))
            dv = (2.0 * err / b)[:, None]
            vgrads = backward_from_cache(value_net.mlp, vcache, dv)
            adam_pstep(value_net, vgrads, adam_value, cfg.lr_critic)

            if not (np.isfinite(policy_loss) and np.isfinite(value_loss)):
                raise FloatingPointError(
                    f"non-finite loss (policy={policy_loss}, value={value_loss}); "
                    f"ratio range [{ratio.min():.3g}, {ratio.max():.3g}]")
            policy_losses.append(policy_loss)
            value_losses.append(value_loss)
            clip_fracs.append(float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps)))

    return {"policy_loss": float(np.mean(policy_losses)),
            "value_loss": float(np.mean(value_losses)),
            "clip_frac": float(np.mean(clip_fracs))}


def adam_pstep(net_holder, grads, state: AdamState, lr: float):
    adam_step(net_param_list(net_holder.mlp), net_grad_list(grads), state, lr)


@dataclass
class TrainResult:
    policy: PolicyNet
    value_net: ValueNet
    log_rows: list[str]
    adam_policy: AdamState
    adam_value: AdamState
    steps: int


def train(env, cfg: PpoConfig, head: str = "zero_band",
          policy: PolicyNet | None = None, value_net: ValueNet | None = None,
          adam_policy: AdamState | None = None, adam_value: AdamState | None = None,
          start_step: int = 0, checkpoint_path=None, progress=None) -> TrainResult:
    """Alternate rollout collection, advantage estimation, and updates until
    the configured step budget is spent.

    Seeding is derived entirely from ``cfg.seed``; the same seed reproduces
    the training log byte for byte.  Pass a loaded checkpoint's networks,
    optimizer states, and step count to resume.
    """
    seqs = np.random.SeedSequence(cfg.seed).spawn(4)
    rng_pol = np.random.default_rng(seqs[0])
    rng_val = np.random.default_rng(seqs[1])
    rng_act = np.random.default_rng(seqs[2])
    rng_shuffle = np.random.default_rng(seqs[3])

    dtype = np.dtype(cfg.net_dtype)
    if policy is None:
        policy = make_policy(env.state_dim, env.action_dim, rng_pol,
                             env.lam_min, env.lam_max, head=head, dtype=dtype)
    if value_net is None:
        value_net = make_value(env.state_dim, rng_val, dtype=dtype)
    if adam_policy is None:
        adam_policy = AdamState.for_net(policy.mlp)
    if adam_value is None:
        adam_value = AdamState.for_net(value_net.mlp)

    log_rows = [LOG_HEADER]
    step = start_step
    rollout_i = 0
    while step < cfg.total_steps:
        policy.sigma = std_schedule(step, cfg)
        buffer, bootstrap = collect_rollout(env, policy, value_net,
                                            cfg.rollout_steps, rng_act)
        compute_gae(buffer, cfg.gamma, cfg.gae_lambda, bootstrap)
        stats = ppo_update(policy, value_net, buffer, cfg, adam_policy,
                           adam_value, rng_shuffle)
        step += buffer.size
        rollout_i += 1
        row = (f"{step},{buffer.rewards_usd.mean():.6g},{stats['policy_loss']:.6g},"
               f"{stats['value_loss']:.6g},{stats['clip_frac']:.6g},{policy.sigma:.6g}")
        log_rows.append(row)
        if progress is not None:
            progress(step, cfg.total_steps, row)
        if checkpoint_path and cfg.checkpoint_every and rollout_i % cfg.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, policy, value_net, step,
                            adam_policy, adam_value)

    if checkpoint_path:
        save_checkpoint(checkpoint_path, policy, value_net, step,
                        adam_policy, adam_value)
    return TrainResult(policy, value_net, log_rows, adam_policy, adam_value, step)
