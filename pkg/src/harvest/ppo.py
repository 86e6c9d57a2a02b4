"""Clipped-surrogate actor-critic training for the harvesting MDP.

The terminal constraint penalty is folded into the last step's reward; the
`scheme` selector switches between the Lagrangian fold, a fixed large failure
penalty, and no penalty at all.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .env import Environment, JointAction, PolarAction, State, TWO_PI
from .nets import (
    GaussianHead,
    Mlp,
    OptimState,
    mlp_from_arrays,
    mlp_to_arrays,
    optimize_step,
    load_checkpoint,
    save_checkpoint,
)
from .scenario import ScenarioConfig

SCHEMES = ("lagrangian", "large-terminal", "none")


@dataclass
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    value_coef: float = 0.5
    # Entropy bonus left at zero: with a tight terminal position tolerance the
    # bonus inflates the policy std until episodes can no longer terminate.
    entropy_coef: float = 0.0
    epochs: int = 10
    minibatch_size: int = 64
    rollout_steps: int = 2048
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    # Linear decay of both learning rates to lr_final_scale * lr across
    # training. Near convergence the advantage normalization divides by a
    # vanishing batch std, amplifying sampling noise into large updates;
    # decaying the step size keeps the late-training policy from being
    # knocked out of the solution it found.
    lr_final_scale: float = 0.0
    # Lower bound on the raw-action policy std, applied after every update;
    # 0 disables it. It serves two purposes. (1) Episode length only carries
    # a learning signal when rollouts vary in arrival time: once the std
    # anneals away, every episode terminates at the same step and the
    # per-step cost can no longer prefer faster completions. (2) A tiny raw
    # std makes importance ratios explode under ordinary mean updates, which
    # destabilizes late training. The floor costs no final precision: the
    # squash attenuates speed noise through tanh saturation and heading
    # noise through the direction vector's magnitude, so the policy can
    # still act nearly deterministically wherever it needs to.
    std_floor: float = 0.0
    # Shrinking-horizon curriculum: train on a copy of the scenario whose
    # step budget drops by one every time the rollout success rate clears
    # the threshold. The terminal penalty then directly pushes arrival
    # earlier — a far stronger signal than waiting for chance early
    # terminations to give the per-step cost something to prefer. The
    # reported steps metric always charges failures at the scenario's true
    # budget, and evaluation environments are never touched.
    horizon_curriculum: bool = False
    curriculum_threshold: float = 0.8
    total_updates: int = 500
    scheme: str = "lagrangian"
    large_penalty: float = 200.0
    # Problem statement places the penalty outside the discounted sum; the
    # fold is undiscounted by default, discount-corrected when set.
    discount_correct_penalty: bool = False
    hidden: tuple[int, int] = (64, 64)
    init_std: float = 0.5
    num_envs: int = 8
    substeps: int = 10

    def validated(self) -> "PpoConfig":
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 < self.clip_ratio < 1:
            raise ValueError("clip_ratio must be in (0, 1)")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if not 0 <= self.lr_final_scale <= 1:
            raise ValueError("lr_final_scale must be in [0, 1]")
        if self.std_floor < 0:
            raise ValueError("std_floor must be non-negative")
        if not 0 < self.curriculum_threshold <= 1:
            raise ValueError("curriculum_threshold must be in (0, 1]")
        return self


@dataclass
class Trajectory:
    """One completed episode with everything the update needs."""

    obs: np.ndarray            # (N, obs_dim)
    times: np.ndarray          # (N,) step index / n_max, critic input only
    raw_actions: np.ndarray    # (N, 3*M_a), (u_rho, u_x, u_y) per agent
    log_probs: np.ndarray      # (N,)
    rewards: np.ndarray        # (N,) raw env rewards, all -1
    shaped_rewards: np.ndarray # (N,) with the scheme's terminal fold applied
    values: np.ndarray         # (N,)
    steps: int
    success: bool
    penalty: float             # Lagrangian terminal penalty at the last state
    final_state: State | None = None


@dataclass
class ActorCritic:
    actor: Mlp
    head: GaussianHead
    critic: Mlp
    max_speed: np.ndarray      # per-agent speed limits, for squashing
    num_agents: int
    # The critic predicts in a normalized target space; these running
    # statistics map its output back to return units. Without the
    # normalization the critic must reach outputs of magnitude ~n_max from a
    # near-zero init, which it does by saturating its tanh layers — leaving a
    # constant, input-insensitive value function with vanished gradients.
    value_mean: float = 0.0
    value_std: float = 1.0
    value_count: float = 0.0

    def actor_params(self) -> list[torch.Tensor]:
        return list(self.actor.parameters()) + list(self.head.parameters())

    def critic_params(self) -> list[torch.Tensor]:
        return list(self.critic.parameters())

    def predict_values(self, critic_in: torch.Tensor) -> torch.Tensor:
        """Critic output mapped back to return units."""
        return self.critic(critic_in).squeeze(-1) * self.value_std + self.value_mean

    def update_value_stats(self, targets: np.ndarray) -> None:
        """Fold a batch of value targets into the running mean/std."""
        n = float(len(targets))
        if n == 0:
            return
        b_mean = float(targets.mean())
        b_var = float(targets.var())
        total = self.value_count + n
        delta = b_mean - self.value_mean
        var = (self.value_count * self.value_std ** 2 + n * b_var
               + self.value_count * n / total * delta ** 2) / total
        self.value_mean += delta * n / total
        self.value_std = max(float(np.sqrt(var)), 1e-6)
        self.value_count = total


def make_actor_critic(env: Environment, hidden=(64, 64), init_std: float = 0.5,
                      rng: np.random.Generator | None = None) -> ActorCritic:
    rng = rng or np.random.default_rng(0)
    act_dim = 3 * env.num_agents
    actor = Mlp([env.obs_dim, *hidden, act_dim], rng=rng, out_scale=0.01)
    # The critic additionally sees the normalized step index: values in this
    # finite-horizon problem depend on remaining time, which the state alone
    # does not encode once positions and data saturate.
    critic = Mlp([env.obs_dim + 1, *hidden, 1], rng=rng, out_scale=1.0)
    head = GaussianHead(act_dim, init_std=init_std)
    return ActorCritic(actor=actor, head=head, critic=critic,
                       max_speed=env.max_speed.copy(), num_agents=env.num_agents)


def squash(raw_action: np.ndarray, max_speed: np.ndarray) -> JointAction:
    """Map unconstrained raw actions into the admissible polar set.

    Raw layout is (u_rho, u_x, u_y) per agent: speed saturates smoothly at
    the limit, heading is the angle of the (u_x, u_y) direction vector.
    Growing that vector's magnitude shrinks the heading jitter caused by a
    fixed Gaussian exploration noise, so the policy can fly fast *and*
    straight without first having to anneal its noise scale — a plain
    wrapped-angle output leaves heading noise constant and traps training in
    a slow-motion equilibrium.
    """
    u = np.asarray(raw_action, dtype=float).reshape(-1, 3)
    rho = np.asarray(max_speed, dtype=float) * 0.5 * (1.0 + np.tanh(u[:, 0]))
    alpha = np.mod(np.arctan2(u[:, 2], u[:, 1]), TWO_PI)
    # np.mod can round a tiny negative input up to exactly 2*pi
    alpha[alpha >= TWO_PI] = 0.0
    return JointAction(tuple(
        PolarAction(speed=float(r), heading=float(a)) for r, a in zip(rho, alpha)
    ))


def deterministic_policy(ac: ActorCritic):
    """Evaluation-mode policy: squashed distribution means, no sampling."""

    def policy(obs: np.ndarray) -> JointAction:
        with torch.no_grad():
            mean = ac.actor(torch.as_tensor(obs, dtype=torch.float64)).numpy()
        return squash(mean, ac.max_speed)

    return policy


def fold_penalty(rewards: np.ndarray, penalty: float, success: bool,
                 scheme: str, config: PpoConfig) -> np.ndarray:
    shaped = rewards.copy()
    if scheme == "lagrangian":
        fold = penalty
        if config.discount_correct_penalty and len(rewards) > 0:
            fold = penalty / (config.gamma ** (len(rewards) - 1))
        shaped[-1] -= fold
    elif scheme == "large-terminal":
        if not success:
            shaped[-1] -= config.large_penalty
    elif scheme != "none":
        raise ValueError(f"unknown scheme {scheme!r}")
    return shaped


def collect_rollouts(env_factory, ac: ActorCritic, config: PpoConfig,
                     generator: torch.Generator,
                     min_steps: int | None = None,
                     count: int | None = None) -> list[Trajectory]:
    """Run parallel environment instances until enough experience is gathered.

    Stops launching new episodes once `min_steps` total steps (or `count`
    episodes) are complete, then finishes the in-flight episodes so every
    trajectory ends at a terminal or budget-exhausted state.
    """
    if min_steps is None and count is None:
        min_steps = config.rollout_steps
    num_envs = config.num_envs if count is None else min(config.num_envs, count)
    envs = [env_factory() for _ in range(num_envs)]
    states = [env.reset() for env in envs]
    buffers = [_EpisodeBuffer() for _ in envs]
    active = [True] * num_envs
    done: list[Trajectory] = []
    total_steps = 0

    def quota_met() -> bool:
        # Called right after an episode is appended to `done`; the remaining
        # in-flight episodes will also be appended, so count them.
        in_flight = sum(active) - 1
        if count is not None:
            return len(done) + in_flight >= count
        return total_steps >= min_steps

    while any(active):
        idx = [k for k in range(num_envs) if active[k]]
        obs = np.stack([envs[k].observe(states[k]) for k in idx])
        times = np.array([states[k].step_index / envs[k].n_max for k in idx])
        obs_t = torch.as_tensor(obs, dtype=torch.float64)
        critic_in = torch.cat([obs_t, torch.as_tensor(times)[:, None]], dim=-1)
        with torch.no_grad():
            mean = ac.actor(obs_t)
            raw, logp, _ = ac.head.sample(mean, generator)
            value = ac.predict_values(critic_in)
        raw_np = raw.numpy()
        logp_np = logp.numpy() if logp.ndim else np.array([float(logp)])
        value_np = value.numpy() if value.ndim else np.array([float(value)])
        for pos, k in enumerate(idx):
            action = squash(raw_np[pos], ac.max_speed)
            outcome = envs[k].step(states[k], action)
            buffers[k].append(obs[pos], times[pos], raw_np[pos], float(logp_np[pos]),
                              outcome.reward, float(value_np[pos]))
            total_steps += 1
            if outcome.terminal:
                success = envs[k].is_terminal(outcome.next_state)
                done.append(buffers[k].finish(
                    success=success,
                    penalty=outcome.terminal_penalty,
                    final_state=outcome.next_state,
                    scheme=config.scheme,
                    config=config,
                ))
                if quota_met():
                    active[k] = False
                else:
                    buffers[k] = _EpisodeBuffer()
                    states[k] = envs[k].reset()
            else:
                states[k] = outcome.next_state
    return done


class _EpisodeBuffer:
    def __init__(self):
        self.obs: list[np.ndarray] = []
        self.times: list[float] = []
        self.raw: list[np.ndarray] = []
        self.logp: list[float] = []
        self.rewards: list[float] = []
        self.values: list[float] = []

    def append(self, obs, time_frac, raw, logp, reward, value):
        self.obs.append(obs)
        self.times.append(time_frac)
        self.raw.append(raw)
        self.logp.append(logp)
        self.rewards.append(reward)
        self.values.append(value)

    def finish(self, success: bool, penalty: float, final_state: State,
               scheme: str, config: PpoConfig) -> Trajectory:
        rewards = np.array(self.rewards)
        return Trajectory(
            obs=np.array(self.obs),
            times=np.array(self.times),
            raw_actions=np.array(self.raw),
            log_probs=np.array(self.logp),
            rewards=rewards,
            shaped_rewards=fold_penalty(rewards, penalty, success, scheme, config),
            values=np.array(self.values),
            steps=len(rewards),
            success=success,
            penalty=penalty,
            final_state=final_state,
        )


def gae(trajectory: Trajectory, gamma: float, gae_lambda: float):
    """Exponentially weighted TD-residual advantages; terminal bootstrap is 0."""
    rewards = trajectory.shaped_rewards
    values = trajectory.values
    n = len(rewards)
    advantages = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        next_value = values[t + 1] if t + 1 < n else 0.0
        delta = rewards[t] + gamma * next_value - values[t]
        last = delta + gamma * gae_lambda * last
        advantages[t] = last
    return advantages, advantages + values


def ppo_update(trajectories: list[Trajectory], ac: ActorCritic,
               actor_opt: OptimState, critic_opt: OptimState,
               config: PpoConfig, rng: np.random.Generator,
               extra_actor_loss=None) -> dict:
    """Clipped-surrogate epochs over the batch; returns scalar diagnostics.

    `extra_actor_loss(obs_minibatch)` is an optional differentiable term added
    to the actor loss (used by the smoothing regularizer).
    """
    if not trajectories:
        raise ValueError("empty batch")
    obs = np.concatenate([t.obs for t in trajectories])
    times = np.concatenate([t.times for t in trajectories])
    raw = np.concatenate([t.raw_actions for t in trajectories])
    old_logp = np.concatenate([t.log_probs for t in trajectories])
    adv_list, tgt_list = [], []
    for t in trajectories:
        a, tgt = gae(t, config.gamma, config.gae_lambda)
        adv_list.append(a)
        tgt_list.append(tgt)
    adv = np.concatenate(adv_list)
    targets = np.concatenate(tgt_list)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    ac.update_value_stats(targets)
    targets = (targets - ac.value_mean) / ac.value_std

    obs_t = torch.as_tensor(obs)
    critic_in_t = torch.cat([obs_t, torch.as_tensor(times)[:, None]], dim=-1)
    raw_t = torch.as_tensor(raw)
    old_logp_t = torch.as_tensor(old_logp)
    adv_t = torch.as_tensor(adv)
    tgt_t = torch.as_tensor(targets)

    n = len(obs)
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
             "approx_kl": 0.0, "clip_frac": 0.0}
    batches = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.minibatch_size):
            mb = order[lo: lo + config.minibatch_size]
            mb_obs = obs_t[mb]
            mean = ac.actor(mb_obs)
            logp = ac.head.log_prob(mean, raw_t[mb])
            ratio = torch.exp(logp - old_logp_t[mb])
            mb_adv = adv_t[mb]
            clipped = torch.clamp(ratio, 1 - config.clip_ratio, 1 + config.clip_ratio)
            policy_loss = -torch.min(ratio * mb_adv, clipped * mb_adv).mean()
            entropy = ac.head.entropy()
            actor_loss = policy_loss - config.entropy_coef * entropy
            if extra_actor_loss is not None:
                actor_loss = actor_loss + extra_actor_loss(mb_obs)
            value = ac.critic(critic_in_t[mb]).squeeze(-1)
            value_loss = ((value - tgt_t[mb]) ** 2).mean()
            critic_loss = config.value_coef * value_loss
            if not (torch.isfinite(actor_loss) and torch.isfinite(critic_loss)):
                raise FloatingPointError(
                    f"non-finite loss: actor={actor_loss}, critic={critic_loss}"
                )
            a_params = ac.actor_params()
            c_params = ac.critic_params()
            a_grads = torch.autograd.grad(actor_loss, a_params)
            c_grads = torch.autograd.grad(critic_loss, c_params)
            optimize_step(a_params, list(a_grads), actor_opt)
            optimize_step(c_params, list(c_grads), critic_opt)
            with torch.no_grad():
                stats["policy_loss"] += float(policy_loss)
                stats["value_loss"] += float(value_loss)
                stats["entropy"] += float(entropy)
                stats["approx_kl"] += float((old_logp_t[mb] - logp).mean())
                stats["clip_frac"] += float(
                    ((ratio - 1.0).abs() > config.clip_ratio).double().mean()
                )
            batches += 1
    return {k: v / batches for k, v in stats.items()}


@dataclass
class TrainResult:
    ac: ActorCritic
    curve: list[tuple[int, float, float]]  # (learning_step, mean_steps, std_steps)
    config: PpoConfig
    seed: int
    diagnostics: list[dict] = field(default_factory=list)

    @property
    def final_mean_steps(self) -> float:
        return self.curve[-1][1]

    @property
    def final_std_steps(self) -> float:
        return self.curve[-1][2]


def episode_steps_metric(trajectories: list[Trajectory], n_max: int):
    """Steps to completion, charging the full budget on failure."""
    steps = np.array([t.steps if t.success else n_max for t in trajectories], dtype=float)
    return float(steps.mean()), float(steps.std(ddof=1)) if len(steps) > 1 else 0.0


def train(scenario: ScenarioConfig, config: PpoConfig, seed: int,
          extra_actor_loss=None, pre_update=None, progress=None,
          on_init=None) -> TrainResult:
    """Alternate rollout collection and updates; deterministic given the seed.

    `pre_update(batch_obs)` runs before every update (the smoothing trainer
    fits its adversary there); `extra_actor_loss` is forwarded to the update.
    """
    config = config.validated()
    torch.set_num_threads(1)
    ss = np.random.SeedSequence(seed)
    init_seed, sample_seed, shuffle_seed = ss.spawn(3)
    init_rng = np.random.default_rng(init_seed)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    sampler = torch.Generator()
    sampler.manual_seed(int(sample_seed.generate_state(1)[0]))

    horizon_cap = scenario.n_max

    def env_factory() -> Environment:
        train_scenario = (scenario if horizon_cap == scenario.n_max
                          else replace(scenario, n_max=horizon_cap))
        return Environment(train_scenario, substeps=config.substeps)

    env = env_factory()
    ac = make_actor_critic(env, hidden=config.hidden, init_std=config.init_std,
                           rng=init_rng)
    if on_init is not None:
        on_init(ac)
    actor_opt = OptimState(ac.actor_params(), lr=config.actor_lr)
    critic_opt = OptimState(ac.critic_params(), lr=config.critic_lr)

    curve: list[tuple[int, float, float]] = []
    diagnostics: list[dict] = []
    for update in range(config.total_updates):
        frac = update / max(1, config.total_updates - 1)
        scale = 1.0 + (config.lr_final_scale - 1.0) * frac
        actor_opt.lr = config.actor_lr * scale
        critic_opt.lr = config.critic_lr * scale
        trajs = collect_rollouts(env_factory, ac, config, sampler)
        mean_steps, std_steps = episode_steps_metric(trajs, scenario.n_max)
        curve.append((update, mean_steps, std_steps))
        if pre_update is not None:
            pre_update(np.concatenate([t.obs for t in trajs]))
        stats = ppo_update(trajs, ac, actor_opt, critic_opt, config, shuffle_rng,
                           extra_actor_loss=extra_actor_loss)
        if config.std_floor > 0.0:
            with torch.no_grad():
                ac.head.log_std.clamp_(min=float(np.log(config.std_floor)))
        stats["mean_steps"] = mean_steps
        stats["success_rate"] = float(np.mean([t.success for t in trajs]))
        stats["mean_penalty"] = float(np.mean([t.penalty for t in trajs]))
        violations = np.array([env.constraint_violation(t.final_state)
                               for t in trajs])
        stats["mean_travel_violation"] = float(violations[:, 0].mean())
        stats["mean_data_violation"] = float(violations[:, 1].mean())
        stats["horizon_cap"] = float(horizon_cap)
        if (config.horizon_curriculum and horizon_cap > 1
                and stats["success_rate"] >= config.curriculum_threshold):
            horizon_cap -= 1
        diagnostics.append(stats)
        if progress is not None:
            progress(update, stats)
    return TrainResult(ac=ac, curve=curve, config=config, seed=seed,
                       diagnostics=diagnostics)


# -- persistence -----------------------------------------------------------

def policy_arrays(ac: ActorCritic) -> dict[str, np.ndarray]:
    arrays = {}
    arrays.update(mlp_to_arrays(ac.actor, "actor"))
    arrays.update(mlp_to_arrays(ac.critic, "critic"))
    arrays["log_std"] = ac.head.log_std.detach().numpy()
    arrays["max_speed"] = ac.max_speed
    arrays["num_agents"] = np.array([ac.num_agents], dtype=float)
    arrays["value_stats"] = np.array(
        [ac.value_mean, ac.value_std, ac.value_count])
    return arrays


def save_policy(path, ac: ActorCritic) -> None:
    save_checkpoint(path, policy_arrays(ac))


def load_policy(path) -> ActorCritic:
    arrays = load_checkpoint(path)
    actor = mlp_from_arrays(arrays, "actor")
    critic = mlp_from_arrays(arrays, "critic")
    head = GaussianHead(len(arrays["log_std"]))
    with torch.no_grad():
        head.log_std.copy_(torch.from_numpy(arrays["log_std"]))
    stats = arrays.get("value_stats", np.array([0.0, 1.0, 0.0]))
    return ActorCritic(
        actor=actor, head=head, critic=critic,
        max_speed=arrays["max_speed"].copy(),
        num_agents=int(arrays["num_agents"][0]),
        value_mean=float(stats[0]), value_std=float(stats[1]),
        value_count=float(stats[2]),
    )


def write_curve_csv(path, curve: list[tuple[int, float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["learning_step", "mean_steps", "std_steps"])
        for step, mean, std in curve:
            writer.writerow([step, f"{mean:.12g}", f"{std:.12g}"])
