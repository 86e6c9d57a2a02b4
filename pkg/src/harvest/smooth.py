"""Adversarial policy smoothing: a bounded state-perturbation network trained
to maximize action divergence, plus the matching regularizer on the actor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .env import Environment
from .nets import Mlp, OptimState, optimize_step, mlp_to_arrays, mlp_from_arrays, \
    save_checkpoint, load_checkpoint
from .ppo import ActorCritic, PpoConfig, TrainResult, train
from .scenario import ScenarioConfig

DIVERGENCES = ("mean-squared-action", "gaussian-kl")


@dataclass
class SmoothConfig:
    eps: float = 0.05              # l-inf radius in normalized state units
    weight: float = 0.5            # regularizer coefficient on the actor loss
    adversary_steps: int = 5       # optimizer steps per training cycle
    adversary_lr: float = 1e-3
    divergence: str = "mean-squared-action"
    hidden: tuple[int, int] = (64, 64)

    def validated(self) -> "SmoothConfig":
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")
        if self.adversary_steps < 1:
            raise ValueError("adversary_steps must be >= 1")
        if self.divergence not in DIVERGENCES:
            raise ValueError(f"divergence must be one of {DIVERGENCES}")
        return self


def make_adversary(obs_dim: int, hidden=(64, 64),
                   rng: np.random.Generator | None = None) -> Mlp:
    rng = rng or np.random.default_rng(0)
    return Mlp([obs_dim, *hidden, obs_dim], rng=rng, out_scale=0.01)


def perturb(adversary: Mlp, obs, eps: float):
    """x + eps * tanh(raw output): the l-inf bound holds by construction."""
    x = torch.as_tensor(np.asarray(obs, dtype=float))
    with torch.no_grad():
        return (x + eps * torch.tanh(adversary(x))).numpy()


def _divergence(ac: ActorCritic, x: torch.Tensor, x_hat: torch.Tensor,
                kind: str) -> torch.Tensor:
    mean = ac.actor(x)
    mean_hat = ac.actor(x_hat)
    if kind == "mean-squared-action":
        return ((mean - mean_hat) ** 2).sum(dim=-1).mean()
    if kind == "gaussian-kl":
        # Diagonal Gaussians sharing the state-independent std.
        var = ac.head.std() ** 2
        return (((mean - mean_hat) ** 2) / (2.0 * var)).sum(dim=-1).mean()
    raise ValueError(f"unknown divergence {kind!r}")


def gaussian_kl(mean_a: torch.Tensor, std_a: torch.Tensor,
                mean_b: torch.Tensor, std_b: torch.Tensor) -> torch.Tensor:
    """Closed-form KL between diagonal Gaussians, summed over dimensions."""
    var_a, var_b = std_a ** 2, std_b ** 2
    per_dim = torch.log(std_b / std_a) + (var_a + (mean_a - mean_b) ** 2) / (2 * var_b) - 0.5
    return per_dim.sum(dim=-1)


def adversary_update(adversary: Mlp, ac: ActorCritic, obs_batch: np.ndarray,
                     config: SmoothConfig, opt: OptimState | None = None) -> float:
    """Ascend the action divergence w.r.t. the adversary only; actor frozen.

    Returns the mean divergence achieved after the final step.
    """
    config = config.validated()
    opt = opt or OptimState(list(adversary.parameters()), lr=config.adversary_lr)
    x = torch.as_tensor(np.asarray(obs_batch, dtype=float))
    params = list(adversary.parameters())
    achieved = 0.0
    for _ in range(config.adversary_steps):
        x_hat = x + config.eps * torch.tanh(adversary(x))
        div = _divergence(ac, x, x_hat, config.divergence)
        if not torch.isfinite(div):
            raise FloatingPointError("non-finite adversary loss")
        grads = torch.autograd.grad(-div, params)
        optimize_step(params, list(grads), opt)
    with torch.no_grad():
        x_hat = x + config.eps * torch.tanh(adversary(x))
        achieved = float(_divergence(ac, x, x_hat, config.divergence))
    return achieved


def regularizer(ac: ActorCritic, adversary: Mlp, obs_batch,
                config: SmoothConfig) -> torch.Tensor:
    """Mean action divergence between true and perturbed states.

    Differentiable w.r.t. the actor; the adversary's perturbation is treated
    as a fixed input (detached).
    """
    x = torch.as_tensor(np.asarray(obs_batch, dtype=float)) \
        if not isinstance(obs_batch, torch.Tensor) else obs_batch
    with torch.no_grad():
        x_hat = x + config.eps * torch.tanh(adversary(x))
    return _divergence(ac, x, x_hat, config.divergence)


@dataclass
class SmoothTrainResult:
    result: TrainResult
    adversary: Mlp
    smooth_config: SmoothConfig


def train_smooth(scenario: ScenarioConfig, ppo_config: PpoConfig,
                 smooth_config: SmoothConfig, seed: int,
                 progress=None) -> SmoothTrainResult:
    """PPO with the smoothing regularizer; the adversary is refit each cycle
    before the actor update and returned for use as an evaluation noise source.
    """
    smooth_config = smooth_config.validated()
    env = Environment(scenario)
    adv_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(4)[3])
    adversary = make_adversary(env.obs_dim, hidden=smooth_config.hidden, rng=adv_rng)
    adv_opt = OptimState(list(adversary.parameters()), lr=smooth_config.adversary_lr)

    holder: dict = {}

    def pre_update(batch_obs: np.ndarray) -> None:
        adversary_update(adversary, holder["ac"], batch_obs, smooth_config, adv_opt)

    def extra_actor_loss(mb_obs: torch.Tensor) -> torch.Tensor:
        return smooth_config.weight * regularizer(holder["ac"], adversary, mb_obs,
                                                  smooth_config)

    result = train(scenario, ppo_config, seed, extra_actor_loss=extra_actor_loss,
                   pre_update=pre_update, progress=progress,
                   on_init=lambda ac: holder.__setitem__("ac", ac))
    return SmoothTrainResult(result=result, adversary=adversary,
                             smooth_config=smooth_config)


def fit_adversary(ac: ActorCritic, obs_batch: np.ndarray, config: SmoothConfig,
                  seed: int, steps: int = 200) -> Mlp:
    """Train a fresh adversary to attack a fixed policy (evaluation attacks)."""
    config = config.validated()
    rng = np.random.default_rng(seed)
    adversary = make_adversary(obs_batch.shape[1], hidden=config.hidden, rng=rng)
    opt = OptimState(list(adversary.parameters()), lr=config.adversary_lr)
    per_call = SmoothConfig(**{**config.__dict__, "adversary_steps": 1})
    for _ in range(steps):
        adversary_update(adversary, ac, obs_batch, per_call, opt)
    return adversary


def save_adversary(path, adversary: Mlp) -> None:
    save_checkpoint(path, mlp_to_arrays(adversary, "adversary"))


def load_adversary(path) -> Mlp:
    return mlp_from_arrays(load_checkpoint(path), "adversary")
