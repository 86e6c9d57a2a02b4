"""Shared experiment runners with on-disk caching.

Training runs land in the artifact directory (override with
HARVEST_ARTIFACTS); a run is only considered complete once its result.json
exists, so interrupted runs are redone from scratch. Every run is
deterministic given its seed, making cached and freshly trained artifacts
interchangeable.
"""

from __future__ import annotations

import dataclasses
import json
import os
from pathlib import Path

import numpy as np

from harvest import baselines, evaluation, ppo, scenario as scn, smooth as smooth_mod
from harvest.env import Environment

ARTIFACTS = Path(os.environ.get(
    "HARVEST_ARTIFACTS",
    Path(__file__).resolve().parents[1] / "artifacts",
))

# Default per-seed training budget (learning steps / PPO updates).
PPO_UPDATES = 3000
DQN_STEPS = 250_000


def _finish(out: Path, payload: dict) -> dict:
    (out / "result.json").write_text(json.dumps(payload, indent=2) + "\n")
    return payload


def _load_if_done(out: Path) -> dict | None:
    marker = out / "result.json"
    if marker.exists():
        return json.loads(marker.read_text())
    return None


def ppo_run_dir(scenario_name: str, scheme: str, seed: int,
                smooth: bool = False) -> Path:
    tag = "smooth" if smooth else scheme
    return ARTIFACTS / scenario_name / tag / f"seed{seed}"


def ensure_ppo_run(scenario_name: str = "config1", scheme: str = "lagrangian",
                   seed: int = 0, smooth: bool = False,
                   updates: int = PPO_UPDATES, progress=None) -> dict:
    """Train (or load) one policy; returns the run summary dict."""
    out = ppo_run_dir(scenario_name, scheme, seed, smooth)
    cached = _load_if_done(out)
    if cached is not None:
        return cached
    out.mkdir(parents=True, exist_ok=True)
    scenario = scn.resolve(f"builtin:{scenario_name}")
    config = ppo.PpoConfig(scheme=scheme, total_updates=updates)
    if smooth:
        result = smooth_mod.train_smooth(scenario, config,
                                         smooth_mod.SmoothConfig(), seed,
                                         progress=progress)
        smooth_mod.save_adversary(out / "adversary.ckpt", result.adversary)
        train_result = result.result
    else:
        train_result = ppo.train(scenario, config, seed, progress=progress)
    ppo.save_policy(out / "policy.ckpt", train_result.ac)
    ppo.write_curve_csv(out / "curve.csv", train_result.curve)
    last = train_result.diagnostics[-1]
    return _finish(out, {
        "scenario": scenario_name,
        "scheme": scheme,
        "smooth": smooth,
        "seed": seed,
        "updates": updates,
        "final_mean_steps": train_result.final_mean_steps,
        "final_std_steps": train_result.final_std_steps,
        "final_success_rate": last["success_rate"],
        "policy": str(out / "policy.ckpt"),
        "adversary": str(out / "adversary.ckpt") if smooth else None,
    })


def ensure_dqn_run(scenario_name: str = "config1", seed: int = 0,
                   steps: int = DQN_STEPS, progress=None) -> dict:
    out = ARTIFACTS / scenario_name / "dqn" / f"seed{seed}"
    cached = _load_if_done(out)
    if cached is not None:
        return cached
    out.mkdir(parents=True, exist_ok=True)
    scenario = scn.resolve(f"builtin:{scenario_name}")
    config = dataclasses.replace(baselines.DqnConfig(), total_steps=steps)
    result = baselines.dqn_train(scenario, config, seed, progress=progress)
    baselines.save_qnet(out / "qnet.ckpt", result)
    with open(out / "curve.csv", "w") as fh:
        fh.write("episode,steps\n")
        for episode, ep_steps in result.curve:
            fh.write(f"{episode},{ep_steps:.12g}\n")
    tail = [s for _, s in result.curve[-50:]]
    return _finish(out, {
        "scenario": scenario_name,
        "seed": seed,
        "steps": steps,
        "tail_mean_steps": float(np.mean(tail)) if tail else float("nan"),
        "qnet": str(out / "qnet.ckpt"),
    })


def gather_observations(ac, scenario, episodes: int = 8,
                        seed: int = 0) -> np.ndarray:
    """Observations visited by the policy's own rollouts (adversary fitting)."""
    import torch
    generator = torch.Generator()
    generator.manual_seed(seed)
    config = ppo.PpoConfig()
    trajs = ppo.collect_rollouts(lambda: Environment(scenario), ac, config,
                                 generator, count=episodes)
    return np.concatenate([t.obs for t in trajs])


def ensure_policy_eval(run: dict, trials: int = 100, eps: float = 0.05,
                       seed: int = 10_000) -> dict:
    """Evaluate a trained policy under none/random/adversarial noise.

    The adversarial attack uses a freshly fitted adversary against this
    specific policy. Results are cached beside the policy checkpoint.
    """
    out = Path(run["policy"]).parent
    cache = out / f"eval_eps{eps}_trials{trials}.json"
    if cache.exists():
        return json.loads(cache.read_text())
    scenario = scn.resolve(f"builtin:{run['scenario']}")
    ac = ppo.load_policy(run["policy"])
    policy = ppo.deterministic_policy(ac)
    obs = gather_observations(ac, scenario, seed=seed)
    attack = smooth_mod.fit_adversary(
        ac, obs, smooth_mod.SmoothConfig(eps=eps), seed=seed)
    smooth_mod.save_adversary(out / f"attack_eps{eps}.ckpt", attack)
    specs = {
        "none": evaluation.NoiseSpec(kind="none"),
        "random": evaluation.NoiseSpec(kind="random", eps=eps),
        "adversarial": evaluation.NoiseSpec(kind="adversarial", eps=eps,
                                            adversary=attack),
    }
    results = {}
    for name, spec in specs.items():
        report = evaluation.evaluate(policy, scenario, spec, trials, seed,
                                     label=name)
        results[name] = {
            "mean": report.mean,
            "std": report.std,
            "success_rate": float(report.successes.mean()),
        }
    cache.write_text(json.dumps(results, indent=2) + "\n")
    return results


def deterministic_episode(run: dict) -> dict:
    """One noiseless deterministic rollout; returns time/steps/success."""
    scenario = scn.resolve(f"builtin:{run['scenario']}")
    env = Environment(scenario)
    ac = ppo.load_policy(run["policy"])
    policy = ppo.deterministic_policy(ac)
    t, success = evaluation.run_episode(env, policy, evaluation.NoiseSpec(),
                                        np.random.default_rng(0))
    steps = t / scenario.dt if success else scenario.n_max
    return {"time": t, "success": success, "steps": steps}


def dqn_deterministic_episode(run: dict) -> dict:
    scenario = scn.resolve(f"builtin:{run['scenario']}")
    env = Environment(scenario)
    qnet, action_set = baselines.load_qnet(run["qnet"])
    policy = baselines.greedy_policy(qnet, action_set)
    t, success = evaluation.run_episode(env, policy, evaluation.NoiseSpec(),
                                        np.random.default_rng(0))
    return {"time": t, "success": success}
