"""Evaluation harness: observation noise injection, batched deterministic
rollouts, and comparison tables.

The environment always transitions from the true state; noise only touches
what the policy sees.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import Environment, JointAction, State, TrajectoryRecord
from .nets import Mlp
from .scenario import ScenarioConfig
from . import smooth as smooth_mod

NOISE_KINDS = ("none", "random", "adversarial")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    eps: float = 0.0
    adversary: Mlp | None = None

    def validated(self) -> "NoiseSpec":
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"noise kind must be one of {NOISE_KINDS}")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.kind == "adversarial" and self.adversary is None:
            raise ValueError("adversarial noise requires an adversary network")
        return self


def perturb_observation(obs: np.ndarray, noise: NoiseSpec,
                        rng: np.random.Generator) -> np.ndarray:
    noise = noise.validated()
    if noise.kind == "none" or noise.eps == 0.0:
        return obs.copy() if noise.kind != "none" else obs
    if noise.kind == "random":
        return obs + rng.uniform(-noise.eps, noise.eps, size=obs.shape)
    return smooth_mod.perturb(noise.adversary, obs, noise.eps)


@dataclass
class EvalReport:
    times: np.ndarray
    successes: np.ndarray
    mean: float
    std: float
    trials: int
    label: str = ""

    @classmethod
    def from_trials(cls, times, successes, label: str = "") -> "EvalReport":
        times = np.asarray(times, dtype=float)
        successes = np.asarray(successes, dtype=bool)
        std = float(times.std(ddof=1)) if len(times) > 1 else 0.0
        return cls(times=times, successes=successes, mean=float(times.mean()),
                   std=std, trials=len(times), label=label)


def run_episode(env: Environment, policy, noise: NoiseSpec,
                rng: np.random.Generator,
                record: TrajectoryRecord | None = None) -> tuple[float, bool]:
    """One rollout with perturbed observations; returns (completion time, success)."""
    state = env.reset()
    if record is not None:
        record.states.append(state)
    steps = 0
    while True:
        obs = env.observe(state)
        action = policy(perturb_observation(obs, noise, rng))
        outcome = env.step(state, action)
        steps += 1
        state = outcome.next_state
        if record is not None:
            record.actions.append(action)
            record.states.append(state)
        if outcome.terminal:
            break
    success = env.is_terminal(state)
    return env.expected_completion_time(state, steps), success


def evaluate(policy, scenario: ScenarioConfig, noise: NoiseSpec, trials: int,
             seed: int, label: str = "", substeps: int = 10) -> EvalReport:
    """Repeated deterministic-policy rollouts with per-trial noise seeds."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    noise = noise.validated()
    env = Environment(scenario, substeps=substeps)
    trial_seeds = np.random.SeedSequence(seed).spawn(trials)
    times = np.zeros(trials)
    successes = np.zeros(trials, dtype=bool)
    for k in range(trials):
        rng = np.random.default_rng(trial_seeds[k])
        times[k], successes[k] = run_episode(env, policy, noise, rng)
    return EvalReport.from_trials(times, successes, label=label)


def write_report_csv(path: str | Path, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "T", "success"])
        for k in range(report.trials):
            writer.writerow([k, f"{report.times[k]:.12g}", int(report.successes[k])])


def write_summary_csv(path: str | Path, reports: list[EvalReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "trials", "mean", "std", "success_rate"])
        for r in reports:
            writer.writerow([
                r.label, r.trials, f"{r.mean:.12g}", f"{r.std:.12g}",
                f"{r.successes.mean():.12g}",
            ])


def compare(reports: list[EvalReport], labels: list[str] | None = None):
    """Aligned comparison of mean +/- std; returns (rows, rendered text)."""
    if len(reports) < 2:
        raise ValueError("need at least two reports to compare")
    if labels is None:
        labels = [r.label for r in reports]
    if len(labels) != len(reports):
        raise ValueError("labels/reports length mismatch")
    rows = [
        {"label": label, "mean": r.mean, "std": r.std, "trials": r.trials,
         "success_rate": float(r.successes.mean())}
        for label, r in zip(labels, reports)
    ]
    width = max(len(r["label"]) for r in rows)
    lines = [f"{'policy/noise'.ljust(width)}  {'T (mean +/- std)':>22}  trials  success"]
    for r in rows:
        lines.append(
            f"{r['label'].ljust(width)}  "
            f"{r['mean']:10.2f} +/- {r['std']:6.2f}  "
            f"{r['trials']:6d}  {r['success_rate']:7.2f}"
        )
    return rows, "\n".join(lines)
