"""The harvesting MDP: rate model, kinematics, data accumulation, rewards.

State transitions are deterministic. An :class:`Environment` instance owns no
trajectory state beyond what the caller threads through it, but keeps
precomputed arrays for speed; one instance per execution context.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scenario import ScenarioConfig, TargetSpec

TWO_PI = 2.0 * math.pi

# Rate threshold used for the "effective communication range" disks.
RANGE_RATE_THRESHOLD = 0.01


@dataclass(frozen=True, eq=False)
class State:
    """Joint agent positions plus per-target harvested data."""

    positions: np.ndarray   # (M_a, 2)
    harvested: np.ndarray   # (M_s,)
    step_index: int = 0


@dataclass(frozen=True)
class PolarAction:
    speed: float    # rho in [0, max_speed]
    heading: float  # alpha in [0, 2*pi)


@dataclass(frozen=True)
class JointAction:
    actions: tuple[PolarAction, ...]

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        rho = np.array([a.speed for a in self.actions], dtype=float)
        alpha = np.array([a.heading for a in self.actions], dtype=float)
        return rho, alpha


@dataclass(frozen=True)
class GoalSpec:
    final_positions: np.ndarray   # (M_a, 2)
    full_volumes: np.ndarray      # (M_s,)
    position_tolerance: float = 0.05
    data_tolerance: float = 0.01
    multipliers: tuple[float, float] = (2.0, 2.0)  # (travel, remaining-data)


@dataclass(frozen=True)
class StepOutcome:
    next_state: State
    reward: float
    harvested_delta: np.ndarray
    terminal: bool
    terminal_penalty: float


def transmission_rate(agent_pos, height: float, target: TargetSpec) -> float:
    """Shannon-rate channel between one agent and one target.

    The squared distance includes the flight height, so the rate stays finite
    directly over a target.
    """
    dx = agent_pos[0] - target.position[0]
    dy = agent_pos[1] - target.position[1]
    d2 = dx * dx + dy * dy + height * height
    return target.bandwidth * math.log2(1.0 + target.gain / d2)


def comm_range_radius(bandwidth: float, gain: float,
                      threshold: float = RANGE_RATE_THRESHOLD) -> float:
    """Distance at which the rate drops to `threshold` (inverse of the rate model)."""
    return math.sqrt(gain / (2.0 ** (threshold / bandwidth) - 1.0))


class Environment:
    """Deterministic dynamics for one scenario.

    Instances are cheap; create one per rollout worker. All per-target and
    per-agent constants are cached as arrays.
    """

    def __init__(self, scenario: ScenarioConfig, goal: GoalSpec | None = None,
                 substeps: int = 10):
        if substeps < 1:
            raise ValueError("substeps must be >= 1")
        self.scenario = scenario
        self.substeps = substeps
        self.target_pos = np.array([t.position for t in scenario.targets], dtype=float)
        self.bandwidth = np.array([t.bandwidth for t in scenario.targets], dtype=float)
        self.gain = np.array([t.gain for t in scenario.targets], dtype=float)
        self.volumes = np.array([t.initial_volume for t in scenario.targets], dtype=float)
        self.start = np.array([a.start for a in scenario.agents], dtype=float)
        self.final = np.array([a.final for a in scenario.agents], dtype=float)
        self.heights = np.array([a.height for a in scenario.agents], dtype=float)
        self.max_speed = np.array([a.max_speed for a in scenario.agents], dtype=float)
        self.n_max = scenario.n_max
        self.dt = scenario.dt
        self.goal = goal if goal is not None else GoalSpec(
            final_positions=self.final.copy(), full_volumes=self.volumes.copy()
        )
        # Workspace extent for observation normalization: everything the
        # scenario mentions lies in [0, extent]^2.
        coords = np.concatenate([self.target_pos, self.start, self.final]).ravel()
        self.extent = max(1.0, float(np.max(np.abs(coords))))
        self.num_agents = scenario.num_agents
        self.num_targets = scenario.num_targets
        self.obs_dim = 2 * self.num_agents + self.num_targets

    # -- dynamics ---------------------------------------------------------

    def reset(self) -> State:
        return State(
            positions=self.start.copy(),
            harvested=np.zeros(self.num_targets),
            step_index=0,
        )

    def summed_rates(self, positions: np.ndarray) -> np.ndarray:
        """Per-target rate summed over agents; positions is (M_a, 2) or (S, M_a, 2)."""
        pts = np.asarray(positions, dtype=float)
        squeeze = pts.ndim == 2
        if squeeze:
            pts = pts[None]
        diff = pts[:, :, None, :] - self.target_pos[None, None, :, :]
        d2 = (diff * diff).sum(axis=-1) + (self.heights ** 2)[None, :, None]
        rates = self.bandwidth[None, None, :] * np.log2(1.0 + self.gain[None, None, :] / d2)
        out = rates.sum(axis=1)
        return out[0] if squeeze else out

    def move(self, positions: np.ndarray, action: JointAction) -> np.ndarray:
        rho, alpha = action.as_arrays()
        if rho.shape != (self.num_agents,):
            raise ValueError(f"expected {self.num_agents} per-agent actions")
        if np.any(rho < 0) or np.any(rho > self.max_speed * (1 + 1e-12)):
            raise ValueError(f"speed outside [0, max_speed]: {rho}")
        if np.any(alpha < 0) or np.any(alpha >= TWO_PI):
            raise ValueError(f"heading outside [0, 2*pi): {alpha}")
        disp = np.stack([rho * np.cos(alpha), rho * np.sin(alpha)], axis=1) * self.dt
        return positions + disp

    def accumulate(self, state: State, action: JointAction,
                   substeps: int | None = None) -> np.ndarray:
        """Per-target data increment along the straight-line motion.

        Trapezoidal rule over `substeps` equal subdivisions of the segment,
        clamped so no target exceeds its stored volume.
        """
        s = self.substeps if substeps is None else substeps
        if s < 1:
            raise ValueError("substeps must be >= 1")
        p0 = state.positions
        p1 = self.move(p0, action)
        frac = np.linspace(0.0, 1.0, s + 1)
        path = p0[None, :, :] + frac[:, None, None] * (p1 - p0)[None, :, :]
        rates = self.summed_rates(path)           # (s+1, M_s)
        weights = np.full(s + 1, 1.0)
        weights[0] = weights[-1] = 0.5
        delta = (weights[:, None] * rates).sum(axis=0) * (self.dt / s)
        remaining = np.maximum(0.0, self.volumes - state.harvested)
        return np.minimum(delta, remaining)

    def is_terminal(self, state: State, goal: GoalSpec | None = None) -> bool:
        g = goal or self.goal
        dists = np.linalg.norm(state.positions - g.final_positions, axis=1)
        if np.any(dists > g.position_tolerance):
            return False
        remaining = g.full_volumes - state.harvested
        return bool(np.all(remaining <= g.data_tolerance))

    def constraint_violation(self, state: State, goal: GoalSpec | None = None) -> np.ndarray:
        """Terminal-constraint vector f(x, g): (max travel time, remaining data 1-norm).

        Each component is zeroed when its constraint is met within tolerance,
        so the penalty vanishes exactly on goal states.
        """
        g = goal or self.goal
        dists = np.linalg.norm(state.positions - g.final_positions, axis=1)
        times = np.where(dists > g.position_tolerance, dists / self.max_speed, 0.0)
        remaining = g.full_volumes - state.harvested
        data = np.where(remaining > g.data_tolerance, np.maximum(remaining, 0.0), 0.0)
        return np.array([float(times.max()), float(data.sum())])

    def terminal_penalty(self, state: State, goal: GoalSpec | None = None) -> float:
        g = goal or self.goal
        lam = np.asarray(g.multipliers, dtype=float)
        return float(lam @ self.constraint_violation(state, g))

    def step(self, state: State, action: JointAction,
             goal: GoalSpec | None = None) -> StepOutcome:
        g = goal or self.goal
        if state.step_index >= self.n_max:
            raise RuntimeError("stepping past the step budget")
        if self.is_terminal(state, g):
            raise RuntimeError("stepping a terminal state")
        delta = self.accumulate(state, action)
        next_state = State(
            positions=self.move(state.positions, action),
            harvested=state.harvested + delta,
            step_index=state.step_index + 1,
        )
        terminal = self.is_terminal(next_state, g) or next_state.step_index >= self.n_max
        penalty = self.terminal_penalty(next_state, g) if terminal else 0.0
        return StepOutcome(
            next_state=next_state,
            reward=-1.0,
            harvested_delta=delta,
            terminal=terminal,
            terminal_penalty=penalty,
        )

    def expected_completion_time(self, final_state: State, steps_executed: int,
                                 goal: GoalSpec | None = None) -> float:
        """Executed time plus residual harvest time plus direct travel time.

        The residual harvest term assumes the agents park at their terminal
        positions; it is capped at 10 * n_max * dt when the residual rates
        cannot finish the data.
        """
        g = goal or self.goal
        base = steps_executed * self.dt
        cap = 10.0 * self.n_max * self.dt
        remaining = g.full_volumes - final_state.harvested
        open_targets = remaining > g.data_tolerance
        residual = 0.0
        if np.any(open_targets):
            rates = self.summed_rates(final_state.positions)
            per_target = np.where(
                rates[open_targets] > 1e-12,
                remaining[open_targets] / np.maximum(rates[open_targets], 1e-12),
                np.inf,
            )
            residual = min(float(per_target.max()), cap)
        dists = np.linalg.norm(final_state.positions - g.final_positions, axis=1)
        times = np.where(dists > g.position_tolerance, dists / self.max_speed, 0.0)
        return base + residual + float(times.max())

    # -- observations ------------------------------------------------------

    def observe(self, state: State) -> np.ndarray:
        """Normalized observation: positions / extent, harvested / volume; in [0, 1]."""
        pos = (state.positions / self.extent).ravel()
        vol = np.where(self.volumes > 0, self.volumes, 1.0)
        data = state.harvested / vol
        return np.concatenate([pos, data])


@dataclass
class TrajectoryRecord:
    """States and actions of one executed episode, exportable to CSV."""

    states: list[State] = field(default_factory=list)
    actions: list[JointAction] = field(default_factory=list)


def write_trajectory_csv(path: str | Path, scenario: ScenarioConfig,
                         record: TrajectoryRecord) -> None:
    """One row per (step, agent); actions are blank on the final row."""
    num_targets = scenario.num_targets
    header = ["step", "agent_id", "x", "y", "rho", "alpha"] + [
        f"harvested_{i}" for i in range(num_targets)
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k, state in enumerate(record.states):
            action = record.actions[k] if k < len(record.actions) else None
            for j in range(scenario.num_agents):
                row = [
                    k,
                    j,
                    f"{state.positions[j, 0]:.12g}",
                    f"{state.positions[j, 1]:.12g}",
                    f"{action.actions[j].speed:.12g}" if action else "",
                    f"{action.actions[j].heading:.12g}" if action else "",
                ]
                row += [f"{state.harvested[i]:.12g}" for i in range(num_targets)]
                writer.writerow(row)


def read_trajectory_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
