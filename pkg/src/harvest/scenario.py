"""World description: targets, agents, kinematic limits, and builtin instances.

A scenario is immutable after construction and is shared freely between
environments, planners, and trainers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path


class ScenarioParseError(Exception):
    """Raised when a scenario file is malformed (missing keys, bad types)."""


class ScenarioValidationError(Exception):
    """Raised when a parsed scenario violates an invariant."""


@dataclass(frozen=True)
class TargetSpec:
    """Fixed sensor node with a Shannon-rate channel to the agents."""

    position: tuple[float, float]
    bandwidth: float        # rate scale B, data units per time unit
    gain: float             # channel constant K, dimensionless
    initial_volume: float   # data units stored at the node


@dataclass(frozen=True)
class AgentSpec:
    """A single harvesting agent flying at constant height."""

    start: tuple[float, float]
    final: tuple[float, float]
    height: float = 0.5
    max_speed: float = 1.0  # world units per time unit


@dataclass(frozen=True)
class ScenarioConfig:
    targets: tuple[TargetSpec, ...]
    agents: tuple[AgentSpec, ...]
    n_max: int              # step budget per episode
    dt: float = 1.0         # time units per step

    @property
    def num_targets(self) -> int:
        return len(self.targets)

    @property
    def num_agents(self) -> int:
        return len(self.agents)


def validate(config: ScenarioConfig) -> list[str]:
    """Return the list of violated invariants; empty means valid."""
    problems: list[str] = []
    if config.num_targets < 1:
        problems.append("M_s >= 1: scenario needs at least one target")
    if config.num_agents < 1:
        problems.append("M_a >= 1: scenario needs at least one agent")
    if config.n_max < 1:
        problems.append("n_max >= 1")
    if not config.dt > 0:
        problems.append("dt > 0")
    for i, t in enumerate(config.targets):
        if not t.bandwidth > 0:
            problems.append(f"target {i}: bandwidth > 0 (got {t.bandwidth})")
        if not t.gain > 0:
            problems.append(f"target {i}: gain > 0 (got {t.gain})")
        if t.initial_volume < 0:
            problems.append(f"target {i}: initial_volume >= 0 (got {t.initial_volume})")
    for j, a in enumerate(config.agents):
        if a.height < 0:
            problems.append(f"agent {j}: height >= 0 (got {a.height})")
        if not a.max_speed > 0:
            problems.append(f"agent {j}: max_speed > 0 (got {a.max_speed})")
    positions = [t.position for t in config.targets]
    for i in range(len(positions)):
        for k in range(i + 1, len(positions)):
            if positions[i] == positions[k]:
                problems.append(f"targets {i} and {k} share position {positions[i]}")
    return problems


def completion_lower_bound(config: ScenarioConfig) -> float:
    """Lower bound on completion time: max of direct travel and peak-rate harvesting.

    Travel side: slowest agent flying straight to its final position at max
    speed. Data side: total data divided by the largest summed rate the fleet
    can achieve (every agent parked over its best target).
    """
    travel = max(
        math.dist(a.start, a.final) / a.max_speed for a in config.agents
    )
    total_data = sum(t.initial_volume for t in config.targets)
    peak = sum(
        max(t.bandwidth * math.log2(1.0 + t.gain / (a.height**2)) for t in config.targets)
        for a in config.agents
        if a.height > 0
    )
    data = total_data / peak if peak > 0 else 0.0
    return max(travel, data)


def _default_step_budget(targets, agents, dt: float = 1.0) -> int:
    draft = ScenarioConfig(targets=targets, agents=agents, n_max=1, dt=dt)
    return max(1, math.ceil(3.0 * completion_lower_bound(draft) / dt))


def builtin_config_1() -> ScenarioConfig:
    """Four targets in a column-and-row layout, three agents sharing start/final."""
    positions = [(3.0, 1.0), (7.0, 1.0), (7.0, 5.0), (7.0, 7.0)]
    bandwidths = [0.5, 1.0, 1.5, 2.0]
    volumes = [5.0, 6.0, 3.0, 3.0]
    targets = tuple(
        TargetSpec(position=p, bandwidth=b, gain=0.7, initial_volume=v)
        for p, b, v in zip(positions, bandwidths, volumes)
    )
    agents = tuple(
        AgentSpec(start=(0.0, 1.0), final=(7.0, 9.0), height=0.5, max_speed=1.0)
        for _ in range(3)
    )
    return ScenarioConfig(
        targets=targets, agents=agents, n_max=_default_step_budget(targets, agents), dt=1.0
    )


def builtin_config_2() -> ScenarioConfig:
    """Five scattered targets, three agents from the origin to distinct finals."""
    positions = [(3.0, 1.0), (6.0, 7.0), (8.0, 2.0), (1.0, 6.0), (3.0, 9.0)]
    bandwidths = [0.5, 1.0, 1.5, 2.0, 2.5]
    volumes = [5.0, 6.0, 3.0, 4.0, 4.0]
    targets = tuple(
        TargetSpec(position=p, bandwidth=b, gain=0.7, initial_volume=v)
        for p, b, v in zip(positions, bandwidths, volumes)
    )
    finals = [(9.0, 6.0), (5.0, 5.0), (7.0, 8.0)]
    agents = tuple(
        AgentSpec(start=(0.0, 0.0), final=f, height=0.5, max_speed=1.0) for f in finals
    )
    return ScenarioConfig(
        targets=targets, agents=agents, n_max=_default_step_budget(targets, agents), dt=1.0
    )


BUILTINS = {"config1": builtin_config_1, "config2": builtin_config_2}


def resolve(name_or_path: str) -> ScenarioConfig:
    """Resolve 'builtin:<name>' or a file path to a validated scenario."""
    if name_or_path.startswith("builtin:"):
        key = name_or_path.split(":", 1)[1]
        if key not in BUILTINS:
            raise ScenarioParseError(
                f"unknown builtin scenario {key!r}; choose from {sorted(BUILTINS)}"
            )
        return BUILTINS[key]()
    return load(name_or_path)


def save(config: ScenarioConfig, path: str | Path) -> None:
    doc = {
        "targets": [
            {
                "position": list(t.position),
                "bandwidth": t.bandwidth,
                "gain": t.gain,
                "initial_volume": t.initial_volume,
            }
            for t in config.targets
        ],
        "agents": [
            {
                "start": list(a.start),
                "final": list(a.final),
                "height": a.height,
                "max_speed": a.max_speed,
            }
            for a in config.agents
        ],
        "n_max": config.n_max,
        "dt": config.dt,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _pair(raw, where: str) -> tuple[float, float]:
    if not isinstance(raw, (list, tuple)) or len(raw) != 2:
        raise ScenarioParseError(f"{where}: expected [x, y], got {raw!r}")
    return (float(raw[0]), float(raw[1]))


def load(path: str | Path) -> ScenarioConfig:
    """Parse and validate a scenario file; round-trips with :func:`save`."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: not valid JSON: {exc}") from exc
    for key in ("targets", "agents", "n_max", "dt"):
        if key not in doc:
            raise ScenarioParseError(f"{path}: missing top-level key {key!r}")
    try:
        targets = tuple(
            TargetSpec(
                position=_pair(t["position"], f"targets[{i}].position"),
                bandwidth=float(t["bandwidth"]),
                gain=float(t["gain"]),
                initial_volume=float(t["initial_volume"]),
            )
            for i, t in enumerate(doc["targets"])
        )
        agents = tuple(
            AgentSpec(
                start=_pair(a["start"], f"agents[{j}].start"),
                final=_pair(a["final"], f"agents[{j}].final"),
                height=float(a["height"]),
                max_speed=float(a["max_speed"]),
            )
            for j, a in enumerate(doc["agents"])
        )
        config = ScenarioConfig(
            targets=targets, agents=agents, n_max=int(doc["n_max"]), dt=float(doc["dt"])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioParseError(f"{path}: {exc!r}") from exc
    problems = validate(config)
    if problems:
        raise ScenarioValidationError(f"{path}: " + "; ".join(problems))
    return config


def to_dict(config: ScenarioConfig) -> dict:
    return asdict(config)
