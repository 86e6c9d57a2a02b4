import numpy as np
import pytest

from harvest import scenario as scn
from harvest.env import Environment, JointAction, PolarAction
from harvest.scenario import AgentSpec, ScenarioConfig, TargetSpec


@pytest.fixture(scope="session")
def config1():
    return scn.builtin_config_1()


@pytest.fixture(scope="session")
def config2():
    return scn.builtin_config_2()


@pytest.fixture(scope="session")
def tiny_scenario():
    """One agent, one target, small budget: fast end-to-end smoke runs."""
    return ScenarioConfig(
        targets=(TargetSpec(position=(1.0, 0.0), bandwidth=1.0, gain=0.7,
                            initial_volume=0.5),),
        agents=(AgentSpec(start=(0.0, 0.0), final=(2.0, 0.0), height=0.5,
                          max_speed=1.0),),
        n_max=8,
        dt=1.0,
    )


@pytest.fixture()
def env1(config1):
    return Environment(config1)


def joint_action(*pairs) -> JointAction:
    return JointAction(tuple(PolarAction(speed=r, heading=a) for r, a in pairs))


def hover(num_agents: int) -> JointAction:
    return joint_action(*[(0.0, 0.0)] * num_agents)


def micro_instance(rng: np.random.Generator) -> ScenarioConfig:
    """Random one-agent instance solvable within a 6-step horizon."""
    start = (0.0, 0.0)
    final = (float(rng.integers(0, 3)), float(rng.integers(0, 3)))
    num_targets = int(rng.integers(1, 3))
    targets = []
    for _ in range(num_targets):
        pos = (float(rng.uniform(-1.0, 3.0)), float(rng.uniform(-1.0, 3.0)))
        while any(pos == t.position for t in targets):
            pos = (float(rng.uniform(-1.0, 3.0)), float(rng.uniform(-1.0, 3.0)))
        targets.append(TargetSpec(position=pos, bandwidth=float(rng.uniform(0.5, 2.0)),
                                  gain=0.7, initial_volume=float(rng.uniform(0.05, 0.4))))
    return ScenarioConfig(
        targets=tuple(targets),
        agents=(AgentSpec(start=start, final=final, height=0.5, max_speed=1.0),),
        n_max=6,
        dt=1.0,
    )


def brute_force_optimal_steps(scenario: ScenarioConfig, step_length: float = 1.0,
                              substeps: int = 10) -> int | None:
    """Exhaustive depth-first search over joint discrete actions.

    Returns the minimum number of steps to reach the goal within the step
    budget, or None if unreachable.
    """
    from harvest.baselines import DiscreteActionSet
    from harvest.env import State

    env = Environment(scenario, substeps=substeps)
    action_set = DiscreteActionSet(scenario.num_agents, step_length)
    actions = [action_set.to_joint_action(a) for a in range(action_set.num_joint)]
    best = [None]

    def dfs(state, depth):
        if best[0] is not None and depth >= best[0]:
            return
        if env.is_terminal(state):
            best[0] = depth
            return
        if depth >= scenario.n_max:
            return
        for action in actions:
            delta = env.accumulate(state, action)
            child = State(positions=env.move(state.positions, action),
                          harvested=state.harvested + delta,
                          step_index=depth + 1)
            dfs(child, depth + 1)

    dfs(env.reset(), 0)
    return best[0]
