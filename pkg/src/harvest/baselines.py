"""Discrete-action comparators: best-first tree search with an admissible
completion-time bound, and a double-Q learner over the joint action set.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .env import Environment, JointAction, PolarAction, State
from .nets import Mlp, OptimState, optimize_step, mlp_to_arrays, mlp_from_arrays, \
    save_checkpoint, load_checkpoint
from .scenario import ScenarioConfig

# Per-agent moves: (name, heading); hover has zero speed.
_DIRECTIONS = (
    ("north", math.pi / 2),
    ("east", 0.0),
    ("south", 3 * math.pi / 2),
    ("west", math.pi),
    ("hover", 0.0),
)
NUM_MOVES = len(_DIRECTIONS)


@dataclass(frozen=True)
class DiscreteActionSet:
    """Joint {north, east, south, west, hover} moves with a fixed step length."""

    num_agents: int
    step_length: float = 1.0

    @property
    def num_joint(self) -> int:
        return NUM_MOVES ** self.num_agents

    def decode(self, joint_id: int) -> tuple[int, ...]:
        if not 0 <= joint_id < self.num_joint:
            raise ValueError(f"joint id {joint_id} out of range")
        moves = []
        for _ in range(self.num_agents):
            moves.append(joint_id % NUM_MOVES)
            joint_id //= NUM_MOVES
        return tuple(moves)

    def encode(self, moves) -> int:
        joint_id = 0
        for m in reversed(list(moves)):
            if not 0 <= m < NUM_MOVES:
                raise ValueError(f"move index {m} out of range")
            joint_id = joint_id * NUM_MOVES + m
        return joint_id

    def to_joint_action(self, joint_id: int) -> JointAction:
        moves = self.decode(joint_id)
        return JointAction(tuple(
            PolarAction(
                speed=0.0 if _DIRECTIONS[m][0] == "hover" else self.step_length,
                heading=_DIRECTIONS[m][1],
            )
            for m in moves
        ))


def peak_fleet_rate(env: Environment) -> float:
    """Largest summed rate achievable: every agent parked over its best target."""
    total = 0.0
    for h in env.heights:
        per_target = env.bandwidth * np.log2(1.0 + env.gain / (h * h))
        total += float(per_target.max())
    return total


def heuristic(state: State, env: Environment) -> float:
    """Admissible lower bound on remaining completion time.

    Max of the slowest agent's direct travel time and the total remaining
    data divided by the peak fleet rate; both terms respect the goal
    tolerances so the bound is zero on goal states.
    """
    g = env.goal
    dists = np.linalg.norm(state.positions - g.final_positions, axis=1)
    travel = float(np.max(np.where(dists > g.position_tolerance,
                                   dists / env.max_speed, 0.0)))
    remaining = g.full_volumes - state.harvested
    open_data = np.where(remaining > g.data_tolerance, remaining, 0.0)
    data = float(open_data.sum()) / peak_fleet_rate(env)
    return max(travel, data)


def _state_key(state: State, data_quantum: float = 1e-2) -> tuple:
    pos = tuple(round(v, 6) for v in state.positions.ravel())
    data = tuple(int(round(v / data_quantum)) for v in state.harvested)
    return pos + data


@dataclass
class PlanResult:
    actions: list[int]
    states: list[State]
    expected_time: float
    complete: bool
    expansions: int
    incumbent_curve: list[tuple[int, float]] = field(default_factory=list)


def astar_plan(scenario: ScenarioConfig, step_length: float = 1.0,
               node_budget: int = 2_000_000, substeps: int = 10) -> PlanResult:
    """Best-first search on f = elapsed time + heuristic over the action tree.

    Always returns the incumbent with the lowest expected completion time;
    `complete` reports whether a goal state was actually reached.
    """
    env = Environment(scenario, substeps=substeps)
    action_set = DiscreteActionSet(scenario.num_agents, step_length)
    joint_actions = [action_set.to_joint_action(a) for a in range(action_set.num_joint)]

    start = env.reset()
    counter = 0
    # node records: key -> (state, parent_key, action_id, g_steps)
    nodes = {_state_key(start): (start, None, None, 0)}
    frontier = [(heuristic(start, env), counter, _state_key(start))]
    best_g: dict[tuple, float] = {_state_key(start): 0.0}

    incumbent_key = _state_key(start)
    incumbent_time = env.expected_completion_time(start, 0)
    incumbent_curve = [(0, incumbent_time)]
    complete = False
    expansions = 0

    while frontier and expansions < node_budget:
        _, _, key = heapq.heappop(frontier)
        state, _, _, g_steps = nodes[key]
        if g_steps * env.dt > best_g.get(key, math.inf):
            continue
        expansions += 1
        ect = env.expected_completion_time(state, g_steps)
        if ect < incumbent_time:
            incumbent_time = ect
            incumbent_key = key
            incumbent_curve.append((expansions, ect))
        if env.is_terminal(state):
            # An executable complete plan beats any partial-plan estimate.
            complete = True
            incumbent_time = ect
            incumbent_key = key
            if incumbent_curve[-1][1] != ect:
                incumbent_curve.append((expansions, ect))
            break
        if g_steps >= scenario.n_max:
            continue
        for action_id, action in enumerate(joint_actions):
            delta = env.accumulate(state, action)
            child = State(
                positions=env.move(state.positions, action),
                harvested=state.harvested + delta,
                step_index=g_steps + 1,
            )
            child_key = _state_key(child)
            child_g = (g_steps + 1) * env.dt
            if child_g >= best_g.get(child_key, math.inf):
                continue
            best_g[child_key] = child_g
            nodes[child_key] = (child, key, action_id, g_steps + 1)
            counter += 1
            heapq.heappush(frontier, (child_g + heuristic(child, env), counter, child_key))

    # Reconstruct the incumbent path.
    actions: list[int] = []
    states: list[State] = []
    key = incumbent_key
    while key is not None:
        state, parent, action_id, _ = nodes[key]
        states.append(state)
        if action_id is not None:
            actions.append(action_id)
        key = parent
    states.reverse()
    actions.reverse()
    return PlanResult(
        actions=actions,
        states=states,
        expected_time=incumbent_time,
        complete=complete,
        expansions=expansions,
        incumbent_curve=incumbent_curve,
    )


# -- DDQN -------------------------------------------------------------------

@dataclass
class DqnConfig:
    replay_capacity: int = 100_000
    target_sync: int = 1_000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 200_000
    gamma: float = 0.99
    lr: float = 1e-3
    batch_size: int = 64
    step_length: float = 1.0
    total_steps: int = 250_000
    warmup_steps: int = 1_000
    update_every: int = 1
    hidden: tuple[int, int] = (64, 64)
    substeps: int = 10

    def validated(self) -> "DqnConfig":
        for name in ("replay_capacity", "target_sync", "batch_size", "total_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        return self


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.size = 0
        self.pos = 0

    def add(self, obs, action, reward, next_obs, done):
        i = self.pos
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = float(done)
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, size=batch_size)
        return (self.obs[idx], self.actions[idx], self.rewards[idx],
                self.next_obs[idx], self.dones[idx])


def double_q_targets(online: Mlp, target: Mlp, rewards: torch.Tensor,
                     next_obs: torch.Tensor, dones: torch.Tensor,
                     gamma: float) -> torch.Tensor:
    """Online network picks the argmax action, target network evaluates it."""
    with torch.no_grad():
        best = online(next_obs).argmax(dim=-1, keepdim=True)
        next_q = target(next_obs).gather(-1, best).squeeze(-1)
        return rewards + gamma * (1.0 - dones) * next_q


@dataclass
class DqnResult:
    qnet: Mlp
    action_set: DiscreteActionSet
    config: DqnConfig
    seed: int
    curve: list[tuple[int, float]] = field(default_factory=list)  # (episode, steps metric)


def greedy_policy(qnet: Mlp, action_set: DiscreteActionSet):
    def policy(obs: np.ndarray) -> JointAction:
        with torch.no_grad():
            q = qnet(torch.as_tensor(np.asarray(obs, dtype=float)))
        return action_set.to_joint_action(int(q.argmax()))

    return policy


def dqn_train(scenario: ScenarioConfig, config: DqnConfig, seed: int,
              progress=None) -> DqnResult:
    """Double-Q learning over the joint discrete action set.

    The Lagrangian terminal penalty is folded into the final transition's
    reward so the learner sees the same objective as the continuous policy.
    """
    config = config.validated()
    torch.set_num_threads(1)
    ss = np.random.SeedSequence(seed)
    init_seed, explore_seed, sample_seed = ss.spawn(3)
    init_rng = np.random.default_rng(init_seed)
    explore_rng = np.random.default_rng(explore_seed)
    sample_rng = np.random.default_rng(sample_seed)

    env = Environment(scenario, substeps=config.substeps)
    action_set = DiscreteActionSet(scenario.num_agents, config.step_length)
    joint_actions = [action_set.to_joint_action(a) for a in range(action_set.num_joint)]
    online = Mlp([env.obs_dim, *config.hidden, action_set.num_joint], rng=init_rng)
    target = mlp_from_arrays(mlp_to_arrays(online, "q"), "q")
    opt = OptimState(list(online.parameters()), lr=config.lr)

    buffer = ReplayBuffer(config.replay_capacity, env.obs_dim)
    state = env.reset()
    obs = env.observe(state)
    episode = 0
    episode_steps = 0
    updates = 0
    curve: list[tuple[int, float]] = []

    for step in range(config.total_steps):
        frac = min(1.0, step / config.eps_decay_steps)
        eps = config.eps_start + frac * (config.eps_end - config.eps_start)
        if explore_rng.random() < eps:
            action_id = int(explore_rng.integers(action_set.num_joint))
        else:
            with torch.no_grad():
                action_id = int(online(torch.as_tensor(obs)).argmax())
        outcome = env.step(state, joint_actions[action_id])
        episode_steps += 1
        reward = outcome.reward
        if outcome.terminal:
            reward -= outcome.terminal_penalty
        next_obs = env.observe(outcome.next_state)
        buffer.add(obs, action_id, reward, next_obs, outcome.terminal)

        if outcome.terminal:
            success = env.is_terminal(outcome.next_state)
            curve.append((episode, float(episode_steps if success else scenario.n_max)))
            episode += 1
            episode_steps = 0
            state = env.reset()
            obs = env.observe(state)
        else:
            state = outcome.next_state
            obs = next_obs

        if buffer.size >= config.warmup_steps and step % config.update_every == 0:
            b_obs, b_act, b_rew, b_next, b_done = buffer.sample(config.batch_size,
                                                                sample_rng)
            obs_t = torch.as_tensor(b_obs)
            targets = double_q_targets(
                online, target, torch.as_tensor(b_rew), torch.as_tensor(b_next),
                torch.as_tensor(b_done), config.gamma,
            )
            q = online(obs_t).gather(-1, torch.as_tensor(b_act)[:, None]).squeeze(-1)
            loss = ((q - targets) ** 2).mean()
            if not torch.isfinite(loss):
                raise FloatingPointError("non-finite DQN loss")
            params = list(online.parameters())
            grads = torch.autograd.grad(loss, params)
            optimize_step(params, list(grads), opt)
            updates += 1
            if updates % config.target_sync == 0:
                target = mlp_from_arrays(mlp_to_arrays(online, "q"), "q")
            if progress is not None and updates % 5_000 == 0:
                progress(step, float(loss))

    return DqnResult(qnet=online, action_set=action_set, config=config,
                     seed=seed, curve=curve)


def save_qnet(path, result: DqnResult) -> None:
    arrays = mlp_to_arrays(result.qnet, "q")
    arrays["step_length"] = np.array([result.config.step_length])
    arrays["num_agents"] = np.array([float(result.action_set.num_agents)])
    save_checkpoint(path, arrays)


def load_qnet(path) -> tuple[Mlp, DiscreteActionSet]:
    arrays = load_checkpoint(path)
    qnet = mlp_from_arrays(arrays, "q")
    action_set = DiscreteActionSet(int(arrays["num_agents"][0]),
                                   float(arrays["step_length"][0]))
    return qnet, action_set
