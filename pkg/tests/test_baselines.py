import dataclasses
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from conftest import brute_force_optimal_steps, micro_instance
from harvest.baselines import (
    DiscreteActionSet,
    DqnConfig,
    ReplayBuffer,
    astar_plan,
    double_q_targets,
    dqn_train,
    greedy_policy,
    heuristic,
    load_qnet,
    peak_fleet_rate,
    save_qnet,
)
from harvest.env import Environment, State
from harvest.nets import Mlp
from harvest.scenario import AgentSpec, ScenarioConfig, TargetSpec


class TestDiscreteActionSet:
    @given(st.integers(min_value=1, max_value=4))
    @settings(deadline=None)
    def test_encode_decode_bijection(self, num_agents):
        action_set = DiscreteActionSet(num_agents)
        seen = set()
        for joint_id in range(action_set.num_joint):
            moves = action_set.decode(joint_id)
            assert action_set.encode(moves) == joint_id
            seen.add(moves)
        assert len(seen) == 5 ** num_agents

    def test_moves_displace_correctly(self):
        action_set = DiscreteActionSet(1, step_length=1.0)
        scenario = ScenarioConfig(
            targets=(TargetSpec(position=(5.0, 5.0), bandwidth=1.0, gain=0.7,
                                initial_volume=1.0),),
            agents=(AgentSpec(start=(0.0, 0.0), final=(1.0, 0.0), height=0.5,
                              max_speed=1.0),),
            n_max=4, dt=1.0,
        )
        env = Environment(scenario)
        displacements = {}
        for joint_id in range(5):
            out = env.move(np.zeros((1, 2)), action_set.to_joint_action(joint_id))
            displacements[joint_id] = tuple(np.round(out[0], 12))
        assert set(displacements.values()) == {
            (0.0, 1.0), (1.0, 0.0), (0.0, -1.0), (-1.0, 0.0), (0.0, 0.0)
        }

    def test_out_of_range(self):
        action_set = DiscreteActionSet(2)
        with pytest.raises(ValueError, match="out of range"):
            action_set.decode(25)
        with pytest.raises(ValueError, match="out of range"):
            action_set.encode([5, 0])


class TestHeuristic:
    def test_zero_at_goal(self, env1):
        goal = State(positions=env1.final.copy(), harvested=env1.volumes.copy())
        assert heuristic(goal, env1) == 0.0

    def test_travel_term(self, env1):
        positions = env1.final.copy()
        positions[0, 0] -= 4.0
        state = State(positions=positions, harvested=env1.volumes.copy())
        assert heuristic(state, env1) == pytest.approx(4.0)

    def test_data_term(self, env1):
        state = State(positions=env1.final.copy(), harvested=np.zeros(4))
        expected = env1.volumes.sum() / peak_fleet_rate(env1)
        assert heuristic(state, env1) == pytest.approx(expected)

    def test_peak_fleet_rate_is_overhead_rate(self, env1):
        # each agent parked directly over the best target, d^2 = h^2
        best = max(
            b * math.log2(1.0 + g / 0.25)
            for b, g in zip(env1.bandwidth, env1.gain)
        )
        assert peak_fleet_rate(env1) == pytest.approx(3 * best)

    def test_admissible_on_random_instances(self):
        # The bound must never exceed the true optimal completion time.
        rng = np.random.default_rng(42)
        checked = 0
        while checked < 100:
            scenario = micro_instance(rng)
            optimum = brute_force_optimal_steps(scenario)
            if optimum is None:
                continue
            env = Environment(scenario)
            assert heuristic(env.reset(), env) <= optimum * scenario.dt + 1e-9
            checked += 1


class TestAstar:
    def test_start_at_goal(self):
        scenario = ScenarioConfig(
            targets=(TargetSpec(position=(5.0, 5.0), bandwidth=1.0, gain=0.7,
                                initial_volume=0.0),),
            agents=(AgentSpec(start=(1.0, 1.0), final=(1.0, 1.0), height=0.5,
                              max_speed=1.0),),
            n_max=4, dt=1.0,
        )
        plan = astar_plan(scenario)
        assert plan.complete and plan.actions == []
        assert plan.expected_time == 0.0

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(3)
        checked = 0
        while checked < 25:
            scenario = micro_instance(rng)
            optimum = brute_force_optimal_steps(scenario)
            if optimum is None:
                continue
            plan = astar_plan(scenario)
            assert plan.complete
            assert len(plan.actions) == optimum
            checked += 1

    def test_plan_replays_to_goal(self):
        rng = np.random.default_rng(9)
        scenario = micro_instance(rng)
        while brute_force_optimal_steps(scenario) is None:
            scenario = micro_instance(rng)
        plan = astar_plan(scenario)
        env = Environment(scenario)
        action_set = DiscreteActionSet(scenario.num_agents)
        state = env.reset()
        for action_id in plan.actions:
            out = env.step(state, action_set.to_joint_action(action_id))
            state = out.next_state
        assert env.is_terminal(state)

    def test_node_budget_returns_incumbent(self, config1):
        plan = astar_plan(config1, node_budget=50)
        assert not plan.complete
        assert plan.expansions <= 50
        assert plan.expected_time > 0
        assert plan.incumbent_curve[0][0] == 0
        times = [t for _, t in plan.incumbent_curve]
        assert times == sorted(times, reverse=True)


class TestReplayBuffer:
    def test_wraparound(self):
        buf = ReplayBuffer(capacity=4, obs_dim=2)
        for k in range(6):
            buf.add(np.full(2, k), k, float(k), np.full(2, k + 1), False)
        assert buf.size == 4
        assert set(buf.actions.tolist()) == {2, 3, 4, 5}

    def test_sample_shapes(self):
        buf = ReplayBuffer(capacity=8, obs_dim=3)
        for k in range(8):
            buf.add(np.zeros(3), 0, 0.0, np.zeros(3), False)
        obs, act, rew, nxt, done = buf.sample(5, np.random.default_rng(0))
        assert obs.shape == (5, 3) and act.shape == (5,) and nxt.shape == (5, 3)


class TestDoubleQ:
    def test_terminal_transition_is_reward_only(self):
        net = Mlp([3, 4, 5], rng=np.random.default_rng(0))
        rewards = torch.tensor([-2.0, -3.0])
        dones = torch.tensor([1.0, 1.0])
        targets = double_q_targets(net, net, rewards, torch.zeros(2, 3), dones, 0.9)
        assert torch.allclose(targets, rewards)

    def test_never_exceeds_single_q_target(self):
        # Target-net evaluation of the online argmax is bounded above by the
        # target net's own max.
        rng = np.random.default_rng(1)
        online = Mlp([3, 8, 5], rng=rng)
        target = Mlp([3, 8, 5], rng=rng)
        next_obs = torch.as_tensor(rng.uniform(-1, 1, size=(32, 3)))
        rewards = torch.zeros(32)
        dones = torch.zeros(32)
        ddqn = double_q_targets(online, target, rewards, next_obs, dones, 1.0)
        with torch.no_grad():
            single = target(next_obs).max(dim=-1).values
        assert torch.all(ddqn <= single + 1e-12)

    def test_identical_nets_equal_max(self):
        net = Mlp([3, 8, 5], rng=np.random.default_rng(2))
        next_obs = torch.as_tensor(np.random.default_rng(0).uniform(-1, 1, (16, 3)))
        ddqn = double_q_targets(net, net, torch.zeros(16), next_obs,
                                torch.zeros(16), 1.0)
        with torch.no_grad():
            assert torch.allclose(ddqn, net(next_obs).max(dim=-1).values)


class TestDqnTrain:
    CFG = DqnConfig(total_steps=600, warmup_steps=50, eps_decay_steps=300,
                    batch_size=16, target_sync=50, hidden=(16,))

    def test_smoke_and_determinism(self, tiny_scenario):
        a = dqn_train(tiny_scenario, self.CFG, seed=0)
        b = dqn_train(tiny_scenario, self.CFG, seed=0)
        assert a.curve == b.curve
        assert len(a.curve) > 0
        for pa, pb in zip(a.qnet.parameters(), b.qnet.parameters()):
            assert torch.equal(pa, pb)

    def test_config_validation(self):
        with pytest.raises(ValueError, match="batch_size"):
            dataclasses.replace(self.CFG, batch_size=0).validated()

    def test_qnet_round_trip(self, tiny_scenario, tmp_path):
        result = dqn_train(tiny_scenario, self.CFG, seed=0)
        path = tmp_path / "qnet.ckpt"
        save_qnet(path, result)
        qnet, action_set = load_qnet(path)
        assert action_set == result.action_set
        env = Environment(tiny_scenario)
        obs = env.observe(env.reset())
        assert greedy_policy(qnet, action_set)(obs) == \
            greedy_policy(result.qnet, result.action_set)(obs)
