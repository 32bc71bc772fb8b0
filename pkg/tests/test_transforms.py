"""
Unit tests for model transforms.

Tests:
- Exit lanes encode step-wise discounting
- The hierarchical chain generator
- Monitor effects and corrupted rows
- The pushdown product against the direct monitor interpreter
"""

import numpy as np
import pytest

from rmdp.config import make_rng
from rmdp.errors import FlatModelRequired
from rmdp.models.pda import POP, PUSH, STAY
from rmdp.models.rmdp import Component, Rmdp, call_port, node, return_port
from rmdp.services.envs import cloud_rmdp, palindrome_env, palindrome_grid, palindrome_pda
from rmdp.services.oracle import solve_1exit
from rmdp.services.semantics import initial_config, run_episode
from rmdp.services.transforms import (
    ACCEPT,
    MOVE,
    REJECT,
    PdaMonitor,
    ProductRewards,
    add_exit_lane,
    corrupted_row,
    hierarchical_chain,
    monitor_effect,
    pda_product,
)
from rmdp.services.truncated import solve_truncated
from rmdp.services.validators import is_deterministic, is_single_exit, validate
from tests.factories import random_flat_model, toy_call_model

GOALS = ["c11"]


class TestExitLane:
    """Discounting as stopping."""

    def test_lane_structure(self):
        """A fresh exit per component; rows leak 1 - lambda into it."""
        m = add_exit_lane(toy_call_model(), 0.9)
        main = m.component("Main")
        assert main.exits == ("m_ex", "Main_lane")
        assert main.row(node("m_en"), "a") == (
            (call_port("box", "s_en"), 0.9),
            (node("Main_lane"), pytest.approx(0.1)),
        )
        assert main.row(return_port("box", "Sub_lane"), "go") == ((node("Main_lane"), 1.0),)
        assert main.reward(return_port("box", "Sub_lane"), "go") == 0.0
        assert validate(m) == []

    def test_discounted_value(self):
        """The toy model is worth 2 + lambda * 3 after the transform."""
        m = add_exit_lane(toy_call_model(), 0.9)
        values = solve_truncated(m, 5, 1e-12)
        assert values.value("Main", node("m_en")) == pytest.approx(2.0 + 0.9 * 3.0, abs=1e-9)

    def test_fresh_names_avoid_collisions(self):
        """An existing node called <name>_lane is not reused."""
        comp = Component(
            name="A",
            entries=("en",),
            exits=("A_lane",),
            actions=frozenset({"a"}),
            transitions={(node("en"), "a"): ((node("A_lane"), 1.0),)},
        )
        m = add_exit_lane(Rmdp((comp,)), 0.5)
        assert m.component("A").exits == ("A_lane", "A_lane2")

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("discount", [0.5, 0.9])
    def test_matches_discounted_value_iteration(self, seed, discount):
        """On box-free models the lane reproduces classical discounted values."""
        m = random_flat_model(seed)
        comp = m.components[0]
        states = sorted(comp.nodes - set(comp.exits))
        index = {name: i for i, name in enumerate(states)}
        values = np.zeros(len(states))
        for _ in range(2000):
            updated = np.empty_like(values)
            for name in states:
                best = -np.inf
                for a in comp.enabled_actions(node(name)):
                    future = sum(
                        p * values[index[dst.node]]
                        for dst, p in comp.row(node(name), a)
                        if dst.node in index
                    )
                    best = max(best, comp.reward(node(name), a) + discount * future)
                updated[index[name]] = best
            values = updated
        solution = solve_1exit(add_exit_lane(m, discount))
        for name in states:
            assert solution.value(node(name)) == pytest.approx(values[index[name]], abs=1e-9)

    def test_expected_termination_time(self):
        """Paying 1 per step on a certain self-loop, lambda = 0.99 stops after 100 steps on average."""
        comp = Component(
            name="A",
            entries=("en",),
            exits=("ex",),
            nodes=frozenset({"loop"}),
            actions=frozenset({"a"}),
            transitions={
                (node("en"), "a"): ((node("loop"), 1.0),),
                (node("loop"), "a"): ((node("loop"), 1.0),),
            },
            rewards={(node("en"), "a"): 1.0, (node("loop"), "a"): 1.0},
        )
        solution = solve_1exit(add_exit_lane(Rmdp((comp,)), 0.99))
        assert solution.entry_value("en") == pytest.approx(100.0, abs=1e-6)
        assert solution.value(node("loop")) == pytest.approx(100.0, abs=1e-6)

    @pytest.mark.parametrize("discount", [0.0, 1.0, 1.5])
    def test_discount_range(self, discount):
        """lambda lies strictly between 0 and 1."""
        with pytest.raises(ValueError):
            add_exit_lane(toy_call_model(), discount)


class TestHierarchicalChain:
    """The chain of doubling components."""

    def test_structure(self):
        """Mn first, each Mi calls M(i-1) through two boxes."""
        m = hierarchical_chain(3)
        assert m.names == ("M3", "M2", "M1")
        assert m.component("M3").boxes == {"c3_1": "M2", "c3_2": "M2"}
        assert not m.component("M1").boxes
        assert validate(m) == []
        assert is_single_exit(m)
        assert is_deterministic(m)

    def test_quitting_parks_in_a_sink(self):
        """b leads to a node that only loops on itself for nothing."""
        m1 = hierarchical_chain(2).component("M1")
        assert m1.row(node("e1"), "b") == ((node("sink1"), 1.0),)
        assert m1.is_absorbing(node("sink1"))

    @pytest.mark.parametrize("n", [2, 4, 6])
    def test_single_quit_in_first_m1_is_worth_nothing(self, n):
        """One b at the first M1 entry inside Mn ends the branch with total reward 0."""
        m = hierarchical_chain(n)
        quit_done = []

        def policy(c):
            actions = m.component(c.component).enabled_actions(c.vertex)
            if c.vertex == node("e1") and not quit_done:
                quit_done.append(c)
                return "b"
            return "a" if "a" in actions else actions[0]

        trajectory = run_episode(m, policy, initial_config(m, f"M{n}", f"e{n}"), make_rng(0), 500)
        assert trajectory.total_reward == 0.0
        assert trajectory.truncated
        assert trajectory.final.vertex == node("sink1")
        assert len(trajectory.final.stack) == n - 1

    def test_optimal_run_is_worth_two_to_the_n_minus_one(self):
        """Playing a everywhere collects 2^n - 1 and terminates."""
        m = hierarchical_chain(5)

        def policy(c):
            actions = m.component(c.component).enabled_actions(c.vertex)
            return "a" if "a" in actions else actions[0]

        trajectory = run_episode(m, policy, initial_config(m, "M5", "e5"), make_rng(0), 10_000)
        assert trajectory.terminated
        assert trajectory.total_reward == 31.0

    def test_distinct_configurations_double(self):
        """The unrolled run of Mn visits Theta(2^n) distinct configurations."""
        counts = {}
        for n in range(1, 11):
            m = hierarchical_chain(n)

            def policy(c, m=m):
                actions = m.component(c.component).enabled_actions(c.vertex)
                return "a" if "a" in actions else actions[0]

            trajectory = run_episode(m, policy, initial_config(m, f"M{n}", f"e{n}"), make_rng(0), 100_000)
            counts[n] = len(set(trajectory.configurations))
        for n in range(1, 11):
            assert 2 ** n <= counts[n] <= 8 * 2 ** n
        for n in range(5, 10):
            assert 1.9 <= counts[n + 1] / counts[n] <= 2.1

    def test_single_component(self):
        """n = 1 is just M1."""
        assert hierarchical_chain(1).names == ("M1",)

    def test_invalid_size(self):
        """n must be positive."""
        with pytest.raises(ValueError):
            hierarchical_chain(0)


class TestMonitorEffects:
    """What a monitored input does."""

    def setup_method(self):
        self.pda = palindrome_pda()

    def test_push(self):
        """A move in P pushes itself and moves the agent."""
        effect = monitor_effect(self.pda, None, True, "c00", "P", None, "e", "c01")
        assert effect.kind == MOVE
        assert (effect.cell, effect.state, effect.op, effect.symbol) == ("c01", "P", PUSH, "e")

    def test_special_is_epsilon_in_p(self):
        """The midpoint guess keeps the agent in place."""
        effect = monitor_effect(self.pda, None, True, "c00", "P", None, "special", "c00")
        assert effect == (MOVE, "c00", "R", STAY, "")

    def test_matching_pop(self):
        """R pops a move that matches the top."""
        effect = monitor_effect(self.pda, None, False, "c00", "R", "n", "n", "c00")
        assert effect.op == POP

    def test_mismatch_rejects(self):
        """A move that does not match the top rejects."""
        assert monitor_effect(self.pda, None, False, "c00", "R", "n", "s", "c10").kind == REJECT

    def test_declaration(self):
        """Declaring accepts only at the root, in R, at a goal cell."""
        assert monitor_effect(self.pda, {"c11"}, True, "c11", "R", None, "special", "c11").kind == ACCEPT
        assert monitor_effect(self.pda, {"c11"}, True, "c00", "R", None, "special", "c00").kind == REJECT
        assert monitor_effect(self.pda, {"c11"}, False, "c11", "R", "n", "special", "c11").kind == REJECT
        assert monitor_effect(self.pda, None, True, "c00", "R", None, "special", "c00").kind == ACCEPT


class TestCorruptedRow:
    """Corruption of agent actions."""

    def test_corrupted(self):
        """The special input comes first."""
        row = corrupted_row([("a", 0.5), ("b", 0.5)], 0.1)
        assert row[0] == (None, 0.1)
        assert [cell for cell, _ in row[1:]] == ["a", "b"]
        assert sum(p for _, p in row) == pytest.approx(1.0)

    def test_clean(self):
        """No corruption, no special outcome."""
        assert corrupted_row([("a", 1.0)], 0.0) == [("a", 1.0)]


class TestProduct:
    """The product RMDP."""

    @pytest.fixture(scope="class")
    def env(self):
        return palindrome_env()

    def test_components(self, env):
        """One component per stack context."""
        assert env.names == ("root", "stack_n", "stack_e", "stack_s", "stack_w")
        assert env.component("root").exits == ("root_acc", "root_rej")
        assert validate(env) == []

    def test_push_row(self, env):
        """A move in P calls the component of the pushed symbol."""
        root = env.component("root")
        row = root.row(node("root_n_c00_P"), "e")
        assert row[0] == (node("root_o_root_n_c00_R"), 0.01)
        outcome = row[1][0]
        assert row[1][1] == pytest.approx(0.99)
        assert root.row(outcome, "go") == ((call_port("root_push_e", "stack_e_en_c01_P"), 1.0),)
        assert root.reward(outcome, "go") == -1.0

    def test_requires_flat_mdp(self):
        """Boxes or several components are refused."""
        with pytest.raises(FlatModelRequired):
            pda_product(cloud_rmdp(), palindrome_pda())

    def test_corruption_range(self):
        """Corruption must be below 1."""
        with pytest.raises(ValueError):
            pda_product(palindrome_grid(), palindrome_pda(), corruption=1.0)


def product_rewards(env, seed: int):
    """Non-zero rewards of one product episode under uniformly random choices."""
    rng, chooser = make_rng([seed, 0]), make_rng([seed, 1])

    def policy(c):
        actions = env.component(c.component).enabled_actions(c.vertex)
        if len(actions) == 1:
            return actions[0]
        return actions[int(chooser.integers(len(actions)))]

    trajectory = run_episode(env, policy, initial_config(env, "root", "root_start"), rng, 100000)
    assert trajectory.terminated
    return trajectory.rewards(drop_zero=True)


def monitor_rewards(monitor: PdaMonitor, seed: int):
    """Non-zero rewards of the same episode run by the direct interpreter."""
    rng, chooser = make_rng([seed, 0]), make_rng([seed, 1])
    rewards = [monitor.reset(rng)]
    while not monitor.done:
        actions = monitor.actions()
        rewards.append(monitor.step(actions[int(chooser.integers(len(actions)))], rng))
    return [r for r in rewards if r != 0.0]


class TestMonitorEquivalence:
    """The product and the direct interpreter agree draw for draw."""

    @pytest.mark.parametrize("corruption", [0.0, 0.01, 0.3])
    def test_reward_streams(self, corruption):
        """Identical reward streams over random action sequences."""
        rewards = ProductRewards()
        env = pda_product(palindrome_grid(), palindrome_pda(), rewards, corruption, goals=GOALS)
        monitor = PdaMonitor(palindrome_grid(), palindrome_pda(), rewards, corruption, goals=GOALS)
        for seed in range(200):
            assert product_rewards(env, seed) == monitor_rewards(monitor, seed)

    def test_monitor_refuses_steps_after_end(self):
        """A finished monitor episode cannot continue."""
        monitor = PdaMonitor(palindrome_grid(), palindrome_pda(), goals=GOALS)
        rng = make_rng(0)
        monitor.reset(rng)
        while not monitor.done:
            monitor.step("special", rng)
        with pytest.raises(ValueError):
            monitor.step("special", rng)
