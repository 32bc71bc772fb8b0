"""
Unit tests for configurations, stepping and rollouts.

Tests:
- Initial configurations and stack height
- Call, exit/return, internal and terminating steps
- Sampling frequencies (chi-square)
- Episode rollouts, step caps, stackless policies
- Monte-Carlo means against exact stackless values
- Trajectory dumps
"""

import numpy as np
import pytest

from rmdp.config import make_rng
from rmdp.errors import IllegalAction, SteppedAfterTermination, UnknownEntry
from rmdp.models.configuration import (
    NOOP_ACTION,
    Configuration,
    EnteredBox,
    ExitedBox,
    Internal,
    Terminated,
    stack_height,
)
from rmdp.models.rmdp import call_port, node, return_port
from rmdp.services.envs import cloud_rmdp
from rmdp.services.oracle import eval_stackless
from rmdp.services.semantics import (
    dump_trajectory,
    initial_config,
    needs_decision,
    run_episode,
    sample_from_cumulative,
    stackless_policy,
    step,
)
from tests.factories import random_one_exit_model, self_call_model, toy_call_model

# upper 0.1% points of the chi-square distribution
CHI_SQUARE_1DOF = 10.828
CHI_SQUARE_3DOF = 16.266


def chi_square(counts, probabilities) -> float:
    counts = np.asarray(counts, dtype=float)
    expected = counts.sum() * np.asarray(probabilities, dtype=float)
    return float(np.sum((counts - expected) ** 2 / expected))


class TestSampling:
    """Inverse-CDF draws."""

    def test_single_outcome_draws_nothing(self):
        """A point-mass row leaves the generator untouched."""
        a, b = make_rng(7), make_rng(7)
        assert sample_from_cumulative((1.0,), a) == 0
        assert a.random() == b.random()

    def test_index_follows_cumulative(self):
        """Draws land in the interval of their outcome."""
        rng = make_rng(0)
        counts = [0, 0]
        for _ in range(4000):
            counts[sample_from_cumulative((0.25, 1.0), rng)] += 1
        assert 800 < counts[0] < 1200

    def test_frequencies_pass_chi_square(self):
        """20000 draws over four outcomes fit their probabilities."""
        rng = make_rng(5)
        probabilities = [0.1, 0.2, 0.3, 0.4]
        counts = np.zeros(4)
        for _ in range(20000):
            counts[sample_from_cumulative((0.1, 0.3, 0.6, 1.0), rng)] += 1
        assert chi_square(counts, probabilities) < CHI_SQUARE_3DOF

    def test_step_outcomes_pass_chi_square(self):
        """Successors drawn by step follow the row of S at u3 under r."""
        m = cloud_rmdp()
        c = initial_config(m, "S", "u3")
        rng = make_rng(8)
        outcomes = [call_port("b4", "u5"), node("u4")]
        counts = np.zeros(2)
        for _ in range(10000):
            counts[outcomes.index(step(m, c, "r", rng).next.vertex)] += 1
        assert chi_square(counts, [0.3, 0.7]) < CHI_SQUARE_1DOF


class TestConfigurations:
    """Initial configurations."""

    def test_initial_config(self):
        """Empty stack at the entry node."""
        c = initial_config(cloud_rmdp(), "T", "u1")
        assert c == Configuration((), node("u1"), "T")
        assert stack_height(c) == 1

    def test_unknown_entry(self):
        """Only entry nodes can start an episode."""
        with pytest.raises(UnknownEntry):
            initial_config(cloud_rmdp(), "T", "u2")

    def test_terminated_height_is_zero(self):
        """A terminated configuration has height 0."""
        assert stack_height(Configuration((), node("u2"), "T", True)) == 0


class TestStep:
    """One transition at a time."""

    def setup_method(self):
        self.m = toy_call_model()
        self.rng = make_rng(0)

    def test_internal_move_to_call_port(self):
        """The agent's move lands on the call port with the row reward."""
        c = initial_config(self.m, "Main", "m_en")
        outcome = step(self.m, c, "a", self.rng)
        assert outcome.next.vertex == call_port("box", "s_en")
        assert outcome.reward == 2.0
        assert isinstance(outcome.event, Internal)

    def test_call_pushes_box(self):
        """Entering a box pushes it and moves to the callee entry."""
        c = Configuration((), call_port("box", "s_en"), "Main")
        assert not needs_decision(self.m, c)
        outcome = step(self.m, c, NOOP_ACTION, self.rng)
        assert outcome.next == Configuration(("box",), node("s_en"), "Sub")
        assert outcome.event == EnteredBox("box")
        assert stack_height(outcome.next) == 2

    def test_exit_returns_to_caller(self):
        """An exit pops the box and lands on its return port."""
        c = Configuration(("box",), node("s_ex"), "Sub")
        outcome = step(self.m, c, NOOP_ACTION, self.rng)
        assert outcome.next == Configuration((), return_port("box", "s_ex"), "Main")
        assert outcome.event == ExitedBox("box", 0)
        assert outcome.reward == 0.0

    def test_exit_with_empty_stack_terminates(self):
        """Leaving the bottom component ends the episode."""
        c = Configuration((), node("m_ex"), "Main")
        outcome = step(self.m, c, NOOP_ACTION, self.rng)
        assert outcome.next.terminated
        assert isinstance(outcome.event, Terminated)

    def test_step_after_termination(self):
        """Terminated configurations cannot be stepped."""
        c = Configuration((), node("m_ex"), "Main", True)
        with pytest.raises(SteppedAfterTermination):
            step(self.m, c, NOOP_ACTION, self.rng)

    def test_illegal_action(self):
        """Actions without a row are rejected."""
        c = initial_config(self.m, "Main", "m_en")
        with pytest.raises(IllegalAction):
            step(self.m, c, "go", self.rng)


class TestEpisodes:
    """Rollouts under a policy."""

    def test_monolithic_policy(self):
        """Running T monolithically costs 8 in two steps."""
        m = cloud_rmdp()
        policy = stackless_policy(m, {node("u1"): "m"})
        trajectory = run_episode(m, policy, initial_config(m, "T", "u1"), make_rng(0), 100)
        assert trajectory.total_reward == -8.0
        assert len(trajectory.steps) == 2
        assert trajectory.terminated

    def test_toy_episode(self):
        """Main pays 2, Sub pays 3, auto-moves pay nothing."""
        m = toy_call_model()
        trajectory = run_episode(
            m, stackless_policy(m, {}), initial_config(m, "Main", "m_en"), make_rng(0), 100
        )
        assert trajectory.total_reward == 5.0
        assert trajectory.rewards(drop_zero=True) == [2.0, 3.0]
        assert [stack_height(c) for c in trajectory.configurations] == [1, 1, 2, 2, 1, 1, 0]

    def test_step_cap_truncates(self):
        """Episodes stop at the cap and are marked truncated."""
        m = self_call_model(p=0.99)
        trajectory = run_episode(
            m, stackless_policy(m, {}), initial_config(m, "A", "en"), make_rng(3), 5
        )
        assert len(trajectory.steps) == 5
        assert trajectory.truncated
        assert not trajectory.terminated

    def test_invalid_cap(self):
        """The cap must be positive."""
        m = toy_call_model()
        with pytest.raises(ValueError):
            run_episode(m, stackless_policy(m, {}), initial_config(m, "Main", "m_en"), make_rng(0), 0)

    def test_stackless_policy_falls_back_to_smallest_action(self):
        """Unmapped vertices take the smallest enabled action."""
        m = cloud_rmdp()
        policy = stackless_policy(m, {})
        assert policy(initial_config(m, "T", "u1")) == "d"

    def test_same_seed_same_trajectory(self):
        """Rollouts are reproducible from the seed."""
        m = cloud_rmdp()
        policy = stackless_policy(m, {node("u3"): "f"})
        start = initial_config(m, "T", "u1")
        first = run_episode(m, policy, start, make_rng(11), 500)
        second = run_episode(m, policy, start, make_rng(11), 500)
        assert first.rewards() == second.rewards()


class TestDumpTrajectory:
    """Tab-separated trajectory text."""

    def test_dump_lines(self):
        """One line per step: index, height, vertex, action, reward, event."""
        m = toy_call_model()
        trajectory = run_episode(
            m, stackless_policy(m, {}), initial_config(m, "Main", "m_en"), make_rng(0), 100
        )
        lines = dump_trajectory(trajectory).splitlines()
        assert lines[0] == "0\t1\tm_en\ta\t2.0\tinternal"
        assert lines[1] == "1\t1\tbox.s_en\t-\t0.0\tentered(box)"
        assert lines[3] == "3\t2\ts_ex\t-\t0.0\texited(box,0)"
        assert lines[-1].endswith("terminated")
        assert len(lines) == 6


class TestMonteCarlo:
    """Sample means of rollouts against exact stackless values."""

    @pytest.mark.parametrize("seed", range(3))
    def test_means_within_three_standard_errors(self, seed):
        """4000 rollouts of a random stackless strategy land near eval_stackless."""
        m = random_one_exit_model(seed)
        rng = make_rng([seed, 1])
        sigma = {}
        for comp in m.components:
            for v in m.vertices(comp.name):
                actions = comp.enabled_actions(v)
                if actions:
                    sigma[v] = actions[int(rng.integers(len(actions)))]
        first = m.components[0]
        expected = eval_stackless(m, sigma)[node(first.entries[0])]
        policy = stackless_policy(m, sigma)
        start = initial_config(m, first.name, first.entries[0])
        returns = []
        for _ in range(4000):
            trajectory = run_episode(m, policy, start, rng, 10_000)
            assert trajectory.terminated
            returns.append(trajectory.total_reward)
        standard_error = np.std(returns, ddof=1) / np.sqrt(len(returns))
        assert abs(np.mean(returns) - expected) <= 3 * standard_error
