"""
Long-running end-to-end checks of the learners against the exact oracles.

Tests:
- Cloud model: recursive Q-learning reaches the optimal value and policy
- Cloud model: 10^5 rollouts of the optimal stackless strategy average its value
- Random 1-exit models: 1-exit Q-learning with a decaying rate reaches the solved value
- PAC learning on the self-call model
- Spelunking: the 1-exit learner crosses the traps and beats flat Q-learning
- Palindrome: recursive Q-learning beats always-declare and flat Q-learning
- Product vs direct monitor over 10^4 random episodes

Run with `pytest -m slow`.
"""

import numpy as np
import pytest

from rmdp.config import make_rng
from rmdp.models.configuration import Configuration
from rmdp.models.rmdp import node
from rmdp.services.envs import (
    OVER_TRAPS,
    always_declare_policy,
    cloud_rmdp,
    palindrome_env,
    palindrome_grid,
    palindrome_pda,
    spelunking_rmdp,
    strategy_class,
)
from rmdp.services.oracle import model_sampler, pac_learn_1exit, solve_1exit
from rmdp.services.recursive_q import (
    Hyperparameters,
    evaluate_policy,
    flat_q_train,
    greedy_policy,
    greedy_value,
    rql1_train,
    rql_train,
)
from rmdp.services.semantics import initial_config, stackless_policy
from rmdp.services.transforms import PdaMonitor
from tests.factories import random_one_exit_model, self_call_model
from tests.test_transforms import GOALS, monitor_rewards, product_rewards

pytestmark = pytest.mark.slow

CLOUD_VALUE = -5.3425
SEEDS = range(10)


def mean_return(m, q, start, seed, episodes=100, step_cap=1000) -> float:
    """Greedy return averaged over all episodes, truncated ones included."""
    result = evaluate_policy(m, greedy_policy(q, m), start, episodes, make_rng([seed, 99]), step_cap)
    return float(np.mean(result.returns))


class TestCloudLearning:
    """Recursive Q-learning on the cloud model."""

    def test_value_and_policy(self):
        """Within 0.05 of the optimum; decompose, reliable, never-upgrade on 9 of 10 seeds."""
        m = cloud_rmdp()
        finals, correct = [], 0
        for seed in SEEDS:
            h = Hyperparameters(
                learning_rate=0.02,
                epsilon=0.1,
                quantization=0.001,
                total_steps=200000,
                eval_episodes=100,
                eval_points=4,
                start=("T", "u1"),
                seed=seed,
            )
            q, curve = rql_train(m, h)
            finals.append(curve.final_mean)
            policy = greedy_policy(q, m)
            chosen = (
                policy(Configuration((), node("u1"), "T")),
                policy(Configuration(("b1",), node("u3"), "S")),
                policy(Configuration(("b1", "b4"), node("u5"), "H")),
            )
            correct += chosen == ("d", "r", "n")
        assert abs(np.mean(finals) - CLOUD_VALUE) <= 0.05
        assert correct >= 9


class TestCloudRollouts:
    """Plain rollouts of the optimal stackless strategy."""

    def test_hundred_thousand_episodes(self):
        """Decompose, reliable server, never upgrade averages -5.3425 within 0.05."""
        m = cloud_rmdp()
        policy = stackless_policy(m, {node("u1"): "d", node("u3"): "r", node("u5"): "n"})
        result = evaluate_policy(m, policy, initial_config(m, "T", "u1"), 100_000, make_rng(2024), 10_000)
        assert result.truncated == 0
        assert abs(result.mean - CLOUD_VALUE) <= 0.05


class TestOneExitConvergence:
    """1-exit Q-learning against policy iteration."""

    def test_random_models(self):
        """Within 0.05 of the solved value on at least 18 of 20 models."""
        close = 0
        for seed in range(20):
            m = random_one_exit_model(seed)
            start = initial_config(m, m.components[0].name, m.components[0].entries[0])
            solved = solve_1exit(m).entry_value(start.vertex.node)
            h = Hyperparameters(
                learning_rate_power=0.7,
                epsilon=0.3,
                total_steps=100000,
                eval_episodes=0,
                exploring_starts=True,
                seed=seed,
            )
            q, _ = rql1_train(m, h)
            close += abs(greedy_value(q, m, start) - solved) <= 0.05
        assert close >= 18


class TestPac:
    """PAC learning of the self-call model."""

    def test_failure_rate(self):
        """At most 10 of 100 runs miss -5/3 by more than eps."""
        m = self_call_model(p=0.4)
        misses = 0
        for seed in range(100):
            result = pac_learn_1exit(model_sampler(m), m, eps=0.2, delta=0.05, K=2.5, seed=seed)
            misses += abs(result.values[node("en")] + 5.0 / 3.0) > 0.2
        assert misses <= 10


class TestSpelunking:
    """Crossing the traps is learned by the 1-exit learner only."""

    def test_over_traps_and_beats_flat(self):
        """On every seed the greedy policy crosses the traps and earns more than flat Q-learning."""
        m = spelunking_rmdp()
        start = initial_config(m, "L1_I", "L1_I_in")
        for seed in SEEDS:
            h = Hyperparameters(
                learning_rate=0.2,
                epsilon=0.1,
                total_steps=200000,
                eval_episodes=0,
                start=("L1_I", "L1_I_in"),
                seed=seed,
            )
            q_rec, _ = rql1_train(m, h)
            q_flat, _ = flat_q_train(m, h)
            assert strategy_class(m, greedy_policy(q_rec, m)) == OVER_TRAPS
            assert mean_return(m, q_rec, start, seed) > mean_return(m, q_flat, start, seed)


class TestPalindrome:
    """Context-free rewards need the stack-aware learner."""

    def test_beats_baselines(self):
        """Mean greedy return above always-declare and flat Q-learning."""
        m = palindrome_env()
        start = initial_config(m, "root", "root_start")
        baseline = evaluate_policy(m, always_declare_policy(m), start, 2000, make_rng(7), 200)
        recursive, flat = [], []
        for seed in SEEDS:
            h = Hyperparameters(
                learning_rate=0.1,
                epsilon=1.0,
                epsilon_final=0.1,
                epsilon_decay_steps=30000,
                total_steps=100000,
                step_cap=200,
                eval_episodes=0,
                start=("root", "root_start"),
                seed=seed,
            )
            q_rec, _ = rql_train(m, h)
            q_flat, _ = flat_q_train(m, h)
            recursive.append(mean_return(m, q_rec, start, seed, step_cap=200))
            flat.append(mean_return(m, q_flat, start, seed, step_cap=200))
        assert np.mean(recursive) > float(np.mean(baseline.returns))
        assert np.mean(recursive) > np.mean(flat)


class TestMonitorEquivalence:
    """Product RMDP and direct interpreter."""

    def test_ten_thousand_episodes(self):
        """Identical reward streams for 10^4 random episodes."""
        env = palindrome_env()
        monitor = PdaMonitor(palindrome_grid(), palindrome_pda(), corruption=0.01, goals=GOALS)
        for seed in range(10000):
            assert product_rewards(env, seed) == monitor_rewards(monitor, seed)
