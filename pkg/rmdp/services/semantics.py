"""
Execution Semantics Service

Handles:
- Initial configurations and stack height
- One step of the infinite-state MDP (call, exit/return, internal move)
- Episode rollouts under a policy, with a step cap
- Trajectory dumps (one tab-separated line per step)

Call ports and exit nodes move on their own: they ignore the action and are
recorded with the no-op action.
"""

import logging
from bisect import bisect_right
from itertools import accumulate
from typing import Callable, Mapping, Sequence, Tuple

import numpy as np

from rmdp.errors import IllegalAction, SteppedAfterTermination, UnknownEntry
from rmdp.models.configuration import (
    NOOP_ACTION,
    Configuration,
    EnteredBox,
    ExitedBox,
    Internal,
    Step,
    StepOutcome,
    Terminated,
    Trajectory,
    describe_event,
    stack_height,
)
from rmdp.models.rmdp import CALL, Rmdp, Vertex, node, return_port
from rmdp.services.text_format import format_float

logger = logging.getLogger(__name__)

Policy = Callable[[Configuration], str]


# ============================================================
# SAMPLING
# ============================================================


def cumulative(probabilities: Sequence[float]) -> Tuple[float, ...]:
    return tuple(accumulate(probabilities))


def sample_from_cumulative(cum: Sequence[float], rng: np.random.Generator) -> int:
    """
    Inverse-CDF draw over the stored outcome order.

    A single-outcome row consumes no random number.
    """
    if len(cum) == 1:
        return 0
    u = rng.random()
    return min(bisect_right(cum, u), len(cum) - 1)


def sample_index(probabilities: Sequence[float], rng: np.random.Generator) -> int:
    return sample_from_cumulative(cumulative(probabilities), rng)


# ============================================================
# CONFIGURATIONS
# ============================================================


def initial_config(m: Rmdp, component: str, entry: str) -> Configuration:
    """(empty stack, entry) of a component."""
    comp = m.component(component)
    if entry not in comp.entries:
        raise UnknownEntry(f"{entry!r} is not an entry node of component {component}")
    return Configuration((), node(entry), component)


def needs_decision(m: Rmdp, c: Configuration) -> bool:
    """True when the agent chooses the next action (not a call port or exit)."""
    if c.terminated or c.vertex.kind == CALL:
        return False
    return not m.component(c.component).is_exit(c.vertex)


def enabled_actions(m: Rmdp, c: Configuration) -> Tuple[str, ...]:
    return m.component(c.component).enabled_actions(c.vertex)


def step(m: Rmdp, c: Configuration, a: str, rng: np.random.Generator) -> StepOutcome:
    """
    One transition of the infinite-state MDP.

    Args:
        m: The model
        c: Current configuration (not terminated)
        a: Action; ignored at call ports and exit nodes
        rng: Random source for internal moves

    Returns:
        StepOutcome with next configuration, reward and event
    """
    if c.terminated:
        raise SteppedAfterTermination("configuration is already terminated")
    comp = m.component(c.component)
    v = c.vertex

    if v.kind == CALL:
        callee = m.callee(v.box)
        nxt = Configuration(c.stack + (v.box,), node(v.node), callee.name)
        return StepOutcome(nxt, 0.0, EnteredBox(v.box))

    if comp.is_exit(v):
        if not c.stack:
            return StepOutcome(Configuration((), v, comp.name, True), 0.0, Terminated())
        box = c.stack[-1]
        caller = m.owner_of_box(box)
        nxt = Configuration(c.stack[:-1], return_port(box, v.node), caller)
        return StepOutcome(nxt, 0.0, ExitedBox(box, comp.exit_index(v.node)))

    key = (v, a)
    row = comp.transitions.get(key)
    if row is None:
        raise IllegalAction(
            f"action {a!r} not enabled at {v} in {comp.name}; enabled: {comp.enabled_actions(v)}"
        )
    index = sample_from_cumulative(comp.cumulative_rows[key], rng)
    nxt = Configuration(c.stack, row[index][0], c.component)
    return StepOutcome(nxt, comp.rewards[key], Internal())


# ============================================================
# EPISODES
# ============================================================


def run_episode(
    m: Rmdp,
    policy: Policy,
    start: Configuration,
    rng: np.random.Generator,
    step_cap: int,
) -> Trajectory:
    """
    Roll out until termination or `step_cap` steps.

    Every step counts toward the cap, including call and exit auto-moves.
    """
    if step_cap < 1:
        raise ValueError("step_cap must be at least 1")
    trajectory = Trajectory(start=start)
    c = start
    while not c.terminated and len(trajectory.steps) < step_cap:
        action = policy(c) if needs_decision(m, c) else NOOP_ACTION
        outcome = step(m, c, action, rng)
        trajectory.steps.append(Step(c, action, outcome.reward, outcome))
        c = outcome.next
    trajectory.truncated = not c.terminated
    return trajectory


def stackless_policy(m: Rmdp, sigma: Mapping[Vertex, str]) -> Policy:
    """Policy reading the action from a vertex map; smallest enabled action otherwise."""

    def policy(c: Configuration) -> str:
        action = sigma.get(c.vertex)
        if action is not None:
            return action
        actions = enabled_actions(m, c)
        if not actions:
            raise IllegalAction(f"no action enabled at {c.vertex} in {c.component}")
        return actions[0]

    return policy


def dump_trajectory(trajectory: Trajectory) -> str:
    """Tab-separated: step index, stack height, vertex, action, reward, event."""
    lines = []
    for index, s in enumerate(trajectory.steps):
        lines.append(
            "\t".join(
                [
                    str(index),
                    str(stack_height(s.config)),
                    str(s.config.vertex),
                    s.action,
                    format_float(s.reward),
                    describe_event(s.outcome.event),
                ]
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")
