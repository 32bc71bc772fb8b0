"""
Configurations of the infinite-state MDP and the records produced by stepping it.
"""

from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

from rmdp.models.rmdp import Vertex

# Recorded as the action of call-port and exit auto-moves.
NOOP_ACTION = "-"


class Configuration(NamedTuple):
    """(stack context, vertex); `component` owns the vertex."""

    stack: Tuple[str, ...]
    vertex: Vertex
    component: str
    terminated: bool = False


def stack_height(config: Configuration) -> int:
    """0 after termination, otherwise 1 + number of boxes on the stack."""
    if config.terminated:
        return 0
    return 1 + len(config.stack)


@dataclass(frozen=True)
class EnteredBox:
    box: str
    tag = "entered"


@dataclass(frozen=True)
class ExitedBox:
    box: str
    exit_index: int
    tag = "exited"


@dataclass(frozen=True)
class Internal:
    tag = "internal"


@dataclass(frozen=True)
class Terminated:
    tag = "terminated"


class StepOutcome(NamedTuple):
    next: Configuration
    reward: float
    event: object


class Step(NamedTuple):
    config: Configuration
    action: str
    reward: float
    outcome: StepOutcome


@dataclass
class Trajectory:
    """A rollout; total_reward is the sum of step rewards."""

    start: Configuration
    steps: List[Step] = field(default_factory=list)
    truncated: bool = False

    @property
    def total_reward(self) -> float:
        return sum(step.reward for step in self.steps)

    @property
    def final(self) -> Configuration:
        if self.steps:
            return self.steps[-1].outcome.next
        return self.start

    @property
    def configurations(self) -> List[Configuration]:
        """Start configuration followed by every configuration reached."""
        return [self.start] + [step.outcome.next for step in self.steps]

    @property
    def terminated(self) -> bool:
        return self.final.terminated

    def rewards(self, drop_zero: bool = False) -> List[float]:
        values = [step.reward for step in self.steps]
        if drop_zero:
            return [r for r in values if r != 0.0]
        return values


def event_tag(event: object) -> str:
    return getattr(event, "tag", "internal")


def describe_event(event: object) -> Optional[str]:
    if isinstance(event, EnteredBox):
        return f"entered({event.box})"
    if isinstance(event, ExitedBox):
        return f"exited({event.box},{event.exit_index})"
    return event_tag(event)
