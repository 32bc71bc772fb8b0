"""
Pushdown automaton used as a reward-machine monitor.

Transitions are keyed by (state, input, top of stack); top is None for the empty
stack. Each key has at most one move: the only nondeterminism is resolved by
the agent through the special input, which acts as an epsilon move when a
transition for it exists and as "declare end of sequence" otherwise.
"""

from dataclasses import dataclass, field
from typing import FrozenSet, Mapping, NamedTuple, Optional, Tuple

PUSH = "push"
POP = "pop"
STAY = "stay"


class PdaMove(NamedTuple):
    target: str
    op: str = STAY
    symbol: str = ""

    def apply(self, stack: Tuple[str, ...]) -> Tuple[str, ...]:
        if self.op == PUSH:
            return stack + (self.symbol,)
        if self.op == POP:
            return stack[:-1]
        return stack


PdaKey = Tuple[str, str, Optional[str]]


@dataclass(frozen=True)
class Pda:
    states: Tuple[str, ...]
    inputs: Tuple[str, ...]
    stack_symbols: Tuple[str, ...]
    initial: str
    accepting: FrozenSet[str] = frozenset()
    transitions: Mapping[PdaKey, PdaMove] = field(default_factory=dict)
    special: str = "special"
    reject: str = "rej"

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "stack_symbols", tuple(self.stack_symbols))
        object.__setattr__(self, "accepting", frozenset(self.accepting))
        object.__setattr__(
            self,
            "transitions",
            {key: PdaMove(*move) for key, move in self.transitions.items()},
        )

    def move(self, state: str, symbol: str, top: Optional[str]) -> Optional[PdaMove]:
        return self.transitions.get((state, symbol, top))

    def pop_targets(self) -> Tuple[str, ...]:
        """Control states a pop can land in, in state order."""
        targets = {move.target for move in self.transitions.values() if move.op == POP}
        return tuple(s for s in self.states if s in targets)
