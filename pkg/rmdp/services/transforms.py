"""
Model Transforms Service

Handles:
- Step-wise discounting as stopping: one fresh zero-reward exit lane per component
- The hierarchical chain of components whose optimal value is 2^n - 1
- Products of a flat MDP with a pushdown monitor (context-free rewards), and
  the direct interpreter of the same product used to cross-check it
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Set, Tuple

import numpy as np

from rmdp.errors import FlatModelRequired
from rmdp.models.pda import POP, PUSH, Pda
from rmdp.models.rmdp import Component, Rmdp, Vertex, call_port, node, return_port
from rmdp.services.semantics import cumulative, sample_from_cumulative
from rmdp.services.validators import ensure_valid, ensure_valid_pda

logger = logging.getLogger(__name__)

GO_ACTION = "go"


def _fresh(name: str, taken: Set[str]) -> str:
    candidate = name
    suffix = 1
    while candidate in taken:
        suffix += 1
        candidate = f"{name}{suffix}"
    taken.add(candidate)
    return candidate


# ============================================================
# EXIT LANES
# ============================================================


def add_exit_lane(m: Rmdp, discount: float) -> Rmdp:
    """
    Encode step-wise discounting by stopping.

    Every component gets one fresh exit. Each row where the agent acts keeps
    its outcomes scaled by `discount` and sends the remaining 1 - discount to
    the fresh exit. Each box gains the return port of its callee's fresh exit,
    wired with reward 0 straight to the enclosing component's fresh exit.

    Args:
        m: Validated model
        discount: lambda in (0, 1)

    Returns:
        The transformed model
    """
    ensure_valid(m)
    if not (0.0 < discount < 1.0):
        raise ValueError("discount must be in (0, 1)")

    taken = {n for comp in m.components for n in comp.nodes}
    taken |= {b for comp in m.components for b in comp.boxes}
    lanes = {comp.name: _fresh(f"{comp.name}_lane", taken) for comp in m.components}

    components = []
    for comp in m.components:
        lane = node(lanes[comp.name])
        transitions = {}
        for key, row in comp.transitions.items():
            scaled = tuple((dst, discount * p) for dst, p in row)
            transitions[key] = scaled + ((lane, 1.0 - discount),)
        rewards = dict(comp.rewards)
        actions = set(comp.actions)
        for box, target in comp.boxes.items():
            port = return_port(box, lanes[target])
            transitions[(port, GO_ACTION)] = ((lane, 1.0),)
            rewards[(port, GO_ACTION)] = 0.0
            actions.add(GO_ACTION)
        components.append(
            Component(
                name=comp.name,
                entries=comp.entries,
                exits=comp.exits + (lanes[comp.name],),
                nodes=comp.nodes | {lanes[comp.name]},
                actions=frozenset(actions),
                boxes=comp.boxes,
                transitions=transitions,
                rewards=rewards,
            )
        )
    logger.debug(f"Added exit lanes with discount {discount}")
    return Rmdp(tuple(components))


# ============================================================
# HIERARCHICAL CHAIN
# ============================================================


def hierarchical_chain(n: int) -> Rmdp:
    """
    Components M1..Mn, listed from Mn down so Mn is the default start.

    M1: action a earns 1 and exits.
    Mi: action a calls M(i-1) twice in a row and then exits earning 1.
    In every component action b moves to an absorbing sink that only loops
    on itself (action go, reward 0), so a run that takes b keeps what it has
    earned so far and nothing more.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    components = []
    for i in range(n, 0, -1):
        entry, exit_node, sink = f"e{i}", f"x{i}", f"sink{i}"
        name = f"M{i}"
        quit_rows = {
            (node(entry), "b"): ((node(sink), 1.0),),
            (node(sink), GO_ACTION): ((node(sink), 1.0),),
        }
        if i == 1:
            components.append(
                Component(
                    name=name,
                    entries=(entry,),
                    exits=(exit_node,),
                    nodes=frozenset({sink}),
                    actions=frozenset({"a", "b", GO_ACTION}),
                    transitions={
                        (node(entry), "a"): ((node(exit_node), 1.0),),
                        **quit_rows,
                    },
                    rewards={(node(entry), "a"): 1.0},
                )
            )
            continue
        first, second = f"c{i}_1", f"c{i}_2"
        callee_entry, callee_exit = f"e{i - 1}", f"x{i - 1}"
        components.append(
            Component(
                name=name,
                entries=(entry,),
                exits=(exit_node,),
                nodes=frozenset({sink}),
                actions=frozenset({"a", "b", GO_ACTION}),
                boxes={first: f"M{i - 1}", second: f"M{i - 1}"},
                transitions={
                    (node(entry), "a"): ((call_port(first, callee_entry), 1.0),),
                    (return_port(first, callee_exit), GO_ACTION): (
                        (call_port(second, callee_entry), 1.0),
                    ),
                    (return_port(second, callee_exit), GO_ACTION): ((node(exit_node), 1.0),),
                    **quit_rows,
                },
                rewards={(return_port(second, callee_exit), GO_ACTION): 1.0},
            )
        )
    return Rmdp(tuple(components))


# ============================================================
# PUSHDOWN MONITOR SEMANTICS
# ============================================================


@dataclass(frozen=True)
class ProductRewards:
    success: float = 50.0
    reject: float = -5.0
    step: float = -1.0


class Effect(NamedTuple):
    """What one monitored input does: move (with a stack op), accept or reject."""

    kind: str
    cell: str = ""
    state: str = ""
    op: str = ""
    symbol: str = ""


MOVE, ACCEPT, REJECT = "move", "accept", "reject"


def monitor_effect(
    pda: Pda,
    goals: Optional[Set[str]],
    at_root: bool,
    cell: str,
    state: str,
    top: Optional[str],
    symbol: str,
    next_cell: str,
) -> Effect:
    """
    The special input is an epsilon move where the automaton defines one and
    a declaration otherwise; a declaration accepts only with an empty stack,
    an accepting state and (when goals are given) a goal cell. A missing
    transition or the reject target rejects.
    """
    move = pda.move(state, symbol, top)
    if symbol == pda.special and move is None:
        accepted = at_root and state in pda.accepting and (goals is None or cell in goals)
        return Effect(ACCEPT if accepted else REJECT)
    if move is None or move.target == pda.reject:
        return Effect(REJECT)
    landing = cell if symbol == pda.special else next_cell
    return Effect(MOVE, landing, move.target, move.op, move.symbol)


def corrupted_row(outcomes: Sequence[Tuple[str, float]], corruption: float):
    """
    Outcomes of an agent action under corruption: the special input first
    (probability `corruption`, omitted at 0), then the clean outcomes scaled
    by 1 - corruption. None stands for the special input.
    """
    row: List[Tuple[Optional[str], float]] = []
    if corruption > 0.0:
        row.append((None, corruption))
    row.extend((cell, (1.0 - corruption) * p) for cell, p in outcomes)
    return row


def _flat_base(mdp: Rmdp, pda: Pda, corruption: float) -> Component:
    ensure_valid(mdp)
    ensure_valid_pda(pda)
    if len(mdp.components) != 1 or mdp.components[0].boxes:
        raise FlatModelRequired("the product needs a single component without boxes")
    base = mdp.components[0]
    if base.exits:
        raise FlatModelRequired("the product needs an MDP without exits; episodes end by declaration")
    if len(base.entries) != 1:
        raise FlatModelRequired("the product needs an MDP with exactly one entry")
    if pda.special in base.actions:
        raise FlatModelRequired(f"MDP action {pda.special!r} clashes with the special input")
    if not (0.0 <= corruption < 1.0):
        raise ValueError("corruption must be in [0, 1)")
    return base


def _cell_outcomes(base: Component, cell: str, action: str) -> List[Tuple[str, float]]:
    return [(dst.node, p) for dst, p in base.row(node(cell), action)]


class _ComponentDraft:
    def __init__(self, name: str):
        self.name = name
        self.entries: List[str] = []
        self.exits: List[str] = []
        self.nodes: Set[str] = set()
        self.actions: Set[str] = set()
        self.boxes: Dict[str, str] = {}
        self.transitions: Dict[Tuple[Vertex, str], tuple] = {}
        self.rewards: Dict[Tuple[Vertex, str], float] = {}

    def add_row(self, src: Vertex, action: str, row, reward: float = 0.0):
        self.transitions[(src, action)] = tuple(row)
        self.rewards[(src, action)] = reward
        self.actions.add(action)

    def build(self) -> Component:
        return Component(
            name=self.name,
            entries=tuple(self.entries),
            exits=tuple(self.exits),
            nodes=frozenset(self.nodes),
            actions=frozenset(self.actions),
            boxes=self.boxes,
            transitions=self.transitions,
            rewards=self.rewards,
        )


class _ProductBuilder:
    """
    Component "root" holds the empty automaton stack, component
    "stack_<symbol>" runs while <symbol> is on top. Vertices carry
    (cell, control state); a push calls the symbol's component and a pop
    leaves through the exit of the landing (cell, state).
    """

    def __init__(self, base, pda, rewards, corruption, goals):
        self.base = base
        self.pda = pda
        self.rewards = rewards
        self.corruption = corruption
        self.goals = goals
        self.entry = base.entries[0]
        self.cells = sorted(n for n in base.nodes if n != self.entry)
        self.pop_targets = pda.pop_targets()
        self.contexts: List[Optional[str]] = [None] + list(pda.stack_symbols)
        self.drafts = {ctx: _ComponentDraft(self.component(ctx)) for ctx in self.contexts}

    # --- names ---

    @staticmethod
    def component(ctx: Optional[str]) -> str:
        return "root" if ctx is None else f"stack_{ctx}"

    def agent(self, ctx, cell, state) -> str:
        return f"{self.component(ctx)}_n_{cell}_{state}"

    def entry_node(self, ctx, cell, state) -> str:
        return f"{self.component(ctx)}_en_{cell}_{state}"

    def pop_exit(self, ctx, cell, state) -> str:
        return f"{self.component(ctx)}_x_{cell}_{state}"

    def reject_exit(self, ctx) -> str:
        return f"{self.component(ctx)}_rej"

    def box(self, ctx, symbol) -> str:
        return f"{self.component(ctx)}_push_{symbol}"

    # --- outcome nodes ---

    def _outcome(self, ctx, tag: str, target: Vertex, reward: float) -> Vertex:
        draft = self.drafts[ctx]
        name = f"{draft.name}_o_{tag}"
        if name not in draft.nodes:
            draft.nodes.add(name)
            draft.add_row(node(name), GO_ACTION, [(target, 1.0)], reward)
        return node(name)

    def destination(self, ctx, effect: Effect) -> Vertex:
        if effect.kind == REJECT:
            return self._outcome(ctx, "rej", node(self.reject_exit(ctx)), self.rewards.reject)
        if effect.kind == ACCEPT:
            return self._outcome(ctx, "acc", node("root_acc"), self.rewards.success)
        if effect.op == PUSH:
            box = self.box(ctx, effect.symbol)
            entry = self.entry_node(effect.symbol, effect.cell, effect.state)
            return self._outcome(ctx, f"{box}_{entry}", call_port(box, entry), self.rewards.step)
        if effect.op == POP:
            target = self.pop_exit(ctx, effect.cell, effect.state)
            return self._outcome(ctx, target, node(target), self.rewards.step)
        target = self.agent(ctx, effect.cell, effect.state)
        return self._outcome(ctx, target, node(target), self.rewards.step)

    # --- rows ---

    def agent_rows(self, ctx, cell, state) -> Dict[str, list]:
        """Rows of the agent at (cell, state) in context ctx, by action."""
        at_root = ctx is None

        def effect(symbol, next_cell):
            return monitor_effect(
                self.pda, self.goals, at_root, cell, state, ctx, symbol, next_cell
            )

        special_dest = self.destination(ctx, effect(self.pda.special, cell))
        rows = {self.pda.special: [(special_dest, 1.0)]}
        for action in self.base.enabled_actions(node(cell)):
            row = []
            for next_cell, p in corrupted_row(
                _cell_outcomes(self.base, cell, action), self.corruption
            ):
                if next_cell is None:
                    row.append((special_dest, p))
                else:
                    row.append((self.destination(ctx, effect(action, next_cell)), p))
            rows[action] = row
        return rows

    def _copy_rows(self, ctx, src: Vertex, cell, state):
        draft = self.drafts[ctx]
        for action, row in self.agent_rows(ctx, cell, state).items():
            draft.add_row(src, action, row, 0.0)

    def build(self) -> Rmdp:
        for ctx in self.contexts:
            draft = self.drafts[ctx]
            if ctx is None:
                draft.entries.append("root_start")
                draft.exits.extend(["root_acc", "root_rej"])
            else:
                for cell in self.cells:
                    for state in self.pda.states:
                        draft.entries.append(self.entry_node(ctx, cell, state))
                for cell in self.cells:
                    for state in self.pop_targets:
                        draft.exits.append(self.pop_exit(ctx, cell, state))
                draft.exits.append(self.reject_exit(ctx))
            draft.nodes.update(draft.entries)
            draft.nodes.update(draft.exits)
            for symbol in self.pda.stack_symbols:
                draft.boxes[self.box(ctx, symbol)] = self.component(symbol)

        root = self.drafts[None]
        start = node(self.entry)
        for action in self.base.enabled_actions(start):
            row = [
                (node(self.agent(None, dst.node, self.pda.initial)), p)
                for dst, p in self.base.row(start, action)
            ]
            root.add_row(node("root_start"), action, row, self.base.reward(start, action))

        for ctx in self.contexts:
            draft = self.drafts[ctx]
            for cell in self.cells:
                for state in self.pda.states:
                    name = self.agent(ctx, cell, state)
                    draft.nodes.add(name)
                    self._copy_rows(ctx, node(name), cell, state)
                    if ctx is not None:
                        self._copy_rows(ctx, node(self.entry_node(ctx, cell, state)), cell, state)
            for symbol in self.pda.stack_symbols:
                box = self.box(ctx, symbol)
                for cell in self.cells:
                    for state in self.pop_targets:
                        port = return_port(box, self.pop_exit(symbol, cell, state))
                        self._copy_rows(ctx, port, cell, state)
                draft.add_row(
                    return_port(box, self.reject_exit(symbol)),
                    GO_ACTION,
                    [(node(self.reject_exit(ctx)), 1.0)],
                    0.0,
                )
        return Rmdp(tuple(self.drafts[ctx].build() for ctx in self.contexts))


def pda_product(
    mdp: Rmdp,
    pda: Pda,
    rewards: ProductRewards = ProductRewards(),
    corruption: float = 0.01,
    goals: Optional[Iterable[str]] = None,
) -> Rmdp:
    """
    Compose a flat MDP with a pushdown monitor.

    The MDP's single entry is a dispatch whose rows are copied into the root
    component. Agent rows carry reward 0 and lead to outcome nodes whose one
    action "go" carries the step, reject or success reward.

    Args:
        mdp: One component, no boxes, no exits, one entry
        pda: The monitor
        rewards: success / reject / step rewards
        corruption: probability that an agent action is read as the special input
        goals: cells where a declaration may accept (any cell when None)

    Returns:
        The product RMDP (start: component "root", entry "root_start")

    Raises:
        FlatModelRequired: the MDP has boxes, exits or several components
    """
    base = _flat_base(mdp, pda, corruption)
    goal_set = set(goals) if goals is not None else None
    product = _ProductBuilder(base, pda, rewards, corruption, goal_set).build()
    ensure_valid(product)
    logger.info(
        f"Product built: {len(product.components)} components, "
        f"{sum(len(product.vertices(c.name)) for c in product.components)} vertices"
    )
    return product


class PdaMonitor:
    """
    Direct interpreter of flat MDP x pushdown monitor with the same rewards,
    corruption and random draws as pda_product.
    """

    def __init__(
        self,
        mdp: Rmdp,
        pda: Pda,
        rewards: ProductRewards = ProductRewards(),
        corruption: float = 0.01,
        goals: Optional[Iterable[str]] = None,
    ):
        self.base = _flat_base(mdp, pda, corruption)
        self.pda = pda
        self.rewards = rewards
        self.corruption = corruption
        self.goals = set(goals) if goals is not None else None
        self.cell = ""
        self.state = pda.initial
        self.stack: Tuple[str, ...] = ()
        self.done = False
        self.accepted: Optional[bool] = None

    def reset(self, rng: np.random.Generator, action: Optional[str] = None) -> float:
        """Dispatch from the MDP entry; returns the dispatch reward."""
        start = node(self.base.entries[0])
        action = action or self.base.enabled_actions(start)[0]
        row = self.base.row(start, action)
        index = sample_from_cumulative(self.base.cumulative_rows[(start, action)], rng)
        self.cell = row[index][0].node
        self.state = self.pda.initial
        self.stack = ()
        self.done = False
        self.accepted = None
        return self.base.reward(start, action)

    def actions(self) -> Tuple[str, ...]:
        return tuple(sorted(self.base.enabled_actions(node(self.cell)) + (self.pda.special,)))

    def step(self, action: str, rng: np.random.Generator) -> float:
        """Apply one agent action; returns the reward."""
        if self.done:
            raise ValueError("monitor episode already ended")
        if action == self.pda.special:
            symbol, next_cell = self.pda.special, self.cell
        else:
            row = corrupted_row(_cell_outcomes(self.base, self.cell, action), self.corruption)
            index = sample_from_cumulative(cumulative([p for _, p in row]), rng)
            next_cell = row[index][0]
            symbol = action
            if next_cell is None:
                symbol, next_cell = self.pda.special, self.cell
        top = self.stack[-1] if self.stack else None
        effect = monitor_effect(
            self.pda, self.goals, not self.stack, self.cell, self.state, top, symbol, next_cell
        )
        if effect.kind == ACCEPT:
            self.done, self.accepted = True, True
            return self.rewards.success
        if effect.kind == REJECT:
            self.done, self.accepted = True, False
            return self.rewards.reject
        if effect.op == PUSH:
            self.stack = self.stack + (effect.symbol,)
        elif effect.op == POP:
            self.stack = self.stack[:-1]
        self.cell, self.state = effect.cell, effect.state
        return self.rewards.step
