"""
Recursive MDP data model.

A model is an ordered tuple of components. Each component owns its nodes, its
boxes (placeholders that invoke another component) and the transition rows of
its vertices. Vertices are nodes, call ports (box, callee entry) and return
ports (box, callee exit). Models are immutable after construction.
"""

from dataclasses import dataclass, field
from functools import cached_property
from itertools import accumulate
from typing import Dict, FrozenSet, List, Mapping, NamedTuple, Tuple

from rmdp.errors import UnknownBox, UnknownComponent

NODE = "node"
CALL = "call"
RETURN = "return"


class Vertex(NamedTuple):
    """A node, call port or return port; `box` is empty for plain nodes."""

    kind: str
    node: str
    box: str = ""

    def __str__(self) -> str:
        if self.kind == NODE:
            return self.node
        return f"{self.box}.{self.node}"

    @property
    def is_node(self) -> bool:
        return self.kind == NODE

    @property
    def is_call(self) -> bool:
        return self.kind == CALL

    @property
    def is_return(self) -> bool:
        return self.kind == RETURN


def node(name: str) -> Vertex:
    return Vertex(NODE, name)


def call_port(box: str, entry: str) -> Vertex:
    return Vertex(CALL, entry, box)


def return_port(box: str, exit_node: str) -> Vertex:
    return Vertex(RETURN, exit_node, box)


def vertex_sort_key(v: Vertex) -> Tuple[str, str]:
    """Canonical (lexicographic) vertex order."""
    return (str(v), v.kind)


Outcome = Tuple[Vertex, float]
Row = Tuple[Outcome, ...]
RowKey = Tuple[Vertex, str]


@dataclass(frozen=True)
class Component:
    """
    One constituent MDP.

    `nodes` always contains the entries and exits. Transition rows keep their
    outcomes in the given order (duplicates allowed, never renormalized).
    Every row has a reward entry; missing rewards default to 0.
    """

    name: str
    entries: Tuple[str, ...] = ()
    exits: Tuple[str, ...] = ()
    nodes: FrozenSet[str] = frozenset()
    actions: FrozenSet[str] = frozenset()
    boxes: Mapping[str, str] = field(default_factory=dict)
    transitions: Mapping[RowKey, Row] = field(default_factory=dict)
    rewards: Mapping[RowKey, float] = field(default_factory=dict)

    def __post_init__(self):
        entries = tuple(self.entries)
        exits = tuple(self.exits)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "exits", exits)
        object.__setattr__(
            self, "nodes", frozenset(self.nodes) | frozenset(entries) | frozenset(exits)
        )
        object.__setattr__(self, "actions", frozenset(self.actions))
        object.__setattr__(self, "boxes", dict(self.boxes))
        transitions = {
            key: tuple((dst, float(p)) for dst, p in row)
            for key, row in self.transitions.items()
        }
        object.__setattr__(self, "transitions", transitions)
        rewards = {key: float(r) for key, r in self.rewards.items()}
        for key in transitions:
            rewards.setdefault(key, 0.0)
        object.__setattr__(self, "rewards", rewards)

    @cached_property
    def _actions_at(self) -> Dict[Vertex, Tuple[str, ...]]:
        grouped: Dict[Vertex, List[str]] = {}
        for src, action in self.transitions:
            grouped.setdefault(src, []).append(action)
        return {src: tuple(sorted(actions)) for src, actions in grouped.items()}

    @cached_property
    def cumulative_rows(self) -> Dict[RowKey, Tuple[float, ...]]:
        """Running sums of each row's probabilities, in stored order."""
        return {
            key: tuple(accumulate(p for _, p in row))
            for key, row in self.transitions.items()
        }

    def enabled_actions(self, vertex: Vertex) -> Tuple[str, ...]:
        """A(q): actions with a transition row at `vertex`, sorted."""
        return self._actions_at.get(vertex, ())

    def row(self, vertex: Vertex, action: str) -> Row:
        return self.transitions[(vertex, action)]

    def reward(self, vertex: Vertex, action: str) -> float:
        return self.rewards.get((vertex, action), 0.0)

    def is_exit(self, vertex: Vertex) -> bool:
        return vertex.kind == NODE and vertex.node in self.exits

    def is_absorbing(self, vertex: Vertex) -> bool:
        """Every enabled action stays at `vertex` with certainty and earns nothing."""
        actions = self.enabled_actions(vertex)
        return bool(actions) and all(
            self.row(vertex, a) == ((vertex, 1.0),) and self.reward(vertex, a) == 0.0
            for a in actions
        )

    def exit_index(self, exit_node: str) -> int:
        return self.exits.index(exit_node)


@dataclass(frozen=True)
class Rmdp:
    """An RMDP: components in a fixed order (component id = position + 1)."""

    components: Tuple[Component, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))

    @cached_property
    def _by_name(self) -> Dict[str, Component]:
        by_name: Dict[str, Component] = {}
        for comp in self.components:
            by_name.setdefault(comp.name, comp)
        return by_name

    @cached_property
    def _box_owner(self) -> Dict[str, str]:
        owners: Dict[str, str] = {}
        for comp in self.components:
            for box in comp.boxes:
                owners.setdefault(box, comp.name)
        return owners

    @cached_property
    def _vertex_owner(self) -> Dict[Vertex, str]:
        owners: Dict[Vertex, str] = {}
        for comp in self.components:
            for v in self.vertices(comp.name):
                owners.setdefault(v, comp.name)
        return owners

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(comp.name for comp in self.components)

    def has_component(self, name: str) -> bool:
        return name in self._by_name

    def component(self, name: str) -> Component:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownComponent(f"Unknown component {name!r}")

    def component_id(self, name: str) -> int:
        return self.names.index(name) + 1

    def owner_of_box(self, box: str) -> str:
        try:
            return self._box_owner[box]
        except KeyError:
            raise UnknownBox(f"Unknown box {box!r}")

    def callee(self, box: str) -> Component:
        """Y(b): the component a box invokes."""
        owner = self.component(self.owner_of_box(box))
        return self.component(owner.boxes[box])

    def owner_of_vertex(self, vertex: Vertex) -> str:
        return self._vertex_owner[vertex]

    def vertices(self, name: str) -> List[Vertex]:
        """
        Q_i = nodes, call ports and return ports of a component, canonical order.

        Ports of boxes whose callee is unknown are omitted.
        """
        comp = self.component(name)
        result = [node(n) for n in comp.nodes]
        for box, target in comp.boxes.items():
            if target not in self._by_name:
                continue
            callee = self._by_name[target]
            result.extend(call_port(box, en) for en in callee.entries)
            result.extend(return_port(box, ex) for ex in callee.exits)
        return sorted(result, key=vertex_sort_key)

    def all_vertices(self) -> List[Tuple[str, Vertex]]:
        """Every (component name, vertex) pair, components in order."""
        return [(comp.name, v) for comp in self.components for v in self.vertices(comp.name)]

    def return_ports(self, box: str) -> List[Vertex]:
        """Return ports of a box in the callee's fixed exit order."""
        callee = self.callee(box)
        return [return_port(box, ex) for ex in callee.exits]

    def call_ports(self, box: str) -> List[Vertex]:
        callee = self.callee(box)
        return [call_port(box, en) for en in callee.entries]

    def entry_pairs(self) -> List[Tuple[str, str]]:
        """All (component, entry) pairs, used for exploring starts."""
        return [(comp.name, en) for comp in self.components for en in comp.entries]
