"""
Random model generators shared by the tests.

- random_one_exit_model: proper 1-exit models (every strategy terminates)
- random_deterministic_model: acyclic deterministic models with several exits
- random_flat_model: one component, no boxes
- self_call_model / toy_call_model: small hand-checkable models
"""

from typing import Dict, List, Tuple

import numpy as np

from rmdp.models.rmdp import CALL, NODE, RETURN, Component, Rmdp, Vertex, call_port, node, return_port

ACTIONS = ("a", "b")


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def _split(total: float, parts: int, rng: np.random.Generator) -> List[float]:
    """`parts` non-negative weights summing to `total`; the last one takes the remainder."""
    weights = rng.dirichlet(np.ones(parts)) * total
    values = [float(w) for w in weights[:-1]]
    values.append(max(0.0, total - sum(values)))
    return values


def _reward(rng: np.random.Generator) -> float:
    return round(float(rng.uniform(-2.0, 2.0)), 3)


def random_one_exit_model(seed, max_components: int = 3) -> Rmdp:
    """
    A 1-exit model where every strategy is proper.

    Each row exits with probability at least 1/2 and calls with probability at
    most 1/4, so every invocation makes fewer than one nested call on average.
    """
    rng = _rng(seed)
    k = int(rng.integers(1, max_components + 1))
    names = [f"C{i}" for i in range(k)]
    components = []
    for i, name in enumerate(names):
        entry, exit_node = f"{name}_en", f"{name}_ex"
        inner = [f"{name}_n{j}" for j in range(int(rng.integers(0, 3)))]
        boxes = {f"{name}_b{j}": names[int(rng.integers(0, k))] for j in range(int(rng.integers(0, 3)))}
        if i == 0 and k > 1 and not boxes:
            boxes = {f"{name}_b0": names[1]}
        calls = [call_port(b, f"{callee}_en") for b, callee in boxes.items()]
        returns = [return_port(b, f"{callee}_ex") for b, callee in boxes.items()]
        decision = [node(entry)] + [node(n) for n in inner] + returns

        transitions: Dict[Tuple[Vertex, str], tuple] = {}
        rewards = {}
        for src in decision:
            for action in ACTIONS[: int(rng.integers(1, 3))]:
                p_exit = round(float(rng.uniform(0.5, 0.9)), 3)
                rest = 1.0 - p_exit
                row = [(node(exit_node), p_exit)]
                targets = [node(n) for n in inner]
                if calls:
                    p_call = round(min(0.25, rest) * float(rng.uniform(0.2, 1.0)), 3)
                    row.append((calls[int(rng.integers(len(calls)))], p_call))
                    rest -= p_call
                if targets:
                    shares = _split(rest, len(targets), rng)
                    row.extend(zip(targets, shares))
                else:
                    row[0] = (node(exit_node), row[0][1] + rest)
                transitions[(src, action)] = tuple(row)
                rewards[(src, action)] = _reward(rng)
        components.append(
            Component(
                name=name,
                entries=(entry,),
                exits=(exit_node,),
                nodes=frozenset(inner),
                actions=frozenset(ACTIONS),
                boxes=boxes,
                transitions=transitions,
                rewards=rewards,
            )
        )
    return Rmdp(tuple(components))


def random_deterministic_model(seed, max_components: int = 3) -> Rmdp:
    """
    Deterministic, acyclic, up to three exits per component.

    Component i only calls components after it and every row moves forward in
    a fixed vertex order, so every strategy terminates.
    """
    rng = _rng(seed)
    k = int(rng.integers(1, max_components + 1))
    names = [f"D{i}" for i in range(k)]
    exits_of = {name: [f"{name}_x{j}" for j in range(int(rng.integers(1, 4)))] for name in names}
    components = []
    for i, name in enumerate(names):
        entry = f"{name}_en"
        inner = [f"{name}_n{j}" for j in range(int(rng.integers(0, 3)))]
        later = names[i + 1:]
        boxes = {}
        if later:
            for j in range(int(rng.integers(0, 3))):
                boxes[f"{name}_b{j}"] = later[int(rng.integers(len(later)))]

        # vertex order: entry, then inner nodes and boxes interleaved, then exits
        order: List[Vertex] = [node(entry)]
        blocks: List[List[Vertex]] = [[node(n)] for n in inner]
        for b, callee in boxes.items():
            blocks.append(
                [call_port(b, f"{callee}_en")] + [return_port(b, x) for x in exits_of[callee]]
            )
        for index in rng.permutation(len(blocks)):
            order.extend(blocks[int(index)])
        order.extend(node(x) for x in exits_of[name])

        transitions, rewards = {}, {}
        for p, src in enumerate(order):
            if src.kind == CALL or (src.kind == NODE and src.node in exits_of[name]):
                continue
            targets = [v for v in order[p + 1:] if v.kind != RETURN]
            for action in ACTIONS[: int(rng.integers(1, 3))]:
                dst = targets[int(rng.integers(len(targets)))]
                transitions[(src, action)] = ((dst, 1.0),)
                rewards[(src, action)] = float(rng.integers(-3, 4))
        components.append(
            Component(
                name=name,
                entries=(entry,),
                exits=tuple(exits_of[name]),
                nodes=frozenset(inner),
                actions=frozenset(ACTIONS),
                boxes=boxes,
                transitions=transitions,
                rewards=rewards,
            )
        )
    return Rmdp(tuple(components))


def random_flat_model(seed) -> Rmdp:
    """One component without boxes; every row exits with probability >= 0.3."""
    rng = _rng(seed)
    inner = [f"f{j}" for j in range(int(rng.integers(1, 4)))]
    transitions, rewards = {}, {}
    for src in ["start"] + inner:
        for action in ACTIONS[: int(rng.integers(1, 3))]:
            p_exit = round(float(rng.uniform(0.3, 0.8)), 3)
            shares = _split(1.0 - p_exit, len(inner), rng)
            transitions[(node(src), action)] = ((node("done"), p_exit),) + tuple(
                (node(n), s) for n, s in zip(inner, shares)
            )
            rewards[(node(src), action)] = _reward(rng)
    return Rmdp(
        (
            Component(
                name="flat",
                entries=("start",),
                exits=("done",),
                nodes=frozenset(inner),
                actions=frozenset(ACTIONS),
                transitions=transitions,
                rewards=rewards,
            ),
        )
    )


def self_call_model(p: float = 0.4, reward: float = -1.0) -> Rmdp:
    """One component: pay `reward`, then call itself with probability p or exit."""
    return Rmdp(
        (
            Component(
                name="A",
                entries=("en",),
                exits=("ex",),
                actions=frozenset({"a", "go"}),
                boxes={"b": "A"},
                transitions={
                    (node("en"), "a"): ((call_port("b", "en"), p), (node("ex"), 1.0 - p)),
                    (return_port("b", "ex"), "go"): ((node("ex"), 1.0),),
                },
                rewards={(node("en"), "a"): reward},
            ),
        )
    )


def toy_call_model() -> Rmdp:
    """Main pays 2 and calls Sub, which pays 3 and exits: start value 5."""
    main = Component(
        name="Main",
        entries=("m_en",),
        exits=("m_ex",),
        actions=frozenset({"a", "go"}),
        boxes={"box": "Sub"},
        transitions={
            (node("m_en"), "a"): ((call_port("box", "s_en"), 1.0),),
            (return_port("box", "s_ex"), "go"): ((node("m_ex"), 1.0),),
        },
        rewards={(node("m_en"), "a"): 2.0},
    )
    sub = Component(
        name="Sub",
        entries=("s_en",),
        exits=("s_ex",),
        actions=frozenset({"a"}),
        transitions={(node("s_en"), "a"): ((node("s_ex"), 1.0),)},
        rewards={(node("s_en"), "a"): 3.0},
    )
    return Rmdp((main, sub))
