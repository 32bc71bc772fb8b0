"""
Environment Builders

Handles:
- The cloud-computing model (components T, S, H)
- Infinite spelunking: two level types over a 6x6 grid, 1-exit
- The palindrome gridworld composed with an even-palindrome pushdown monitor
- EnvSpec records with recommended training settings per environment
"""

import logging
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

from rmdp.config import DATA_DIR
from rmdp.models.configuration import Configuration
from rmdp.models.pda import POP, PUSH, STAY, Pda, PdaMove
from rmdp.models.rmdp import NODE, Component, Rmdp, Vertex, call_port, node, return_port
from rmdp.services.recursive_q import Hyperparameters
from rmdp.services.transforms import GO_ACTION, ProductRewards, pda_product
from rmdp.services.validators import ensure_valid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnvSpec:
    """A named environment: construction parameters, start and training settings."""

    name: str
    parameters: Dict[str, float]
    start: Tuple[str, str]
    hyperparameters: Hyperparameters
    notes: str = ""

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "name": self.name,
            "parameters": dict(self.parameters),
            "start": {"component": self.start[0], "entry": self.start[1]},
            "hyperparameters": {
                k: (list(v) if isinstance(v, tuple) else v)
                for k, v in asdict(self.hyperparameters).items()
            },
            "notes": self.notes,
        }


# ============================================================
# CLOUD
# ============================================================


def cloud_rmdp() -> Rmdp:
    """
    T decomposes a job into three S tasks (d, then c) or runs it monolithically (m).
    S runs on a fast server (f, crashes and restarts with 0.4) or a reliable
    one (r, interrupted with 0.3 into H). H either patches (n, nested
    interruptions with 0.3) or upgrades (y).
    """
    go = GO_ACTION
    T = Component(
        name="T",
        entries=("u1",),
        exits=("u2",),
        actions=frozenset({"d", "m", "c", go}),
        boxes={"b1": "S", "b2": "S", "b3": "S"},
        transitions={
            (node("u1"), "d"): ((call_port("b1", "u3"), 1.0),),
            (node("u1"), "m"): ((node("u2"), 1.0),),
            (return_port("b1", "u4"), go): ((call_port("b2", "u3"), 1.0),),
            (return_port("b2", "u4"), go): ((call_port("b3", "u3"), 1.0),),
            (return_port("b3", "u4"), "c"): ((node("u2"), 1.0),),
        },
        rewards={
            (node("u1"), "d"): -0.5,
            (node("u1"), "m"): -8.0,
            (return_port("b3", "u4"), "c"): -0.5,
        },
    )
    S = Component(
        name="S",
        entries=("u3",),
        exits=("u4",),
        actions=frozenset({"f", "r", go}),
        boxes={"b4": "H", "b5": "S"},
        transitions={
            (node("u3"), "f"): ((call_port("b5", "u3"), 0.4), (node("u4"), 0.6)),
            (node("u3"), "r"): ((call_port("b4", "u5"), 0.3), (node("u4"), 0.7)),
            (return_port("b4", "u6"), go): ((node("u4"), 1.0),),
            (return_port("b4", "u7"), go): ((node("u4"), 1.0),),
            (return_port("b5", "u4"), go): ((node("u4"), 1.0),),
        },
        rewards={
            (node("u3"), "f"): -1.0,
            (node("u3"), "r"): -1.5,
            (return_port("b4", "u6"), go): 0.2,
            (return_port("b4", "u7"), go): 0.2,
        },
    )
    H = Component(
        name="H",
        entries=("u5",),
        exits=("u6", "u7"),
        actions=frozenset({"n", "y", go}),
        boxes={"b6": "H", "b7": "H"},
        transitions={
            (node("u5"), "n"): ((call_port("b6", "u5"), 0.3), (node("u6"), 0.7)),
            (node("u5"), "y"): ((node("u7"), 1.0),),
            (return_port("b6", "u6"), go): ((call_port("b7", "u5"), 1.0),),
            (return_port("b6", "u7"), go): ((node("u7"), 1.0),),
            (return_port("b7", "u6"), go): ((node("u6"), 1.0),),
            (return_port("b7", "u7"), go): ((node("u7"), 1.0),),
        },
        rewards={(node("u5"), "n"): -0.01, (node("u5"), "y"): -0.2},
    )
    return ensure_valid(Rmdp((T, S, H)))


# ============================================================
# SPELUNKING
# ============================================================

MOVES = {"n": (-1, 0), "e": (0, 1), "s": (1, 0), "w": (0, -1)}
_CELL_RE = re.compile(r"_r(\d+)c(\d+)g([01])$")


@dataclass(frozen=True)
class Layout:
    """A level grid: '.' floor, 'T' trap, 'O' hole, 'E' climbing gear, 'I' start."""

    rows: Tuple[str, ...]

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Layout":
        lines = [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines()]
        rows = tuple(line for line in lines if line)
        if not rows or len({len(r) for r in rows}) != 1:
            raise ValueError(f"{path}: layout rows must be non-empty and equally long")
        if set("".join(rows)) - set(".TOEI"):
            raise ValueError(f"{path}: layout uses characters outside '.TOEI'")
        return cls(rows)

    @property
    def height(self) -> int:
        return len(self.rows)

    @property
    def width(self) -> int:
        return len(self.rows[0])

    def cells(self, mark: str) -> List[Tuple[int, int]]:
        return [
            (r, c) for r, row in enumerate(self.rows) for c, ch in enumerate(row) if ch == mark
        ]

    def move(self, cell: Tuple[int, int], action: str) -> Tuple[int, int]:
        dr, dc = MOVES[action]
        r, c = cell[0] + dr, cell[1] + dc
        if 0 <= r < self.height and 0 <= c < self.width:
            return (r, c)
        return cell


def default_layouts() -> Tuple[Layout, Layout]:
    folder = DATA_DIR / "layouts"
    return (
        Layout.load(folder / "spelunking_type1.txt"),
        Layout.load(folder / "spelunking_type2.txt"),
    )


def _level_name(level_type: int, fall_in: Optional[Tuple[int, int]]) -> str:
    if fall_in is None:
        return f"L{level_type}_I"
    return f"L{level_type}_r{fall_in[0]}c{fall_in[1]}"


def _cell_node(component: str, cell: Tuple[int, int], gear: int) -> str:
    return f"{component}_r{cell[0]}c{cell[1]}g{gear}"


def cell_of(vertex: Vertex) -> Optional[Tuple[int, int, int]]:
    """(row, column, gear) of a spelunking grid node, None for other vertices."""
    if vertex.kind != NODE:
        return None
    match = _CELL_RE.search(vertex.node)
    if not match:
        return None
    return int(match.group(1)), int(match.group(2)), int(match.group(3))


def _spelunking_level(
    layouts: Tuple[Layout, Layout],
    level_type: int,
    fall_in: Optional[Tuple[int, int]],
    trap_p: float,
    ascend_p: float,
) -> Component:
    layout = layouts[level_type - 1]
    below_type = 3 - level_type
    name = _level_name(level_type, fall_in)
    start_cell = fall_in if fall_in is not None else layout.cells("I")[0]
    entry, out = f"{name}_in", f"{name}_out"
    holes = layout.cells("O")
    box_at = {hole: f"{name}_b_r{hole[0]}c{hole[1]}" for hole in holes}
    boxes = {box_at[hole]: _level_name(below_type, hole) for hole in holes}
    hole_calls = {hole: call_port(box_at[hole], f"{boxes[box_at[hole]]}_in") for hole in holes}
    traps = set(layout.cells("T"))
    gear_cells = set(layout.cells("E"))

    def rows_at(cell, gear) -> Dict[str, Tuple[tuple, float]]:
        rows = {}
        for action in MOVES:
            target = layout.move(cell, action)
            if gear:
                landing = node(_cell_node(name, target, 1))
                if ascend_p > 0:
                    row = ((node(out), ascend_p), (landing, 1.0 - ascend_p))
                else:
                    row = ((landing, 1.0),)
            else:
                flag = 1 if target in gear_cells else 0
                landing = node(_cell_node(name, target, flag))
                if target in traps and trap_p > 0 and holes:
                    share = trap_p / len(holes)
                    row = tuple((hole_calls[h], share) for h in holes) + (
                        (landing, 1.0 - trap_p),
                    )
                else:
                    row = ((landing, 1.0),)
            rows[action] = (row, -1.0)
        if not gear and cell in hole_calls:
            rows["descend"] = (((hole_calls[cell], 1.0),), -1.0)
        if gear and cell == start_cell:
            rows["ascend"] = (((node(out), 1.0),), -1.0)
        return rows

    nodes = {entry, out}
    transitions, rewards = {}, {}

    def add(src: Vertex, rows):
        for action, (row, reward) in rows.items():
            transitions[(src, action)] = row
            rewards[(src, action)] = reward

    for r in range(layout.height):
        for c in range(layout.width):
            for gear in (0, 1):
                label = _cell_node(name, (r, c), gear)
                nodes.add(label)
                add(node(label), rows_at((r, c), gear))
    add(node(entry), rows_at(start_cell, 0))
    for hole, box in box_at.items():
        add(return_port(box, f"{boxes[box]}_out"), rows_at(hole, 1))

    return Component(
        name=name,
        entries=(entry,),
        exits=(out,),
        nodes=frozenset(nodes),
        actions=frozenset(list(MOVES) + ["descend", "ascend"]),
        boxes=boxes,
        transitions=transitions,
        rewards=rewards,
    )


def spelunking_rmdp(
    trap_p: float = 0.5,
    ascend_p: float = 0.01,
    layouts: Optional[Tuple[Layout, Layout]] = None,
) -> Rmdp:
    """
    Levels alternate between two types. Without gear the agent descends at a
    hole (calling the other level type there) and a trap drops it into a
    uniformly chosen hole with probability trap_p. With gear each move
    ascends with probability ascend_p, and `ascend` leaves from the cell it
    fell in at. Every step costs 1.

    Raises:
        ValueError: probabilities outside [0, 1] or unusable layouts
    """
    if not (0.0 <= trap_p <= 1.0 and 0.0 <= ascend_p <= 1.0):
        raise ValueError("trap_p and ascend_p must be in [0, 1]")
    layouts = layouts or default_layouts()
    first, second = layouts
    if len(first.cells("I")) != 1:
        raise ValueError("the type-1 layout needs exactly one 'I' cell")
    if (first.height, first.width) != (second.height, second.width):
        raise ValueError("both level layouts must have the same dimensions")

    components = [_spelunking_level(layouts, 1, None, trap_p, ascend_p)]
    for level_type in (2, 1):
        holes = layouts[3 - level_type - 1].cells("O")
        for hole in holes:
            components.append(_spelunking_level(layouts, level_type, hole, trap_p, ascend_p))
    return ensure_valid(Rmdp(tuple(components)))


OVER_TRAPS = "over-traps"
AVOID_TRAPS = "avoid-traps"
UNDETERMINED = "undetermined"


def strategy_class(
    m: Rmdp,
    policy: Callable[[Configuration], str],
    layouts: Optional[Tuple[Layout, Layout]] = None,
    max_steps: int = 200,
) -> str:
    """
    Follow a policy from the start of level L1_I assuming no trap fires and
    no spontaneous ascent, until the gear is picked up.

    Returns:
        "over-traps" if a trap cell was crossed first, "avoid-traps" if not,
        "undetermined" if the gear is never reached
    """
    layouts = layouts or default_layouts()
    traps = set(layouts[0].cells("T"))
    top = m.components[0]
    vertex = node(top.entries[0])
    crossed = False
    for _ in range(max_steps):
        action = policy(Configuration((), vertex, top.name))
        row = top.row(vertex, action)
        stays = [(p, dst) for dst, p in row if dst.kind == NODE and not top.is_exit(dst)]
        if not stays:
            return UNDETERMINED
        vertex = max(stays)[1]
        position = cell_of(vertex)
        if position is None:
            return UNDETERMINED
        r, c, gear = position
        if gear:
            return OVER_TRAPS if crossed else AVOID_TRAPS
        if (r, c) in traps:
            crossed = True
    return UNDETERMINED


# ============================================================
# PALINDROME
# ============================================================

PALINDROME_SIZE = 3


def palindrome_grid(size: int = PALINDROME_SIZE) -> Rmdp:
    """
    Deterministic size x size grid; bumping into a wall leaves the agent in
    place. Entry `start` dispatches uniformly to every cell.
    """
    cells = [(r, c) for r in range(size) for c in range(size)]
    name = lambda rc: f"c{rc[0]}{rc[1]}"  # noqa: E731
    transitions, rewards = {}, {}
    transitions[(node("start"), "init")] = tuple((node(name(rc)), 1.0 / len(cells)) for rc in cells)
    for r, c in cells:
        for action, (dr, dc) in MOVES.items():
            rr, cc = r + dr, c + dc
            target = (rr, cc) if 0 <= rr < size and 0 <= cc < size else (r, c)
            transitions[(node(name((r, c))), action)] = ((node(name(target)), 1.0),)
    return Rmdp(
        (
            Component(
                name="grid",
                entries=("start",),
                nodes=frozenset(name(rc) for rc in cells),
                actions=frozenset(list(MOVES) + ["init"]),
                transitions=transitions,
                rewards=rewards,
            ),
        )
    )


def palindrome_pda(moves=tuple(MOVES)) -> Pda:
    """
    Guess-the-midpoint automaton for even palindromes over the move actions.

    In P every move is pushed and `special` guesses the midpoint (to R); in R
    a move must match the top of the stack and pops it. Declaring in R with
    an empty stack accepts.
    """
    tops = list(moves) + [None]
    transitions = {}
    for move in moves:
        for top in tops:
            transitions[("P", move, top)] = PdaMove("P", PUSH, move)
        transitions[("R", move, move)] = PdaMove("R", POP)
    for top in tops:
        transitions[("P", "special", top)] = PdaMove("R", STAY)
    return Pda(
        states=("P", "R"),
        inputs=tuple(moves) + ("special",),
        stack_symbols=tuple(moves),
        initial="P",
        accepting=frozenset({"R"}),
        transitions=transitions,
    )


def palindrome_env(
    corruption: float = 0.01, rewards: ProductRewards = ProductRewards()
) -> Rmdp:
    """Grid x palindrome monitor; success only at the centre cell."""
    centre = f"c{PALINDROME_SIZE // 2}{PALINDROME_SIZE // 2}"
    return pda_product(palindrome_grid(), palindrome_pda(), rewards, corruption, goals=[centre])


def always_declare_policy(m: Rmdp, special: str = "special") -> Callable[[Configuration], str]:
    """Baseline: play the special input whenever it is enabled."""

    def policy(c: Configuration) -> str:
        actions = m.component(c.component).enabled_actions(c.vertex)
        if special in actions:
            return special
        return actions[0]

    return policy


# ============================================================
# REGISTRY
# ============================================================


def env_specs() -> Dict[str, EnvSpec]:
    return {
        "cloud": EnvSpec(
            name="cloud",
            parameters={},
            start=("T", "u1"),
            hyperparameters=Hyperparameters(
                learning_rate=0.02,
                epsilon=0.1,
                quantization=0.001,
                total_steps=200000,
                eval_episodes=100,
                start=("T", "u1"),
            ),
        ),
        "spelunking": EnvSpec(
            name="spelunking",
            parameters={"trap_p": 0.5, "ascend_p": 0.01},
            start=("L1_I", "L1_I_in"),
            hyperparameters=Hyperparameters(
                learning_rate=0.2,
                epsilon=0.1,
                total_steps=200000,
                eval_episodes=100,
                start=("L1_I", "L1_I_in"),
            ),
            notes="6x6 layouts in rmdp/data/layouts approximate the pictured cave",
        ),
        "palindrome": EnvSpec(
            name="palindrome",
            parameters={"corruption": 0.01, "success": 50.0, "reject": -5.0, "step": -1.0},
            start=("root", "root_start"),
            hyperparameters=Hyperparameters(
                learning_rate=0.1,
                epsilon=1.0,
                epsilon_final=0.1,
                epsilon_decay_steps=30000,
                total_steps=100000,
                eval_episodes=100,
                step_cap=200,
                start=("root", "root_start"),
            ),
            notes="tabular learner; success only at the centre cell",
        ),
    }


ENV_BUILDERS = {
    "cloud": lambda spec: cloud_rmdp(),
    "spelunking": lambda spec: spelunking_rmdp(**spec.parameters),
    "palindrome": lambda spec: palindrome_env(
        corruption=spec.parameters["corruption"],
        rewards=ProductRewards(
            success=spec.parameters["success"],
            reject=spec.parameters["reject"],
            step=spec.parameters["step"],
        ),
    ),
}


def build_env(name: str) -> Tuple[Rmdp, EnvSpec]:
    """Model and spec of a built-in environment by name."""
    specs = env_specs()
    if name not in specs:
        raise ValueError(f"Unknown environment {name!r}; known: {', '.join(sorted(specs))}")
    spec = specs[name]
    return ENV_BUILDERS[name](spec), spec
