"""
Truncated Unrolling Service

Optimal values on the configurations of stack height at most `stack_bound`.
A call that would exceed the bound is worth 0.

A configuration's value depends on its stack only through its height h and
the exit values v of the caller's return ports. For a fixed component and
height, each vertex value is a convex function of v: the largest of the
affine functions a + p.v that the available strategies earn. A component is
solved at one (h, v) by value iteration on its own vertices, each call port
valued by its callee one level deeper at the box's current exit values; the
callee is asked for its exact affine piece there and the sweeps repeat until
no callee answers better than the piece already in use.

Callee answers come from dyadic cells of the exit-value space. When the
solves at every corner of a cell return the same achievable affine piece,
that piece is the value on the whole cell: it is a lower bound everywhere,
and a convex function lies below its chords between the corners. Cells
whose corners disagree are split; below the finest level the callee is
solved at the exact point.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Set, Tuple

import numpy as np

from rmdp import config
from rmdp.errors import IllegalAction
from rmdp.models.configuration import Configuration
from rmdp.models.rmdp import CALL, Rmdp, Vertex, node, return_port
from rmdp.services.validators import ensure_valid

logger = logging.getLogger(__name__)

IMPROVEMENT_MARGIN = 1e-12
MAX_REFINEMENTS = 1000
CELL_LEVELS = 12
# a cell costs 2**exits corner solves
MAX_CELL_EXITS = 3

Piece = Tuple[float, np.ndarray]


@dataclass
class LocalSolution:
    """One solved (component, height, exit values)."""

    component: str
    height: int
    exit_values: np.ndarray
    values: Dict[Vertex, float]
    strategy: Dict[Vertex, str]
    pieces: Dict[str, Piece]


class _LocalLayout:
    """Per-component vertex arrays shared by every solve of that component."""

    def __init__(self, m: Rmdp, name: str, strategy: Optional[Mapping[Vertex, str]]):
        comp = m.component(name)
        self.name = name
        self.entries = comp.entries
        self.vertices = m.vertices(name)
        self.index = {v: i for i, v in enumerate(self.vertices)}
        self.exit_count = len(comp.exits)
        self.exits: List[Tuple[int, int]] = []
        self.calls: List[Tuple[int, str, str, str, List[int]]] = []
        self.decisions: List[Tuple[int, List[Tuple[str, float, List[Tuple[int, float]]]]]] = []

        for v in self.vertices:
            i = self.index[v]
            if comp.is_exit(v):
                self.exits.append((i, comp.exit_index(v.node)))
            elif v.kind == CALL:
                callee = m.callee(v.box)
                rets = [self.index[return_port(v.box, ex)] for ex in callee.exits]
                self.calls.append((i, v.box, callee.name, v.node, rets))
            else:
                actions = comp.enabled_actions(v)
                if strategy is not None and v in strategy:
                    if strategy[v] not in actions:
                        raise IllegalAction(f"strategy picks {strategy[v]!r} at {v}, which is not enabled")
                    actions = (strategy[v],)
                rows = [
                    (
                        a,
                        comp.reward(v, a),
                        [(self.index[dst], p) for dst, p in comp.row(v, a)],
                    )
                    for a in actions
                ]
                if rows:
                    self.decisions.append((i, rows))


class TruncatedSolver:
    """Local solves of a model under a stack-height bound, with exact callee cells."""

    def __init__(
        self,
        m: Rmdp,
        stack_bound: int,
        tol: float,
        strategy: Optional[Mapping[Vertex, str]] = None,
        max_iterations: Optional[int] = None,
    ):
        if stack_bound < 1:
            raise ValueError("stack_bound must be at least 1")
        if tol <= 0:
            raise ValueError("tol must be positive")
        self.m = m
        self.bound = stack_bound
        self.tol = tol
        # sweeps stop within tol, so equal strategies can differ by a few tol
        self.piece_tol = max(1e-9, 1e3 * tol)
        self.max_iterations = max_iterations or config.VI_MAX_ITERATIONS
        self.layouts = {name: _LocalLayout(m, name, strategy) for name in m.names}
        self._memo: Dict[tuple, LocalSolution] = {}
        self._pieces: Dict[Tuple[str, int, str], List[Piece]] = {}
        self._cells: Dict[tuple, Piece] = {}
        self._mixed: Set[tuple] = set()
        self.solves = 0

    # --- pieces ---

    def _same_piece(self, a: Piece, b: Piece) -> bool:
        return abs(a[0] - b[0]) <= self.piece_tol and bool(
            np.allclose(a[1], b[1], rtol=0.0, atol=self.piece_tol)
        )

    def _add_piece(self, key: Tuple[str, int, str], piece: Piece) -> bool:
        pieces = self._pieces.setdefault(key, [])
        if any(self._same_piece(known, piece) for known in pieces):
            return False
        pieces.append(piece)
        return True

    def _best_piece(self, key: Tuple[str, int, str], x: np.ndarray) -> Optional[Piece]:
        best, best_value = None, -math.inf
        for piece in self._pieces.get(key, ()):
            value = piece[0] + float(piece[1] @ x)
            if value > best_value:
                best, best_value = piece, value
        return best

    # --- callee answers ---

    def callee_piece(self, name: str, h: int, entry: str, x) -> Piece:
        """
        Exact affine piece of `entry` in component `name` at height h and exit values x.

        Looks for a uniform dyadic cell around x, coarsest first, solving the
        corners of cells not tried yet.
        """
        x = np.asarray(x, dtype=float)
        k = len(x)
        if k == 0 or k > MAX_CELL_EXITS:
            return self.solve(name, h, x).pieces[entry]

        top = math.ceil(math.log2(max(1.0, float(np.max(np.abs(x))))))
        for level in range(top, top - CELL_LEVELS, -1):
            size = 2.0 ** level
            index = tuple(int(i) for i in np.floor(x / size))
            key = (name, h, entry, level, index)
            piece = self._cells.get(key)
            if piece is not None:
                return piece
            if key in self._mixed:
                continue
            low = np.array(index, dtype=float) * size
            corners = [
                self.solve(name, h, low + size * np.array(offset)).pieces[entry]
                for offset in itertools.product((0.0, 1.0), repeat=k)
            ]
            if all(self._same_piece(corners[0], p) for p in corners[1:]):
                self._cells[key] = corners[0]
                return corners[0]
            self._mixed.add(key)
        return self.solve(name, h, x).pieces[entry]

    # --- solving ---

    def solve(self, name: str, h: int, v) -> LocalSolution:
        """Optimal values of component `name` at height h with exit values v."""
        v = np.asarray(v, dtype=float)
        key = (name, h, tuple(v.tolist()))
        cached = self._memo.get(key)
        if cached is None:
            cached = self._solve(self.layouts[name], h, v)
            self._memo[key] = cached
        return cached

    def _solve(self, layout: _LocalLayout, h: int, v: np.ndarray) -> LocalSolution:
        self.solves += 1
        n, width = len(layout.vertices), layout.exit_count
        const = np.zeros(n)
        coef = np.zeros((n, width))
        for i, k in layout.exits:
            coef[i, k] = 1.0
        open_calls = layout.calls if h < self.bound else []

        choice: Dict[int, str] = {}
        for _ in range(MAX_REFINEMENTS):
            self._iterate(layout, open_calls, h, v, const, coef, choice)
            improved = False
            for i, box, callee, entry, rets in open_calls:
                x = const[rets] + coef[rets] @ v
                key = (callee, h + 1, entry)
                current = self._best_piece(key, x)
                exact = self.callee_piece(callee, h + 1, entry, x)
                exact_value = exact[0] + float(exact[1] @ x)
                current_value = current[0] + float(current[1] @ x) if current else -math.inf
                if exact_value > current_value + IMPROVEMENT_MARGIN and self._add_piece(key, exact):
                    improved = True
            if not improved:
                break
        else:
            logger.warning(f"{layout.name} at height {h}: callee refinement hit its cap")

        values = const + coef @ v
        pieces = {}
        for entry in layout.entries:
            i = layout.index[node(entry)]
            pieces[entry] = (float(const[i]), coef[i].copy())
        return LocalSolution(
            component=layout.name,
            height=h,
            exit_values=v,
            values={vertex: float(values[i]) for i, vertex in enumerate(layout.vertices)},
            strategy={layout.vertices[i]: a for i, a in choice.items()},
            pieces=pieces,
        )

    def _iterate(self, layout, open_calls, h, v, const, coef, choice):
        """Gauss-Seidel sweeps over affine values until they settle within tol."""
        for sweep in range(self.max_iterations):
            change = 0.0
            for i, box, callee, entry, rets in open_calls:
                x = const[rets] + coef[rets] @ v
                piece = self._best_piece((callee, h + 1, entry), x)
                if piece is None:
                    new_const, new_coef = 0.0, np.zeros(layout.exit_count)
                else:
                    new_const = piece[0] + float(piece[1] @ const[rets])
                    new_coef = piece[1] @ coef[rets]
                change = max(change, abs(new_const - const[i]), float(np.max(np.abs(new_coef - coef[i]), initial=0.0)))
                const[i], coef[i] = new_const, new_coef

            for i, rows in layout.decisions:
                best = None
                for action, reward, outcomes in rows:
                    c = reward
                    g = np.zeros(layout.exit_count)
                    for j, p in outcomes:
                        c += p * const[j]
                        g += p * coef[j]
                    value = c + float(g @ v)
                    if best is None or value > best[0]:
                        best = (value, action, c, g)
                _, action, c, g = best
                choice[i] = action
                change = max(change, abs(c - const[i]), float(np.max(np.abs(g - coef[i]), initial=0.0)))
                const[i], coef[i] = c, g

            if change < self.tol:
                return sweep + 1
        logger.warning(
            f"{layout.name} at height {h}: value iteration stopped at {self.max_iterations} sweeps"
        )
        return self.max_iterations


class TruncatedValues:
    """
    Values y(stack, vertex) of configurations within the stack bound.

    Root values (empty stack, height 1) are computed eagerly for every
    component; deeper configurations are solved on lookup.
    """

    def __init__(self, solver: TruncatedSolver):
        self.solver = solver
        self.m = solver.m
        self.stack_bound = solver.bound
        self._roots = {
            name: solver.solve(name, 1, np.zeros(len(self.m.component(name).exits)))
            for name in self.m.names
        }

    def root(self, component: str) -> Dict[Vertex, float]:
        return dict(self._roots[component].values)

    def root_strategy(self, component: str) -> Dict[Vertex, str]:
        return dict(self._roots[component].strategy)

    def value(self, component: str, vertex: Vertex) -> float:
        return self._roots[component].values[vertex]

    def __getitem__(self, c: Configuration) -> float:
        if c.terminated:
            return 0.0
        if len(c.stack) + 1 > self.stack_bound:
            raise KeyError(f"stack height {len(c.stack) + 1} exceeds the bound {self.stack_bound}")
        if not c.stack:
            return self._roots[c.component].values[c.vertex]
        owner = self.m.owner_of_box(c.stack[0])
        solution = self._roots[owner]
        for box in c.stack:
            x = [solution.values[ret] for ret in self.m.return_ports(box)]
            callee = self.m.callee(box).name
            solution = self.solver.solve(callee, solution.height + 1, x)
        return solution.values[c.vertex]

    def __contains__(self, c: Configuration) -> bool:
        return c.terminated or len(c.stack) + 1 <= self.stack_bound

    def get(self, c: Configuration, default=None):
        try:
            return self[c]
        except KeyError:
            return default

    def root_items(self):
        """((empty stack, vertex) configuration, value) for every root vertex."""
        for name in self.m.names:
            for vertex, value in sorted(self._roots[name].values.items(), key=lambda kv: str(kv[0])):
                yield Configuration((), vertex, name), value


def solve_truncated(
    m: Rmdp,
    stack_bound: int,
    tol: float = 1e-10,
    strategy: Optional[Mapping[Vertex, str]] = None,
) -> TruncatedValues:
    """
    Optimal values with the stack height bounded by `stack_bound`.

    Args:
        m: Validated model (any number of exits)
        stack_bound: Largest stack height explored; deeper calls are worth 0
        tol: Sweep tolerance of the local value iterations
        strategy: Optional vertex -> action map fixing the action wherever given

    Returns:
        TruncatedValues, indexable by Configuration
    """
    ensure_valid(m)
    solver = TruncatedSolver(m, stack_bound, tol, strategy)
    values = TruncatedValues(solver)
    logger.info(
        f"Truncated solve at bound {stack_bound}: {solver.solves} local solves, "
        f"{len(solver._cells)} exact cells"
    )
    return values
