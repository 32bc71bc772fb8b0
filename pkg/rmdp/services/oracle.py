"""
Exact Oracle Service

Handles:
- Stackless-strategy evaluation on 1-exit models (dense linear solve)
- Optimal 1-exit values by policy iteration, seeded by value iteration
- LP export of the 1-exit optimality program (text, for external solvers)
- Exhaustive search on deterministic multi-exit models
- PAC model learning for 1-exit models from a transition sampler

On a 1-exit model the value of a call port is the value of the callee's entry
plus the value of the box's single return port (each scaled by the box-wise
discount when one is given). Exit nodes are worth 0; so is a vertex without
actions, and so is an absorbing vertex whose every action is a zero-reward
self-loop. A self-loop picked where another action leaves stays improper.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from rmdp import config
from rmdp.errors import (
    CapUnstable,
    IllegalAction,
    ImproperModel,
    NondeterministicModel,
    SingularSystem,
)
from rmdp.models.configuration import NOOP_ACTION, Configuration
from rmdp.models.rmdp import CALL, Rmdp, Vertex, node, return_port
from rmdp.services.semantics import initial_config, sample_from_cumulative, step
from rmdp.services.validators import (
    diameter,
    ensure_valid,
    require_single_exit_callees,
)
from rmdp.template_config import templates

logger = logging.getLogger(__name__)

RESIDUAL_BOUND = 1e-9
IMPROVEMENT_MARGIN = 1e-12
SPECTRAL_MARGIN = 1e-9


@dataclass
class ValueSolution:
    """Per-vertex values x(q), a stackless strategy and the fixed-point residual."""

    values: Dict[Vertex, float]
    strategy: Dict[Vertex, str]
    residual: float
    iterations: int = 0

    def value(self, vertex: Vertex) -> float:
        return self.values[vertex]

    def entry_value(self, entry: str) -> float:
        return self.values[node(entry)]


# ============================================================
# 1-EXIT EQUATION SYSTEM
# ============================================================


class _OneExitSystem:
    """
    Row-wise arrays of a 1-exit model.

    Rows (vertex, action) are stored grouped by vertex, actions in sorted
    order, so each decision vertex owns a contiguous run of rows.
    """

    def __init__(self, m: Rmdp, discount: float = 1.0):
        require_single_exit_callees(m, "1-exit solver")
        self.m = m
        self.discount = discount
        self.vertices: List[Vertex] = [v for _, v in m.all_vertices()]
        self.index = {v: i for i, v in enumerate(self.vertices)}

        call_i, call_en, call_ret = [], [], []
        row_vertex, row_action, row_reward = [], [], []
        entry_row, entry_dst, entry_p = [], [], []
        self.decision: List[int] = []
        self.row_start: List[int] = []

        for comp_name, v in m.all_vertices():
            comp = m.component(comp_name)
            i = self.index[v]
            if v.kind == CALL:
                callee = m.callee(v.box)
                call_i.append(i)
                call_en.append(self.index[node(v.node)])
                call_ret.append(self.index[return_port(v.box, callee.exits[0])])
                continue
            if comp.is_exit(v) or comp.is_absorbing(v):
                continue
            actions = comp.enabled_actions(v)
            if not actions:
                continue
            self.decision.append(i)
            self.row_start.append(len(row_vertex))
            for a in actions:
                row_id = len(row_vertex)
                row_vertex.append(i)
                row_action.append(a)
                row_reward.append(comp.reward(v, a))
                for dst, p in comp.row(v, a):
                    entry_row.append(row_id)
                    entry_dst.append(self.index[dst])
                    entry_p.append(p)

        self.call_i = np.array(call_i, dtype=int)
        self.call_en = np.array(call_en, dtype=int)
        self.call_ret = np.array(call_ret, dtype=int)
        self.row_vertex = np.array(row_vertex, dtype=int)
        self.row_action = row_action
        self.row_reward = np.array(row_reward, dtype=float)
        self.entry_row = np.array(entry_row, dtype=int)
        self.entry_dst = np.array(entry_dst, dtype=int)
        self.entry_p = np.array(entry_p, dtype=float)
        self.decision_array = np.array(self.decision, dtype=int)
        self.row_start_array = np.array(self.row_start, dtype=int)
        self.row_end = self.row_start[1:] + [len(row_vertex)]

    @property
    def size(self) -> int:
        return len(self.vertices)

    def row_values(self, x: np.ndarray) -> np.ndarray:
        """r(q,a) + sum p(q'|q,a) x(q') for every row."""
        expected = np.bincount(
            self.entry_row,
            weights=self.entry_p * x[self.entry_dst],
            minlength=len(self.row_action),
        )
        return self.row_reward + expected

    def bellman(self, x: np.ndarray) -> np.ndarray:
        """F(x)."""
        fx = np.zeros(self.size)
        if len(self.decision):
            best = np.maximum.reduceat(self.row_values(x), self.row_start_array)
            fx[self.decision_array] = best
        if len(self.call_i):
            fx[self.call_i] = self.discount * (x[self.call_en] + x[self.call_ret])
        return fx

    def greedy_rows(self, x: np.ndarray, current: Optional[List[int]] = None) -> List[int]:
        """
        Best row per decision vertex; smallest action on ties.

        With `current`, a row is only replaced by one that is better by more
        than the improvement margin.
        """
        q = self.row_values(x)
        chosen = []
        for k, (start, end) in enumerate(zip(self.row_start, self.row_end)):
            segment = q[start:end]
            best = start + int(np.argmax(segment))
            if current is not None:
                keep = current[k]
                if q[best] <= q[keep] + IMPROVEMENT_MARGIN:
                    best = keep
            chosen.append(best)
        return chosen

    def rows_of_strategy(self, sigma: Mapping[Vertex, str]) -> List[int]:
        chosen = []
        for k, (start, end) in enumerate(zip(self.row_start, self.row_end)):
            v = self.vertices[self.decision[k]]
            action = sigma.get(v)
            if action is None:
                raise IllegalAction(f"strategy is undefined at {v}")
            try:
                offset = self.row_action[start:end].index(action)
            except ValueError:
                raise IllegalAction(f"strategy picks {action!r} at {v}, which is not enabled")
            chosen.append(start + offset)
        return chosen

    def strategy_of_rows(self, rows: List[int]) -> Dict[Vertex, str]:
        return {self.vertices[self.decision[k]]: self.row_action[r] for k, r in enumerate(rows)}

    def evaluate(self, rows: List[int]) -> np.ndarray:
        """Solve (I - A_sigma) x = b_sigma; SingularSystem when sigma is improper."""
        n = self.size
        A = np.zeros((n, n))
        b = np.zeros(n)
        selected = np.array(rows, dtype=int)
        if len(selected):
            mask = np.isin(self.entry_row, selected)
            np.add.at(
                A,
                (self.row_vertex[self.entry_row[mask]], self.entry_dst[mask]),
                self.entry_p[mask],
            )
            b[self.row_vertex[selected]] = self.row_reward[selected]
        if len(self.call_i):
            np.add.at(A, (self.call_i, self.call_en), self.discount)
            np.add.at(A, (self.call_i, self.call_ret), self.discount)
        if n == 0:
            return b
        radius = float(np.max(np.abs(np.linalg.eigvals(A))))
        if radius >= 1.0 - SPECTRAL_MARGIN:
            raise SingularSystem(f"strategy is improper: spectral radius {radius:.6g} >= 1")
        try:
            return np.linalg.solve(np.eye(n) - A, b)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"strategy system is singular: {exc}")

    def value_iteration(self, max_iterations: int, tol: float = 1e-10) -> np.ndarray:
        x = np.zeros(self.size)
        for iteration in range(max_iterations):
            fx = self.bellman(x)
            if not np.all(np.isfinite(fx)):
                logger.warning("Value iteration diverged; using the last finite iterate")
                return x
            change = float(np.max(np.abs(fx - x))) if self.size else 0.0
            x = fx
            if change < tol:
                logger.debug(f"Value iteration converged after {iteration + 1} sweeps")
                return x
        logger.warning(f"Value iteration stopped at the {max_iterations}-sweep cap")
        return x

    def to_map(self, x: np.ndarray) -> Dict[Vertex, float]:
        return {v: float(x[i]) for i, v in enumerate(self.vertices)}


def eval_stackless(
    m: Rmdp, sigma: Mapping[Vertex, str], discount: float = 1.0
) -> Dict[Vertex, float]:
    """
    Expected total reward of a stackless strategy from every vertex.

    Args:
        m: 1-exit model (every invoked component has one exit)
        sigma: action per decision vertex
        discount: box-wise discount applied at call ports

    Returns:
        Map vertex -> value

    Raises:
        SingularSystem: sigma is improper
    """
    ensure_valid(m)
    system = _OneExitSystem(m, discount)
    return system.to_map(system.evaluate(system.rows_of_strategy(sigma)))


def solve_1exit(
    m: Rmdp, discount: float = 1.0, max_iterations: Optional[int] = None
) -> ValueSolution:
    """
    Optimal values of a 1-exit model by policy iteration.

    The first strategy is greedy for a value-iteration estimate; each round
    evaluates the strategy exactly and switches actions only on strict
    improvement.

    Raises:
        NotSingleExit: an invoked component has more than one exit
        ImproperModel: no proper strategy was found, or an improving one is improper
        SingularSystem: the final values miss the fixed-point residual bound
    """
    ensure_valid(m)
    system = _OneExitSystem(m, discount)
    seed = system.value_iteration(max_iterations or config.VI_MAX_ITERATIONS)

    rows = system.greedy_rows(seed)
    try:
        x = system.evaluate(rows)
    except SingularSystem:
        fallback = list(system.row_start)
        logger.warning("Greedy seed strategy is improper; retrying with smallest actions")
        try:
            x = system.evaluate(fallback)
        except SingularSystem:
            raise ImproperModel("no proper stackless strategy found for policy iteration")
        rows = fallback

    iterations = 1
    while True:
        improved = system.greedy_rows(x, current=rows)
        if improved == rows:
            break
        try:
            x_next = system.evaluate(improved)
        except SingularSystem as e:
            raise ImproperModel(f"an improving strategy is improper, so the optimum is unbounded: {e}")
        rows, x = improved, x_next
        iterations += 1

    residual = float(np.max(np.abs(x - system.bellman(x)))) if system.size else 0.0
    if residual > RESIDUAL_BOUND:
        raise SingularSystem(f"fixed-point residual {residual:.3g} exceeds {RESIDUAL_BOUND}")
    logger.info(f"Policy iteration finished after {iterations} evaluations")
    return ValueSolution(
        values=system.to_map(x),
        strategy=system.strategy_of_rows(rows),
        residual=residual,
        iterations=iterations,
    )


# ============================================================
# LP EXPORT
# ============================================================


def _lp_name(v: Vertex) -> str:
    return f"t({v})"


def lp_export_1exit(m: Rmdp, discount: float = 1.0) -> str:
    """
    The optimality LP: minimize the sum of t_q subject to
    t_q >= r(q,a) + sum p t_q' for every row and t_call >= t_en + t_ret.

    Only exported after solve_1exit succeeds on the model.
    """
    solve_1exit(m, discount)
    system = _OneExitSystem(m, discount)
    names = [_lp_name(v) for v in system.vertices]
    constraints = []

    for i, en, ret in zip(system.call_i, system.call_en, system.call_ret):
        lhs: Dict[str, float] = {names[i]: 1.0}
        for j in (en, ret):
            lhs[names[j]] = lhs.get(names[j], 0.0) - discount
        constraints.append({"name": f"c{len(constraints) + 1}", "lhs": lhs, "rhs": 0.0})

    for row_id, vertex_index in enumerate(system.row_vertex):
        lhs = {names[vertex_index]: 1.0}
        mask = system.entry_row == row_id
        for j, p in zip(system.entry_dst[mask], system.entry_p[mask]):
            lhs[names[j]] = lhs.get(names[j], 0.0) - float(p)
        constraints.append(
            {
                "name": f"c{len(constraints) + 1}",
                "lhs": lhs,
                "rhs": float(system.row_reward[row_id]),
            }
        )

    fixed, free = [], []
    for comp_name, v in m.all_vertices():
        comp = m.component(comp_name)
        pinned = comp.is_exit(v) or comp.is_absorbing(v)
        (fixed if pinned else free).append(_lp_name(v))

    return templates.get_template("lp_1exit.lp.j2").render(
        title=f"1-exit optimality LP, discount {discount!r}",
        objective={name: 1.0 for name in names},
        constraints=constraints,
        fixed=fixed,
        free=free,
    )


# ============================================================
# DETERMINISTIC MULTI-EXIT SEARCH
# ============================================================


class _SearchFrame:
    __slots__ = ("key", "successors", "index", "best")

    def __init__(self, key, successors, best):
        self.key = key
        self.successors = successors
        self.index = 0
        self.best = best


def _config_key(c: Configuration):
    return (c.stack, c.vertex, c.terminated)


def _successors(m: Rmdp, c: Configuration, cap: int):
    """
    (reward, next configuration) per choice, plus the value of not moving on:
    0 when the run has ended or can idle for free, -inf otherwise.
    """
    if c.terminated:
        return [], 0.0
    comp = m.component(c.component)
    if c.vertex.kind == CALL:
        if len(c.stack) + 2 > cap:
            return [], -math.inf
        return [(0.0, step(m, c, NOOP_ACTION, None).next)], -math.inf
    if comp.is_exit(c.vertex):
        return [(0.0, step(m, c, NOOP_ACTION, None).next)], -math.inf
    actions = comp.enabled_actions(c.vertex)
    if not actions:
        return [], 0.0
    choices, stay = [], -math.inf
    for a in actions:
        row = comp.row(c.vertex, a)
        reward = comp.reward(c.vertex, a)
        if row[0][0] == c.vertex:
            if reward > 0:
                raise ImproperModel(f"{c.vertex} in {c.component} earns {reward} forever on {a!r}")
            if reward == 0:
                stay = 0.0
            continue
        choices.append((reward, Configuration(c.stack, row[0][0], c.component)))
    if not choices and stay < 0:
        raise ImproperModel(f"{c.vertex} in {c.component} can only loop on itself at a cost")
    return choices, stay


def _max_total(m: Rmdp, start: Configuration, cap: int, memo: Dict) -> float:
    on_path = set()
    work: List[_SearchFrame] = []

    def push(c: Configuration):
        key = _config_key(c)
        successors, base = _successors(m, c, cap)
        work.append(_SearchFrame(key, successors, base))
        on_path.add(key)

    push(start)
    while work:
        frame = work[-1]
        if frame.index < len(frame.successors):
            reward, nxt = frame.successors[frame.index]
            key = _config_key(nxt)
            if key in memo:
                frame.best = max(frame.best, reward + memo[key])
                frame.index += 1
            elif key in on_path:
                raise ImproperModel(f"a strategy cycles forever through {nxt.vertex} (stack {nxt.stack})")
            else:
                push(nxt)
            continue
        memo[frame.key] = frame.best
        on_path.discard(frame.key)
        work.pop()
    return memo[_config_key(start)]


def solve_deterministic(m: Rmdp, depth_cap: int = 64) -> Dict[Tuple[str, str], float]:
    """
    Maximum total reward from every (component, entry) of a deterministic model.

    Configurations are searched depth-first with stack height at most
    `depth_cap`; calls beyond it are worth -inf. The search is repeated at
    twice the cap and the results must agree.

    Raises:
        NondeterministicModel: some row has more than one outcome
        CapUnstable: the value depends on the cap
        ImproperModel: some strategy cycles forever, other than idling for free
    """
    ensure_valid(m)
    if depth_cap < 1:
        raise ValueError("depth_cap must be at least 1")
    for comp in m.components:
        for (src, action), row in comp.transitions.items():
            if len(row) != 1:
                raise NondeterministicModel(
                    f"{comp.name}: row {src}/{action} has {len(row)} outcomes"
                )

    memo_cap, memo_double = {}, {}
    values = {}
    for comp_name, entry in m.entry_pairs():
        start = initial_config(m, comp_name, entry)
        at_cap = _max_total(m, start, depth_cap, memo_cap)
        at_double = _max_total(m, start, 2 * depth_cap, memo_double)
        if math.isinf(at_cap) or abs(at_cap - at_double) > 1e-9:
            raise CapUnstable(
                f"value from {comp_name}/{entry} is {at_cap} at cap {depth_cap} "
                f"but {at_double} at cap {2 * depth_cap}"
            )
        values[(comp_name, entry)] = at_cap
    return values


# ============================================================
# PAC LEARNING (1-EXIT)
# ============================================================

Sampler = Callable[[Vertex, str, np.random.Generator], Vertex]


@dataclass(frozen=True)
class PacParams:
    """
    Drift parameters of a proper model: the stack-height offset c_o, the
    expected decline mu per step, the value bound b and the expected-steps
    bound K.
    """

    c_o: float
    mu: float
    b: float
    K: float

    def __post_init__(self):
        if self.c_o < 1:
            raise ValueError("c_o must be at least 1")
        if not (0.0 < self.mu <= 1.0):
            raise ValueError("mu must be in (0, 1]")
        if self.K <= 0:
            raise ValueError("K must be positive")

    @classmethod
    def from_discount(cls, discount: float, r_max: float) -> "PacParams":
        """Parameters implied by stopping with probability 1 - discount per step."""
        if not (0.0 < discount < 1.0):
            raise ValueError("discount must be in (0, 1)")
        c_o = 1.0 + 1.0 / (1.0 - discount)
        mu = 1.0 - discount
        return cls(c_o=c_o, mu=mu, b=r_max / (1.0 - discount), K=c_o / mu)


@dataclass
class PacResult:
    model: Rmdp
    solution: ValueSolution
    samples: Dict[Tuple[str, Vertex, str], int]
    eps: float
    delta: float
    row_precision: float
    samples_per_row: int
    bound: str = ""
    counts: Dict[Tuple[str, Vertex, str], Dict[Vertex, int]] = field(default_factory=dict)

    @property
    def values(self) -> Dict[Vertex, float]:
        return self.solution.values


def pac_sample_size(row_precision: float, support: int, rows: int, delta: float) -> int:
    """n = ceil((2 / eps'^2) (support ln 2 + ln(rows / delta)))."""
    if row_precision <= 0 or not (0.0 < delta < 1.0):
        raise ValueError("row precision must be positive and delta in (0, 1)")
    rows = max(rows, 1)
    return math.ceil(
        (2.0 / row_precision ** 2) * (support * math.log(2.0) + math.log(rows / delta))
    )


def model_sampler(m: Rmdp) -> Sampler:
    """Sampler drawing successors from a known model (for experiments)."""
    owners = {v: name for name, v in m.all_vertices()}

    def sample(vertex: Vertex, action: str, rng: np.random.Generator) -> Vertex:
        comp = m.component(owners[vertex])
        row = comp.row(vertex, action)
        index = sample_from_cumulative(comp.cumulative_rows[(vertex, action)], rng)
        return row[index][0]

    return sample


def pac_learn_1exit(
    sampler: Sampler,
    skeleton: Rmdp,
    eps: float,
    delta: float,
    K: float,
    r_max: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
    seed: int = 0,
    discount: float = 1.0,
) -> PacResult:
    """
    Learn a 1-exit model from samples and solve it.

    Every row with more than one declared outcome is sampled n times, with n
    chosen so that each row's empirical L1 error is below
    eps / (2 K^2 r_max) with probability at least 1 - delta. Point-mass rows
    are sampled once.

    Args:
        sampler: draws a successor of (vertex, action)
        skeleton: model whose rows declare the supports
        eps: target precision of the values
        delta: allowed failure probability
        K: bound on the expected number of steps
        r_max: reward diameter; taken from the skeleton when omitted
        rng: random source (built from `seed` when omitted)

    Returns:
        PacResult with the learned model and its solution
    """
    ensure_valid(skeleton)
    require_single_exit_callees(skeleton, "pac_learn_1exit")
    if eps <= 0 or K <= 0:
        raise ValueError("eps and K must be positive")
    if r_max is None:
        r_max = diameter(skeleton)
    r_max = max(r_max, 1e-12)
    rng = rng if rng is not None else config.make_rng(seed)

    stochastic = [
        (comp, key)
        for comp in skeleton.components
        for key, row in comp.transitions.items()
        if len(row) > 1
    ]
    support = max((len(comp.transitions[key]) for comp, key in stochastic), default=1)
    row_precision = eps / (2.0 * K * K * r_max)
    n = pac_sample_size(row_precision, support, len(stochastic), delta) if stochastic else 1
    logger.info(
        f"PAC sampling: {len(stochastic)} stochastic rows, precision {row_precision:.4g}, "
        f"{n} samples each"
    )

    samples, counts = {}, {}
    learned_components = []
    for comp in skeleton.components:
        transitions = {}
        for (src, action), row in comp.transitions.items():
            draws = n if len(row) > 1 else 1
            declared = [dst for dst, _ in row]
            tally = Counter(sampler(src, action, rng) for _ in range(draws))
            unknown = set(tally) - set(declared)
            if unknown:
                raise ValueError(
                    f"{comp.name}: sampled {sorted(map(str, unknown))} outside the declared "
                    f"support of {src}/{action}"
                )
            # duplicates in a declared row share their empirical mass on the first copy
            seen = set()
            new_row = []
            for dst in declared:
                p = tally[dst] / draws if dst not in seen else 0.0
                seen.add(dst)
                new_row.append((dst, p))
            transitions[(src, action)] = tuple(new_row)
            samples[(comp.name, src, action)] = draws
            counts[(comp.name, src, action)] = dict(tally)
        learned_components.append(replace(comp, transitions=transitions))

    learned = Rmdp(tuple(learned_components))
    solution = solve_1exit(learned, discount)
    return PacResult(
        model=learned,
        solution=solution,
        samples=samples,
        eps=eps,
        delta=delta,
        row_precision=row_precision,
        samples_per_row=n,
        bound=(
            "n = ceil((2/eps_row^2) * (S_max*ln2 + ln(rows/delta))), "
            "eps_row = eps / (2 K^2 r_max)"
        ),
        counts=counts,
    )
