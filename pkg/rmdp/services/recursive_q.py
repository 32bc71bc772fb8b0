"""
Recursive Q-learning Service

Handles:
- Exit-value vectors: min-normalization and quantization
- Q-tables keyed by (vertex, exit-value vector, action)
- Multi-exit Recursive Q-learning, the 1-exit variant with box-wise discount,
  and a flat Q-learning baseline that treats calls and returns as plain moves
- Greedy policies and periodic greedy evaluation (learning curves)
"""

import logging
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from rmdp import config
from rmdp.errors import IllegalAction
from rmdp.models.configuration import NOOP_ACTION, Configuration
from rmdp.models.rmdp import CALL, Rmdp, Vertex
from rmdp.services.semantics import initial_config, run_episode, step
from rmdp.services.validators import ensure_valid, require_single_exit_callees

logger = logging.getLogger(__name__)

RECURSIVE = "recursive"
SINGLE_EXIT = "single_exit"
FLAT = "flat"

ExitValues = Tuple[float, ...]
QKey = Tuple[Vertex, ExitValues, str]


# ============================================================
# HYPERPARAMETERS
# ============================================================


@dataclass(frozen=True)
class Hyperparameters:
    """
    Training settings.

    learning_rate_power switches the learning rate from the constant
    `learning_rate` to 1 / visits**power for each (vertex, v, action).
    Epsilon decays linearly from `epsilon` to `epsilon_final` over
    `epsilon_decay_steps` when both are set.
    """

    learning_rate: float = 0.1
    learning_rate_power: Optional[float] = None
    epsilon: float = 0.1
    epsilon_final: Optional[float] = None
    epsilon_decay_steps: int = 0
    quantization: float = config.DEFAULT_QUANTIZATION
    step_cap: int = config.DEFAULT_STEP_CAP
    total_steps: int = 10000
    discount: float = 1.0
    seed: int = 0
    initial_value: float = 0.0
    eval_episodes: int = config.EVAL_EPISODES
    eval_points: int = config.EVAL_POINTS
    exploring_starts: bool = False
    start: Optional[Tuple[str, str]] = None

    def __post_init__(self):
        errors = []
        if not (0.0 < self.learning_rate <= 1.0):
            errors.append("learning_rate must be in (0, 1]")
        if self.learning_rate_power is not None and not (0.5 < self.learning_rate_power <= 1.0):
            errors.append("learning_rate_power must be in (0.5, 1]")
        if not (0.0 <= self.epsilon <= 1.0):
            errors.append("epsilon must be in [0, 1]")
        if self.epsilon_final is not None and not (0.0 <= self.epsilon_final <= 1.0):
            errors.append("epsilon_final must be in [0, 1]")
        if self.epsilon_decay_steps < 0:
            errors.append("epsilon_decay_steps must be non-negative")
        if self.quantization <= 0:
            errors.append("quantization must be positive")
        if self.step_cap < 1:
            errors.append("step_cap must be at least 1")
        if self.total_steps < 0:
            errors.append("total_steps must be non-negative")
        if not (0.0 < self.discount <= 1.0):
            errors.append("discount must be in (0, 1]")
        if self.eval_episodes < 0 or self.eval_points < 1:
            errors.append("eval_episodes must be >= 0 and eval_points >= 1")
        if errors:
            raise ValueError("; ".join(errors))

    def epsilon_at(self, steps_done: int) -> float:
        if self.epsilon_final is None or self.epsilon_decay_steps <= 0:
            return self.epsilon
        fraction = min(1.0, steps_done / self.epsilon_decay_steps)
        return self.epsilon + (self.epsilon_final - self.epsilon) * fraction

    def alpha(self, visits: int) -> float:
        if self.learning_rate_power is None:
            return self.learning_rate
        return 1.0 / visits ** self.learning_rate_power

    @property
    def eval_interval(self) -> int:
        return max(1, self.total_steps // self.eval_points)

    def with_seed(self, seed: int) -> "Hyperparameters":
        return replace(self, seed=seed)


# ============================================================
# EXIT-VALUE VECTORS
# ============================================================


def quantize(values: Sequence[float], resolution: float) -> ExitValues:
    """
    Round each coordinate to the nearest multiple of `resolution`.

    Ties round half away from zero.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    unit = Decimal(repr(float(resolution)))
    result = []
    for x in values:
        steps = (Decimal(repr(float(x))) / unit).quantize(Decimal("1"), rounding=ROUND_HALF_UP)
        result.append(float(steps * unit))
    return tuple(result)


def normalize_exit_values(raw: Sequence[float], resolution: float) -> Tuple[float, ExitValues]:
    """
    Subtract the minimum and quantize.

    Returns:
        (v_min, normalized vector); the vector has minimum 0
    """
    if not raw:
        return 0.0, ()
    v_min = min(raw)
    return v_min, quantize([x - v_min for x in raw], resolution)


# ============================================================
# Q-TABLE
# ============================================================


class QTable:
    """Map (vertex, exit-value vector, action) -> value; unseen keys read as initial_value."""

    def __init__(self, resolution: float, initial_value: float = 0.0, kind: str = RECURSIVE):
        self.resolution = resolution
        self.initial_value = initial_value
        self.kind = kind
        self.entries: Dict[QKey, float] = {}
        self.visits: Dict[QKey, int] = {}

    def get(self, vertex: Vertex, v: ExitValues, action: str) -> float:
        return self.entries.get((vertex, v, action), self.initial_value)

    def set(self, vertex: Vertex, v: ExitValues, action: str, value: float):
        self.entries[(vertex, v, action)] = value

    def max_value(self, vertex: Vertex, v: ExitValues, actions: Sequence[str]) -> float:
        if not actions:
            return 0.0
        return max(self.get(vertex, v, a) for a in actions)

    def best_action(self, vertex: Vertex, v: ExitValues, actions: Sequence[str]) -> str:
        """Argmax with ties broken by the smallest action id."""
        best_action = None
        best_value = 0.0
        for a in sorted(actions):
            value = self.get(vertex, v, a)
            if best_action is None or value > best_value:
                best_action, best_value = a, value
        if best_action is None:
            raise IllegalAction(f"no action enabled at {vertex}")
        return best_action

    def zero_vector(self, m: Rmdp, component: str) -> ExitValues:
        if self.kind == FLAT:
            return ()
        if self.kind == SINGLE_EXIT:
            return (0.0,)
        return (0.0,) * len(m.component(component).exits)

    def copy(self) -> "QTable":
        clone = QTable(self.resolution, self.initial_value, self.kind)
        clone.entries = dict(self.entries)
        clone.visits = dict(self.visits)
        return clone

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, QTable) and self.entries == other.entries


# ============================================================
# LEARNING CURVES AND EVALUATION
# ============================================================


@dataclass(frozen=True)
class CurvePoint:
    step: int
    mean_return: float
    p10: float
    p90: float


@dataclass
class LearningCurve:
    points: List[CurvePoint] = field(default_factory=list)
    episodes: int = 0
    truncated_episodes: int = 0

    def append(self, point: CurvePoint):
        if self.points and point.step <= self.points[-1].step:
            raise ValueError("curve steps must be strictly increasing")
        self.points.append(point)

    @property
    def final_mean(self) -> Optional[float]:
        return self.points[-1].mean_return if self.points else None


@dataclass(frozen=True)
class EvaluationResult:
    returns: Tuple[float, ...]
    mean: float
    p10: float
    p90: float
    truncated: int


def percentile(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile (an order statistic, no interpolation)."""
    return float(np.percentile(np.asarray(values, dtype=float), q, method="inverted_cdf"))


def evaluate_policy(
    m: Rmdp,
    policy: Callable[[Configuration], str],
    start: Configuration,
    episodes: int,
    rng: np.random.Generator,
    step_cap: int,
) -> EvaluationResult:
    """
    Run greedy test episodes.

    The mean is taken over episodes that terminated; if none did, over all
    episodes (with a warning).
    """
    completed, everything = [], []
    truncated = 0
    for _ in range(episodes):
        trajectory = run_episode(m, policy, start, rng, step_cap)
        everything.append(trajectory.total_reward)
        if trajectory.truncated:
            truncated += 1
        else:
            completed.append(trajectory.total_reward)
    used = completed
    if not completed:
        logger.warning(f"All {episodes} evaluation episodes hit the step cap {step_cap}")
        used = everything
    return EvaluationResult(
        returns=tuple(everything),
        mean=float(np.mean(used)),
        p10=percentile(used, 10),
        p90=percentile(used, 90),
        truncated=truncated,
    )


# ============================================================
# GREEDY POLICY
# ============================================================


class GreedyPolicy:
    """
    Greedy action from a Q-table.

    The exit-value vector of a configuration is rebuilt from its stack the way
    the learner tracks it: start from zeros at the bottom component and, for
    each box, take the callee-exit return-port maxima, normalized and quantized.
    """

    def __init__(self, q: QTable, m: Rmdp):
        self.q = q
        self.m = m
        self._vectors: Dict[Tuple[str, Tuple[str, ...]], ExitValues] = {}

    def exit_vector(self, c: Configuration) -> ExitValues:
        if self.q.kind != RECURSIVE:
            return self.q.zero_vector(self.m, c.component)
        if not c.stack:
            return self.q.zero_vector(self.m, c.component)
        key = (c.component, c.stack)
        cached = self._vectors.get(key)
        if cached is not None:
            return cached
        bottom = self.m.owner_of_box(c.stack[0])
        v = self.q.zero_vector(self.m, bottom)
        for box in c.stack:
            owner = self.m.component(self.m.owner_of_box(box))
            raw = [
                self.q.max_value(ret, v, owner.enabled_actions(ret))
                for ret in self.m.return_ports(box)
            ]
            _, v = normalize_exit_values(raw, self.q.resolution)
        self._vectors[key] = v
        return v

    def __call__(self, c: Configuration) -> str:
        actions = self.m.component(c.component).enabled_actions(c.vertex)
        return self.q.best_action(c.vertex, self.exit_vector(c), actions)


def greedy_policy(q: QTable, m: Rmdp) -> GreedyPolicy:
    return GreedyPolicy(q, m)


def greedy_value(q: QTable, m: Rmdp, start: Configuration) -> float:
    """Q-derived value of a start configuration with an empty stack."""
    actions = m.component(start.component).enabled_actions(start.vertex)
    return q.max_value(start.vertex, q.zero_vector(m, start.component), actions)


def default_start(m: Rmdp, h: Hyperparameters) -> Configuration:
    if h.start is not None:
        return initial_config(m, *h.start)
    first = m.components[0]
    return initial_config(m, first.name, first.entries[0])


# ============================================================
# TRAINING
# ============================================================


class _Trainer:
    """One training run; owns its table, curve and random streams."""

    def __init__(self, m: Rmdp, h: Hyperparameters, kind: str, rng: Optional[np.random.Generator]):
        self.m = m
        self.h = h
        self.kind = kind
        train_rng, eval_rng = config.spawn_streams(h.seed)
        self.rng = rng if rng is not None else train_rng
        self.eval_rng = eval_rng
        self.q = QTable(h.quantization, h.initial_value, kind)
        self.curve = LearningCurve()
        self.start = default_start(m, h)
        self.entry_pairs = m.entry_pairs()
        self.steps = 0

    def run(self) -> Tuple[QTable, LearningCurve]:
        logger.info(
            f"Training {self.kind} for {self.h.total_steps} steps (seed {self.h.seed})"
        )
        while self.steps < self.h.total_steps:
            self._episode()
        return self.q, self.curve

    # --- episode loop ---

    def _episode_start(self) -> Configuration:
        if not self.h.exploring_starts:
            return self.start
        index = int(self.rng.integers(len(self.entry_pairs)))
        return initial_config(self.m, *self.entry_pairs[index])

    def _episode(self):
        c = self._episode_start()
        v = self.q.zero_vector(self.m, c.component)
        v_stack: List[ExitValues] = []
        agent_steps = 0
        while not c.terminated and self.steps < self.h.total_steps:
            if agent_steps >= self.h.step_cap:
                self.curve.truncated_episodes += 1
                break
            s = c.vertex
            comp = self.m.component(c.component)
            actions = comp.enabled_actions(s)
            if not actions:
                raise IllegalAction(f"no action enabled at {s} in {comp.name}")
            a = self._choose(s, v, actions)
            outcome = step(self.m, c, a, self.rng)
            r = outcome.reward
            landed = outcome.next
            landed_comp = self.m.component(landed.component)

            if landed.vertex.kind == CALL:
                box = landed.vertex.box
                entered = step(self.m, landed, NOOP_ACTION, self.rng).next
                target, v_next = self._entered_target(comp, box, r, v, entered)
                v_stack.append(v)
                c_next = entered
            elif landed_comp.is_exit(landed.vertex):
                k = landed_comp.exit_index(landed.vertex.node)
                target = self._exited_target(r, v, k, landed)
                c_next = step(self.m, landed, NOOP_ACTION, self.rng).next
                v_next = v_stack.pop() if v_stack else v
            else:
                target = r + self.q.max_value(
                    landed.vertex, v, landed_comp.enabled_actions(landed.vertex)
                )
                c_next, v_next = landed, v

            self._update(s, v, a, target)
            self.steps += 1
            agent_steps += 1
            if self.h.eval_episodes and (
                self.steps % self.h.eval_interval == 0 or self.steps == self.h.total_steps
            ):
                self._evaluate()
            c, v = c_next, v_next
        self.curve.episodes += 1

    # --- targets ---

    def _entered_target(self, comp, box: str, r: float, v: ExitValues, entered: Configuration):
        callee = self.m.component(entered.component)
        entry_actions = callee.enabled_actions(entered.vertex)
        if self.kind == RECURSIVE:
            raw = [
                self.q.max_value(ret, v, comp.enabled_actions(ret))
                for ret in self.m.return_ports(box)
            ]
            v_min, v_callee = normalize_exit_values(raw, self.h.quantization)
            target = r + self.q.max_value(entered.vertex, v_callee, entry_actions) + v_min
            return target, v_callee
        if self.kind == SINGLE_EXIT:
            lam = self.h.discount
            ret = self.m.return_ports(box)[0]
            target = (
                r
                + lam * self.q.max_value(entered.vertex, v, entry_actions)
                + lam * self.q.max_value(ret, v, comp.enabled_actions(ret))
            )
            return target, v
        target = r + self.q.max_value(entered.vertex, v, entry_actions)
        return target, v

    def _exited_target(self, r: float, v: ExitValues, k: int, landed: Configuration) -> float:
        if self.kind == RECURSIVE:
            return r + v[k]
        if self.kind == SINGLE_EXIT or not landed.stack:
            return r
        # flat learner continues at the caller's return port
        returned = step(self.m, landed, NOOP_ACTION, self.rng).next
        caller = self.m.component(returned.component)
        return r + self.q.max_value(returned.vertex, v, caller.enabled_actions(returned.vertex))

    # --- table updates ---

    def _choose(self, s: Vertex, v: ExitValues, actions: Sequence[str]) -> str:
        epsilon = self.h.epsilon_at(self.steps)
        if self.rng.random() < epsilon:
            return actions[int(self.rng.integers(len(actions)))]
        return self.q.best_action(s, v, actions)

    def _update(self, s: Vertex, v: ExitValues, a: str, target: float):
        key = (s, v, a)
        visits = self.q.visits.get(key, 0) + 1
        self.q.visits[key] = visits
        alpha = self.h.alpha(visits)
        old = self.q.entries.get(key, self.q.initial_value)
        self.q.entries[key] = (1.0 - alpha) * old + alpha * target

    # --- evaluation ---

    def _evaluate(self):
        policy = GreedyPolicy(self.q, self.m)
        result = evaluate_policy(
            self.m, policy, self.start, self.h.eval_episodes, self.eval_rng, self.h.step_cap
        )
        self.curve.append(CurvePoint(self.steps, result.mean, result.p10, result.p90))
        logger.debug(f"step {self.steps}: mean return {result.mean:.4f}")


def rql_train(
    m: Rmdp, h: Hyperparameters, rng: Optional[np.random.Generator] = None
) -> Tuple[QTable, LearningCurve]:
    """
    Recursive Q-learning over (vertex, exit-value vector, action).

    Args:
        m: Validated model
        h: Hyperparameters (seed drives both random streams unless rng is given)
        rng: Optional training random source

    Returns:
        (QTable, LearningCurve)
    """
    ensure_valid(m)
    return _Trainer(m, h, RECURSIVE, rng).run()


def rql1_train(
    m: Rmdp, h: Hyperparameters, rng: Optional[np.random.Generator] = None
) -> Tuple[QTable, LearningCurve]:
    """1-exit Recursive Q-learning with box-wise discount `h.discount`."""
    ensure_valid(m)
    require_single_exit_callees(m, "rql1_train")
    return _Trainer(m, h, SINGLE_EXIT, rng).run()


def flat_q_train(
    m: Rmdp, h: Hyperparameters, rng: Optional[np.random.Generator] = None
) -> Tuple[QTable, LearningCurve]:
    """Q-learning keyed on the vertex only; calls and returns look like ordinary moves."""
    ensure_valid(m)
    return _Trainer(m, h, FLAT, rng).run()


def get_exits(m: Rmdp, box: str) -> List[Vertex]:
    """Return ports of `box` in the callee's exit order (raises UnknownBox)."""
    return m.return_ports(box)


TRAINERS = {
    "rql": rql_train,
    "rql1": rql1_train,
    "flat-q": flat_q_train,
}
