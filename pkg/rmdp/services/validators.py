"""
Model Structure Validators

Centralized well-formedness checks for RMDPs and PDAs.

Handles:
- Component-level rules (entries/exits, ports, transition domains)
- Probability mass and range checks
- Cross-component id disjointness
- Simple structural queries (diameter, 1-exit)
"""

import math
import re
from typing import FrozenSet, List, NamedTuple, Set

from rmdp import config
from rmdp.errors import ModelInvalid, NotSingleExit, PdaInvalid
from rmdp.models.pda import POP, PUSH, Pda
from rmdp.models.rmdp import CALL, NODE, RETURN, Rmdp

IDENTIFIER = re.compile(r"^[A-Za-z0-9_]+$")
# Directive words of the model text format; an id spelled like one would not round-trip.
RESERVED_IDS = frozenset({"component", "end", "entries", "exits", "nodes", "actions", "box"})


class Diagnostic(NamedTuple):
    """One violated rule, located by component and vertex."""

    component: str
    vertex: str
    rule: str
    message: str = ""

    def __str__(self) -> str:
        where = f"{self.component}:{self.vertex}" if self.vertex else self.component
        text = f"{where}: {self.rule}"
        if self.message:
            text += f" ({self.message})"
        return text


class ValidationResult:
    """Container for validation results including warnings."""

    def __init__(self):
        self.errors: List[Diagnostic] = []
        self.warnings: List[str] = []

    def add_error(self, component: str, vertex: str, rule: str, message: str = ""):
        self.errors.append(Diagnostic(component, vertex, rule, message))

    def add_warning(self, msg: str):
        self.warnings.append(msg)

    @property
    def is_valid(self) -> bool:
        return len(self.errors) == 0

    def raise_if_invalid(self, error_class=ModelInvalid):
        """Raise if there are blocking errors."""
        if self.errors:
            raise error_class(self.errors)


def _check_identifier(
    result: ValidationResult, component: str, ident: str, what: str, reserved: FrozenSet[str] = RESERVED_IDS
):
    if not IDENTIFIER.match(ident):
        result.add_error(component, ident, "bad-identifier", f"{what} id must match [A-Za-z0-9_]+")
    elif ident in reserved:
        result.add_error(component, ident, "reserved-identifier", f"{what} id is a format keyword")


# ============================================================
# RMDP VALIDATION
# ============================================================


def check_model(m: Rmdp) -> ValidationResult:
    """
    Run every structural rule over a model.

    Args:
        m: The model

    Returns:
        ValidationResult; errors are Diagnostics naming component, vertex, rule
    """
    result = ValidationResult()
    tolerance = config.PROBABILITY_TOLERANCE

    seen_components: Set[str] = set()
    node_owner = {}
    box_owner = {}
    for comp in m.components:
        _check_identifier(result, comp.name, comp.name, "component")
        if comp.name in seen_components:
            result.add_error(comp.name, "", "duplicate-component")
        seen_components.add(comp.name)

        for n in sorted(comp.nodes):
            _check_identifier(result, comp.name, n, "node")
            if n in node_owner:
                result.add_error(comp.name, n, "shared-node", f"also in {node_owner[n]}")
            else:
                node_owner[n] = comp.name
        for b in sorted(comp.boxes):
            _check_identifier(result, comp.name, b, "box")
            if b in box_owner:
                result.add_error(comp.name, b, "shared-box", f"also in {box_owner[b]}")
            else:
                box_owner[b] = comp.name
        for a in sorted(comp.actions):
            _check_identifier(result, comp.name, a, "action")

    for ident in sorted(set(node_owner) & set(box_owner)):
        result.add_error(node_owner[ident], ident, "node-box-clash")

    for comp in m.components:
        _check_component(m, comp, result, tolerance)

    return result


def _check_component(m: Rmdp, comp, result: ValidationResult, tolerance: float):
    name = comp.name
    if len(set(comp.entries)) != len(comp.entries):
        result.add_error(name, "", "duplicate-entry")
    if len(set(comp.exits)) != len(comp.exits):
        result.add_error(name, "", "duplicate-exit")
    for n in sorted(set(comp.entries) & set(comp.exits)):
        result.add_error(name, n, "entry-exit-overlap")

    for box, target in sorted(comp.boxes.items()):
        if not m.has_component(target):
            result.add_error(name, box, "unknown-component", f"box targets {target!r}")

    def callee_of(box: str):
        target = comp.boxes.get(box)
        if target is None or not m.has_component(target):
            return None
        return m.component(target)

    for (src, action), row in sorted(comp.transitions.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])):
        where = str(src)
        if action not in comp.actions:
            result.add_error(name, where, "undeclared-action", action)

        # --- SOURCE DOMAIN: (N \ Ex) u Return ---
        if src.kind == NODE:
            if src.node not in comp.nodes:
                result.add_error(name, where, "unknown-vertex")
            elif src.node in comp.exits:
                result.add_error(name, where, "source-in-exit")
        elif src.kind == CALL:
            result.add_error(name, where, "source-is-call-port")
        elif src.kind == RETURN:
            if src.box not in comp.boxes:
                result.add_error(name, where, "unknown-box")
            else:
                callee = callee_of(src.box)
                if callee is not None and src.node not in callee.exits:
                    result.add_error(name, where, "return-port-not-exit")
        else:
            result.add_error(name, where, "unknown-vertex-kind")

        # --- DESTINATION DOMAIN: (N \ En) u Call ---
        for dst, _ in row:
            target = str(dst)
            if dst.kind == NODE:
                if dst.node not in comp.nodes:
                    result.add_error(name, where, "unknown-vertex", f"destination {target}")
                elif dst.node in comp.entries:
                    result.add_error(name, where, "destination-is-entry", target)
            elif dst.kind == CALL:
                if dst.box not in comp.boxes:
                    result.add_error(name, where, "unknown-box", f"destination {target}")
                else:
                    callee = callee_of(dst.box)
                    if callee is not None and dst.node not in callee.entries:
                        result.add_error(name, where, "call-port-not-entry", target)
            else:
                result.add_error(name, where, "destination-is-return-port", target)

        # --- PROBABILITY MASS ---
        if not row:
            result.add_error(name, where, "empty-distribution", action)
            continue
        probabilities = [p for _, p in row]
        if any(not (0.0 <= p <= 1.0) for p in probabilities):
            result.add_error(name, where, "probability-range", action)
        total = math.fsum(probabilities)
        if abs(total - 1.0) > tolerance:
            result.add_error(name, where, "non-normalized", f"{action} sums to {total!r}")

    for (src, action), reward in sorted(comp.rewards.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])):
        if (src, action) not in comp.transitions:
            result.add_error(name, str(src), "reward-without-transition", action)
        if not math.isfinite(reward):
            result.add_error(name, str(src), "non-finite-reward", action)


def validate(m: Rmdp) -> List[Diagnostic]:
    """Return every diagnostic; empty list iff the model is well formed."""
    return check_model(m).errors


def ensure_valid(m: Rmdp) -> Rmdp:
    """Raise ModelInvalid listing all diagnostics, else return the model."""
    check_model(m).raise_if_invalid()
    return m


# ============================================================
# STRUCTURAL QUERIES
# ============================================================


def diameter(m: Rmdp) -> float:
    """r_max: largest absolute one-step reward over all rows."""
    best = 0.0
    for comp in m.components:
        for key in comp.transitions:
            best = max(best, abs(comp.rewards.get(key, 0.0)))
    return best


def is_single_exit(m: Rmdp) -> bool:
    """True iff every component has exactly one exit."""
    return all(len(comp.exits) == 1 for comp in m.components)


def called_components(m: Rmdp) -> Set[str]:
    return {target for comp in m.components for target in comp.boxes.values()}


def require_single_exit_callees(m: Rmdp, operation: str) -> None:
    """
    Solvers built on the 1-exit equation system only need every *invoked*
    component to have one exit; exits of never-invoked components all
    terminate with value 0.
    """
    offenders = [
        name for name in sorted(called_components(m))
        if m.has_component(name) and len(m.component(name).exits) != 1
    ]
    if offenders:
        raise NotSingleExit(
            f"{operation} needs a 1-exit model; components with other exit counts: "
            + ", ".join(offenders)
        )


def is_deterministic(m: Rmdp) -> bool:
    """Every row is a point mass with a single outcome."""
    return all(
        len(row) == 1 for comp in m.components for row in comp.transitions.values()
    )


# ============================================================
# PDA VALIDATION
# ============================================================


def check_pda(pda: Pda) -> ValidationResult:
    result = ValidationResult()
    states = set(pda.states)
    if pda.initial not in states:
        result.add_error("pda", pda.initial, "unknown-initial-state")
    for s in sorted(pda.accepting - states):
        result.add_error("pda", s, "unknown-accepting-state")
    if pda.reject in states:
        result.add_error("pda", pda.reject, "reject-sink-declared-as-state")
    if pda.special not in pda.inputs:
        result.add_error("pda", pda.special, "special-input-missing")
    for ident in list(pda.states) + list(pda.inputs) + list(pda.stack_symbols):
        _check_identifier(result, "pda", ident, "pda", reserved=frozenset())

    for (state, symbol, top), move in sorted(
        pda.transitions.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2] or "")
    ):
        where = f"{state}/{symbol}/{top or '-'}"
        if state not in states:
            result.add_error("pda", where, "unknown-state")
        if symbol not in pda.inputs:
            result.add_error("pda", where, "unknown-input")
        if top is not None and top not in pda.stack_symbols:
            result.add_error("pda", where, "unknown-stack-symbol")
        if move.target not in states and move.target != pda.reject:
            result.add_error("pda", where, "unknown-target")
        if move.op == PUSH and move.symbol not in pda.stack_symbols:
            result.add_error("pda", where, "unknown-push-symbol")
        if move.op == POP and top is None:
            result.add_error("pda", where, "pop-on-empty-stack")
    return result


def ensure_valid_pda(pda: Pda) -> Pda:
    check_pda(pda).raise_if_invalid(PdaInvalid)
    return pda
