"""
Text Formats

Handles:
- `.rmdp` model documents (parse / serialize, canonical ordering)
- `.pda` automaton documents (parse / serialize)
- Line-located syntax errors, collected for the whole document

Model document:

    rmdp 1
    component T
      entries u1
      exits u2
      nodes u9
      actions d m
      box b1 : S
      u1 --d, r=-0.5--> b1.u3
      u1 --m, p=1.0, r=-8--> u2
    end

`b.n` on the left of an arrow is a return port, on the right a call port.
Probability omitted means 1.0, reward omitted means 0.0. `#` starts a comment.
"""

import logging
import re
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from rmdp.errors import LineError, ModelSyntaxError
from rmdp.models.pda import POP, PUSH, STAY, Pda, PdaMove
from rmdp.models.rmdp import Component, Rmdp, Vertex, call_port, node, return_port, vertex_sort_key
from rmdp.services.validators import ensure_valid, ensure_valid_pda

logger = logging.getLogger(__name__)

MODEL_HEADER = "rmdp 1"
PDA_HEADER = "pda 1"

_ID = r"[A-Za-z0-9_]+"
_ID_RE = re.compile(rf"^{_ID}$")
_VERTEX_RE = re.compile(rf"^({_ID})(?:\.({_ID}))?$")
_BOX_RE = re.compile(rf"^box\s+({_ID})\s*:\s*({_ID})$")
_PDA_RULE_RE = re.compile(
    rf"^({_ID})\s*--\s*({_ID})\s*,\s*({_ID}|\*|-)\s*-->\s*({_ID})"
    rf"(?:\s+(push)\s+({_ID})|\s+(pop))?$"
)


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].strip()


def _content_lines(text: str) -> List[Tuple[int, str]]:
    """Non-empty lines with comments removed, paired with 1-based line numbers."""
    lines = []
    for number, raw in enumerate(text.splitlines(), start=1):
        stripped = _strip_comment(raw)
        if stripped:
            lines.append((number, stripped))
    return lines


def _ids(words: List[str]) -> Optional[List[str]]:
    if all(_ID_RE.match(w) for w in words):
        return words
    return None


def format_float(value: float) -> str:
    """Shortest decimal that round-trips to the same binary float."""
    return repr(float(value))


# ============================================================
# MODEL DOCUMENTS
# ============================================================


class _ComponentDraft:
    def __init__(self, name: str, line: int):
        self.name = name
        self.line = line
        self.entries: List[str] = []
        self.exits: List[str] = []
        self.nodes: List[str] = []
        self.actions: List[str] = []
        self.boxes: Dict[str, str] = {}
        self.rows: Dict[Tuple[Vertex, str], List[Tuple[Vertex, float]]] = {}
        self.rewards: Dict[Tuple[Vertex, str], Tuple[float, int]] = {}

    def build(self) -> Component:
        return Component(
            name=self.name,
            entries=tuple(self.entries),
            exits=tuple(self.exits),
            nodes=frozenset(self.nodes),
            actions=frozenset(self.actions),
            boxes=self.boxes,
            transitions={key: tuple(row) for key, row in self.rows.items()},
            rewards={key: reward for key, (reward, _) in self.rewards.items()},
        )


def _parse_transition(line: str) -> Union[Tuple[Vertex, str, float, Optional[float], Vertex], str]:
    """Parse `src --act[, p=..][, r=..]--> dst`; returns a tuple or the expected-text on failure."""
    parts = line.split("-->")
    if len(parts) != 2:
        return "transition 'src --action--> dst'"
    left, right = parts[0].rstrip(), parts[1].strip()
    if "--" not in left:
        return "'--' before the action"
    src_text, label = left.split("--", 1)
    src_match = _VERTEX_RE.match(src_text.strip())
    dst_match = _VERTEX_RE.match(right)
    if not src_match:
        return "source vertex id"
    if not dst_match:
        return "destination vertex id"

    fields = [f.strip() for f in label.split(",")]
    action = fields[0]
    if not _ID_RE.match(action):
        return "action id"
    probability = 1.0
    reward: Optional[float] = None
    seen = set()
    for item in fields[1:]:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in ("p", "r") or key in seen:
            return "attribute 'p=<prob>' or 'r=<reward>'"
        seen.add(key)
        try:
            number = float(value.strip())
        except ValueError:
            return f"number after '{key}='"
        if key == "p":
            probability = number
        else:
            reward = number

    src_box_or_node, src_port = src_match.groups()
    src = return_port(src_box_or_node, src_port) if src_port else node(src_box_or_node)
    dst_box_or_node, dst_port = dst_match.groups()
    dst = call_port(dst_box_or_node, dst_port) if dst_port else node(dst_box_or_node)
    return src, action, probability, reward, dst


def parse_model_unchecked(text: str) -> Rmdp:
    """
    Parse a model document without running structural validation.

    Raises:
        ModelSyntaxError: with one LineError per bad line
    """
    errors: List[LineError] = []
    lines = _content_lines(text)
    if not lines:
        raise ModelSyntaxError([LineError(1, f"header '{MODEL_HEADER}'")])

    first_line, header = lines[0]
    if " ".join(header.split()) != MODEL_HEADER:
        errors.append(LineError(first_line, f"header '{MODEL_HEADER}'"))

    components: List[Component] = []
    draft: Optional[_ComponentDraft] = None
    for number, line in lines[1:]:
        words = line.split()
        keyword = words[0]

        if keyword == "component":
            if draft is not None:
                errors.append(LineError(number, f"'end' closing component {draft.name}"))
                components.append(draft.build())
                draft = None
            if len(words) != 2 or not _ID_RE.match(words[1]):
                errors.append(LineError(number, "'component <id>'"))
                continue
            draft = _ComponentDraft(words[1], number)
            continue

        if draft is None:
            errors.append(LineError(number, "'component <id>'"))
            continue

        if keyword == "end" and len(words) == 1:
            components.append(draft.build())
            draft = None
        elif keyword in ("entries", "exits", "nodes", "actions") and "-->" not in line:
            ids = _ids(words[1:])
            if ids is None:
                errors.append(LineError(number, f"ids after '{keyword}'"))
                continue
            getattr(draft, keyword).extend(ids)
        elif keyword == "box" and "-->" not in line:
            match = _BOX_RE.match(line)
            if not match:
                errors.append(LineError(number, "'box <id> : <component>'"))
                continue
            draft.boxes[match.group(1)] = match.group(2)
        else:
            parsed = _parse_transition(line)
            if isinstance(parsed, str):
                errors.append(LineError(number, parsed))
                continue
            src, action, probability, reward, dst = parsed
            key = (src, action)
            draft.rows.setdefault(key, []).append((dst, probability))
            if reward is not None:
                previous = draft.rewards.get(key)
                if previous is not None and previous[0] != reward:
                    errors.append(
                        LineError(number, f"reward {previous[0]!r} as on line {previous[1]}")
                    )
                    continue
                draft.rewards.setdefault(key, (reward, number))

    if draft is not None:
        last_line = lines[-1][0]
        errors.append(LineError(last_line, f"'end' closing component {draft.name}"))

    if errors:
        raise ModelSyntaxError(errors)
    return Rmdp(tuple(components))


def parse_model(text: str) -> Rmdp:
    """
    Parse and validate a model document.

    Raises:
        ModelSyntaxError: line-located syntax problems
        ModelInvalid: structural diagnostics of the parsed model
    """
    return ensure_valid(parse_model_unchecked(text))


def load_model(path: Union[str, Path]) -> Rmdp:
    text = Path(path).read_text(encoding="utf-8")
    model = parse_model(text)
    logger.info(f"Loaded model {path} with {len(model.components)} components")
    return model


def serialize_model(m: Rmdp) -> str:
    """Canonical text: components in id order, vertices lexicographic."""
    out = [MODEL_HEADER]
    for comp in m.components:
        out.append("")
        out.append(f"component {comp.name}")
        if comp.entries:
            out.append("  entries " + " ".join(comp.entries))
        if comp.exits:
            out.append("  exits " + " ".join(comp.exits))
        inner = sorted(comp.nodes - set(comp.entries) - set(comp.exits))
        if inner:
            out.append("  nodes " + " ".join(inner))
        if comp.actions:
            out.append("  actions " + " ".join(sorted(comp.actions)))
        for box in sorted(comp.boxes):
            out.append(f"  box {box} : {comp.boxes[box]}")
        keys = sorted(comp.transitions, key=lambda k: (vertex_sort_key(k[0]), k[1]))
        for src, action in keys:
            reward = comp.rewards.get((src, action), 0.0)
            for dst, probability in comp.transitions[(src, action)]:
                attrs = [action]
                if probability != 1.0:
                    attrs.append(f"p={format_float(probability)}")
                if reward != 0.0:
                    attrs.append(f"r={format_float(reward)}")
                out.append(f"  {src} --{', '.join(attrs)}--> {dst}")
        out.append("end")
    return "\n".join(out) + "\n"


def save_model(m: Rmdp, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_model(m), encoding="utf-8")
    logger.info(f"Wrote model {path}")
    return path


# ============================================================
# PDA DOCUMENTS
# ============================================================

_PDA_LIST_DIRECTIVES = {"states": "states", "inputs": "inputs", "stack": "stack_symbols", "accepting": "accepting"}
_PDA_SINGLE_DIRECTIVES = ("initial", "special", "reject")


def parse_pda(text: str) -> Pda:
    """
    Parse a PDA document.

    Rule lines: `<state> --<input>, <top>--> <state> [push <sym> | pop]` where
    top is a stack symbol, `-` for the empty stack or `*` for any top
    (expanded over all symbols and the empty stack).
    """
    errors: List[LineError] = []
    lines = _content_lines(text)
    if not lines:
        raise ModelSyntaxError([LineError(1, f"header '{PDA_HEADER}'")])
    first_line, header = lines[0]
    if " ".join(header.split()) != PDA_HEADER:
        errors.append(LineError(first_line, f"header '{PDA_HEADER}'"))

    lists: Dict[str, List[str]] = {key: [] for key in _PDA_LIST_DIRECTIVES.values()}
    singles: Dict[str, str] = {}
    rules: List[Tuple[int, str, str, str, PdaMove]] = []
    for number, line in lines[1:]:
        words = line.split()
        keyword = words[0]
        if keyword in _PDA_LIST_DIRECTIVES and "-->" not in line:
            ids = _ids(words[1:])
            if ids is None:
                errors.append(LineError(number, f"ids after '{keyword}'"))
                continue
            lists[_PDA_LIST_DIRECTIVES[keyword]].extend(ids)
        elif keyword in _PDA_SINGLE_DIRECTIVES and "-->" not in line:
            if len(words) != 2 or not _ID_RE.match(words[1]):
                errors.append(LineError(number, f"'{keyword} <id>'"))
                continue
            singles[keyword] = words[1]
        else:
            match = _PDA_RULE_RE.match(line)
            if not match:
                errors.append(LineError(number, "rule '<state> --<input>, <top>--> <state> [push <sym>|pop]'"))
                continue
            state, symbol, top, target, push, push_symbol, pop = match.groups()
            if push:
                move = PdaMove(target, PUSH, push_symbol)
            elif pop:
                move = PdaMove(target, POP)
            else:
                move = PdaMove(target, STAY)
            rules.append((number, state, symbol, top, move))

    if "initial" not in singles:
        errors.append(LineError(lines[-1][0], "'initial <state>' directive"))

    transitions: Dict[Tuple[str, str, Optional[str]], PdaMove] = {}
    tops_any: List[Optional[str]] = list(lists["stack_symbols"]) + [None]
    for number, state, symbol, top, move in rules:
        if top == "*":
            tops = tops_any
        elif top == "-":
            tops = [None]
        else:
            tops = [top]
        for t in tops:
            key = (state, symbol, t)
            if key in transitions:
                errors.append(LineError(number, f"a single rule for {state}/{symbol}/{t or '-'}"))
                break
            transitions[key] = move

    if errors:
        raise ModelSyntaxError(errors)

    pda = Pda(
        states=tuple(lists["states"]),
        inputs=tuple(lists["inputs"]),
        stack_symbols=tuple(lists["stack_symbols"]),
        initial=singles["initial"],
        accepting=frozenset(lists["accepting"]),
        transitions=transitions,
        special=singles.get("special", "special"),
        reject=singles.get("reject", "rej"),
    )
    return ensure_valid_pda(pda)


def load_pda(path: Union[str, Path]) -> Pda:
    return parse_pda(Path(path).read_text(encoding="utf-8"))


def serialize_pda(pda: Pda) -> str:
    out = [PDA_HEADER]
    out.append("states " + " ".join(pda.states))
    out.append(f"initial {pda.initial}")
    if pda.accepting:
        out.append("accepting " + " ".join(sorted(pda.accepting)))
    out.append("inputs " + " ".join(pda.inputs))
    if pda.stack_symbols:
        out.append("stack " + " ".join(pda.stack_symbols))
    out.append(f"special {pda.special}")
    out.append(f"reject {pda.reject}")
    keys = sorted(pda.transitions, key=lambda k: (k[0], k[1], k[2] or ""))
    for state, symbol, top in keys:
        move = pda.transitions[(state, symbol, top)]
        line = f"{state} --{symbol}, {top or '-'}--> {move.target}"
        if move.op == PUSH:
            line += f" push {move.symbol}"
        elif move.op == POP:
            line += " pop"
        out.append(line)
    return "\n".join(out) + "\n"


__all__ = [
    "parse_model",
    "parse_model_unchecked",
    "serialize_model",
    "load_model",
    "save_model",
    "parse_pda",
    "serialize_pda",
    "load_pda",
    "format_float",
]
