from rmdp.models.rmdp import (
    CALL,
    NODE,
    RETURN,
    Component,
    Rmdp,
    Vertex,
    call_port,
    node,
    return_port,
    vertex_sort_key,
)
from rmdp.models.configuration import (
    NOOP_ACTION,
    Configuration,
    EnteredBox,
    ExitedBox,
    Internal,
    Step,
    StepOutcome,
    Terminated,
    Trajectory,
    stack_height,
)
from rmdp.models.pda import POP, PUSH, STAY, Pda, PdaMove

__all__ = [
    "CALL",
    "NODE",
    "RETURN",
    "Component",
    "Rmdp",
    "Vertex",
    "call_port",
    "node",
    "return_port",
    "vertex_sort_key",
    "NOOP_ACTION",
    "Configuration",
    "EnteredBox",
    "ExitedBox",
    "Internal",
    "Step",
    "StepOutcome",
    "Terminated",
    "Trajectory",
    "stack_height",
    "POP",
    "PUSH",
    "STAY",
    "Pda",
    "PdaMove",
]
