"""
Domain errors.

Every error is a ValueError subclass carrying a human-readable message, so
callers that only care about "bad input" can catch ValueError.
"""

from typing import List, Sequence


class RmdpError(ValueError):
    """Base class for all recursive-MDP domain errors."""


class ModelInvalid(RmdpError):
    """A model violates one or more structural rules."""

    def __init__(self, diagnostics: Sequence):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


class LineError:
    """One syntax problem at a specific line of a text document."""

    def __init__(self, line: int, expected: str):
        self.line = line
        self.expected = expected

    def __repr__(self) -> str:
        return f"LineError(line={self.line}, expected={self.expected!r})"

    def __str__(self) -> str:
        return f"line {self.line}: expected {self.expected}"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, LineError)
            and self.line == other.line
            and self.expected == other.expected
        )


class ModelSyntaxError(RmdpError):
    """A text document could not be parsed; carries every line error found."""

    def __init__(self, errors: List[LineError]):
        self.errors = list(errors)
        super().__init__("; ".join(str(e) for e in self.errors))


class UnknownComponent(RmdpError):
    pass


class UnknownEntry(RmdpError):
    pass


class UnknownBox(RmdpError):
    pass


class IllegalAction(RmdpError):
    pass


class SteppedAfterTermination(RmdpError):
    pass


class NotSingleExit(RmdpError):
    pass


class SingularSystem(RmdpError):
    """The linear system of a strategy has no unique solution (improper strategy)."""


class ImproperModel(RmdpError):
    pass


class CapUnstable(RmdpError):
    pass


class NondeterministicModel(RmdpError):
    pass


class FlatModelRequired(RmdpError):
    pass


class PdaInvalid(RmdpError):
    pass


class UsageError(ValueError):
    """Bad command-line input or run configuration (not a model problem)."""
