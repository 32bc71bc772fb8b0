"""Centralized Jinja2 template configuration for text exports."""
from typing import Mapping

from jinja2 import Environment, FileSystemLoader, StrictUndefined

from rmdp.config import PACKAGE_DIR


def lp_number(value: float) -> str:
    """Jinja filter rendering a coefficient or bound in LP text.

    Usage in templates:
        {{ constraint.rhs | lp_number }}
    """
    value = float(value)
    if value == 0.0:
        return "0"
    if value.is_integer():
        return str(int(value))
    return repr(value)


def lp_terms(coefficients: Mapping[str, float]) -> str:
    """Jinja filter rendering a linear expression, e.g. ``t(a) - 0.4 t(b.en)``.

    Unit coefficients are written without a number; zero terms are dropped.
    """
    parts = []
    for name, coef in coefficients.items():
        if coef == 0.0:
            continue
        sign = "-" if coef < 0 else "+"
        magnitude = abs(coef)
        term = name if magnitude == 1.0 else f"{lp_number(magnitude)} {name}"
        if not parts:
            parts.append(term if sign == "+" else f"- {term}")
        else:
            parts.append(f"{sign} {term}")
    return " ".join(parts) if parts else "0"


def create_environment() -> Environment:
    """Create the Jinja2 environment with custom filters."""
    env = Environment(
        loader=FileSystemLoader(str(PACKAGE_DIR / "templates")),
        undefined=StrictUndefined,
        keep_trailing_newline=True,
        trim_blocks=True,
        lstrip_blocks=True,
    )
    env.filters["lp_number"] = lp_number
    env.filters["lp_terms"] = lp_terms
    return env


# Singleton environment - import this where templates are rendered
templates = create_environment()
