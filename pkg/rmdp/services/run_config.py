"""
Run Configuration

Handles:
- KEY=VALUE run files (read with python-dotenv) for the CLI
- Conversion into Hyperparameters and solver settings
- Algorithm / model compatibility checks before a run starts

Example (rmdp/data/configs/cloud.env):

    MODEL=cloud
    ALGORITHM=rql
    SEEDS=0,1,2
    LEARNING_RATE=0.02
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union

from dotenv import dotenv_values

from rmdp import config
from rmdp.errors import NondeterministicModel, UsageError
from rmdp.models.rmdp import Rmdp
from rmdp.services.recursive_q import TRAINERS, Hyperparameters
from rmdp.services.validators import is_deterministic, require_single_exit_callees

logger = logging.getLogger(__name__)

SOLVERS = ("solve-1exit", "solve-truncated", "solve-deterministic", "pac-1exit")
ALGORITHMS = tuple(TRAINERS) + SOLVERS

# config key -> (Hyperparameters field, parser)
_HYPER_KEYS = {
    "LEARNING_RATE": ("learning_rate", float),
    "LEARNING_RATE_POWER": ("learning_rate_power", float),
    "EPSILON": ("epsilon", float),
    "EPSILON_FINAL": ("epsilon_final", float),
    "EPSILON_DECAY_STEPS": ("epsilon_decay_steps", int),
    "QUANTIZATION": ("quantization", float),
    "STEP_CAP": ("step_cap", int),
    "TOTAL_STEPS": ("total_steps", int),
    "DISCOUNT": ("discount", float),
    "INITIAL_VALUE": ("initial_value", float),
    "EVAL_EPISODES": ("eval_episodes", int),
    "EVAL_POINTS": ("eval_points", int),
}
_RUN_KEYS = {
    "MODEL",
    "ALGORITHM",
    "SEEDS",
    "OUTPUT_DIR",
    "START",
    "EXPLORING_STARTS",
    "STACK_BOUND",
    "TOLERANCE",
    "DEPTH_CAP",
    "PAC_EPS",
    "PAC_DELTA",
    "PAC_K",
}
KNOWN_KEYS = frozenset(_RUN_KEYS | set(_HYPER_KEYS))


@dataclass(frozen=True)
class RunConfig:
    """Everything one CLI run needs besides the model itself."""

    model: str
    algorithm: str
    hyperparameters: Hyperparameters = field(default_factory=Hyperparameters)
    seeds: Tuple[int, ...] = (0,)
    output_dir: Path = Path("runs")
    stack_bound: int = 30
    tolerance: float = 1e-10
    depth_cap: int = 64
    pac_eps: float = 0.2
    pac_delta: float = 0.05
    pac_k: Optional[float] = None

    @property
    def is_training(self) -> bool:
        return self.algorithm in TRAINERS

    def with_overrides(self, **changes) -> "RunConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


def _parse_bool(key: str, text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"{key}: expected a boolean, got {text!r}")


def parse_seeds(text: str) -> Tuple[int, ...]:
    """`0,1,2` or a range `0-9`."""
    text = text.strip()
    if not text:
        return ()
    try:
        if "-" in text and "," not in text and not text.startswith("-"):
            low, high = (int(part) for part in text.split("-", 1))
            return tuple(range(low, high + 1))
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise UsageError(f"SEEDS: expected integers like '0,1,2' or '0-9', got {text!r}")


def _parse_start(text: str) -> Tuple[str, str]:
    parts = text.split(":")
    if len(parts) != 2 or not all(parts):
        raise UsageError(f"START: expected 'component:entry', got {text!r}")
    return parts[0].strip(), parts[1].strip()


def run_config_from_mapping(values: Mapping[str, Optional[str]], source: str = "<config>") -> RunConfig:
    """
    Build a RunConfig from KEY=VALUE pairs.

    Raises:
        UsageError: unknown keys, missing MODEL/ALGORITHM, unparsable values
    """
    unknown = sorted(set(values) - KNOWN_KEYS)
    if unknown:
        raise UsageError(f"{source}: unknown keys {', '.join(unknown)}")
    values = {k: (v or "").strip() for k, v in values.items()}
    for required in ("MODEL", "ALGORITHM"):
        if not values.get(required):
            raise UsageError(f"{source}: {required} is required")
    algorithm = values["ALGORITHM"]
    if algorithm not in ALGORITHMS:
        raise UsageError(f"{source}: ALGORITHM must be one of {', '.join(ALGORITHMS)}")

    hyper: Dict[str, object] = {}
    try:
        for key, (name, parse) in _HYPER_KEYS.items():
            if values.get(key):
                hyper[name] = parse(values[key])
        if values.get("START"):
            hyper["start"] = _parse_start(values["START"])
        if values.get("EXPLORING_STARTS"):
            hyper["exploring_starts"] = _parse_bool("EXPLORING_STARTS", values["EXPLORING_STARTS"])
        hyperparameters = Hyperparameters(**hyper)

        run = RunConfig(
            model=values["MODEL"],
            algorithm=algorithm,
            hyperparameters=hyperparameters,
            seeds=parse_seeds(values["SEEDS"]) if "SEEDS" in values else (0,),
            output_dir=Path(values.get("OUTPUT_DIR") or "runs"),
            stack_bound=int(values.get("STACK_BOUND") or 30),
            tolerance=float(values.get("TOLERANCE") or 1e-10),
            depth_cap=int(values.get("DEPTH_CAP") or 64),
            pac_eps=float(values.get("PAC_EPS") or 0.2),
            pac_delta=float(values.get("PAC_DELTA") or 0.05),
            pac_k=float(values["PAC_K"]) if values.get("PAC_K") else None,
        )
    except UsageError:
        raise
    except ValueError as e:
        raise UsageError(f"{source}: {e}")
    return run


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Read a run file; raises UsageError (missing file included)."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"run config {path} does not exist")
    run = run_config_from_mapping(dotenv_values(path), str(path))
    logger.info(f"Loaded run config {path}: {run.algorithm} on {run.model}, seeds {list(run.seeds)}")
    return run


def bundled_config(name: str) -> Optional[Path]:
    """The shipped run file of a built-in environment, if any."""
    path = config.DATA_DIR / "configs" / f"{name}.env"
    return path if path.is_file() else None


def check_compatibility(run: RunConfig, m: Rmdp) -> None:
    """
    Refuse algorithm/model pairs that cannot work before anything runs.

    Raises:
        UsageError: training without seeds
        NotSingleExit: rql1 / solve-1exit / pac-1exit on a model with multi-exit callees
        NondeterministicModel: solve-deterministic on a stochastic model
    """
    if run.is_training and not run.seeds:
        raise UsageError("training needs at least one seed")
    if run.algorithm in ("rql1", "solve-1exit", "pac-1exit"):
        require_single_exit_callees(m, run.algorithm)
    if run.algorithm == "solve-deterministic" and not is_deterministic(m):
        raise NondeterministicModel("solve-deterministic needs every row to have one outcome")
