"""
Settings read from the environment (and an optional .env file).

Run configuration files for the CLI live in rmdp/data/configs and are parsed
by rmdp.services.run_config.
"""

import os
from pathlib import Path

import numpy as np
from dotenv import load_dotenv

load_dotenv()

PACKAGE_DIR = Path(__file__).resolve().parent
DATA_DIR = PACKAGE_DIR / "data"

RNG_ALGORITHM = os.getenv("RMDP_RNG", "philox").strip().lower()
LOG_LEVEL = os.getenv("RMDP_LOG_LEVEL", "INFO").upper()
PROBABILITY_TOLERANCE = float(os.getenv("RMDP_PROB_TOLERANCE", "1e-12"))
DEFAULT_QUANTIZATION = float(os.getenv("RMDP_QUANTIZATION", "0.001"))
DEFAULT_STEP_CAP = int(os.getenv("RMDP_STEP_CAP", "1000"))
EVAL_EPISODES = int(os.getenv("RMDP_EVAL_EPISODES", "100"))
EVAL_POINTS = int(os.getenv("RMDP_EVAL_POINTS", "200"))
MAX_WORKERS = int(os.getenv("RMDP_MAX_WORKERS", "4"))
VI_MAX_ITERATIONS = int(os.getenv("RMDP_VI_MAX_ITERATIONS", "20000"))

_BIT_GENERATORS = {
    "philox": np.random.Philox,
    "pcg64": np.random.PCG64,
}


def make_rng(seed) -> np.random.Generator:
    """
    Build the random source used for all sampling.

    Args:
        seed: int, sequence of ints, or numpy SeedSequence

    Returns:
        numpy Generator over the configured bit generator (RMDP_RNG)
    """
    try:
        bit_generator = _BIT_GENERATORS[RNG_ALGORITHM]
    except KeyError:
        raise ValueError(
            f"RMDP_RNG must be one of {sorted(_BIT_GENERATORS)}, got {RNG_ALGORITHM!r}"
        )
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(bit_generator(seed))


def spawn_streams(seed: int):
    """Return (training rng, evaluation rng) as two independent streams of one seed."""
    return make_rng(np.random.SeedSequence([seed, 0])), make_rng(
        np.random.SeedSequence([seed, 1])
    )
