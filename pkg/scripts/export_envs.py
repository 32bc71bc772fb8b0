#!/usr/bin/env python3
"""
Environment Export Script

Usage:
    python scripts/export_envs.py [output_dir]

Writes, for every built-in environment:
    - <name>.rmdp   the model in canonical text form
    - <name>.json   its EnvSpec (parameters, start, training settings)

Also writes the palindrome automaton as palindrome.pda. Default output directory is
rmdp/data/envs.
"""

import logging
import os
import sys
from pathlib import Path

# Add project root to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from rmdp.config import DATA_DIR, LOG_LEVEL
from rmdp.services.envs import build_env, env_specs, palindrome_pda
from rmdp.services.reports import write_json
from rmdp.services.text_format import save_model, serialize_pda

logger = logging.getLogger(__name__)


def export_all(folder: Path) -> int:
    """Export every environment; returns how many were written."""
    count = 0
    for name in sorted(env_specs()):
        m, spec = build_env(name)
        save_model(m, folder / f"{name}.rmdp")
        write_json(spec.to_json(), folder / f"{name}.json")
        print(f"  {name:12} {len(m.components):3} components")
        count += 1
    (folder / "palindrome.pda").write_text(serialize_pda(palindrome_pda()), encoding="utf-8")
    return count


def main():
    logging.basicConfig(level=LOG_LEVEL)
    folder = Path(sys.argv[1]) if len(sys.argv) > 1 else DATA_DIR / "envs"
    folder.mkdir(parents=True, exist_ok=True)
    print(f"Exporting environments to {folder}")
    count = export_all(folder)
    print(f"Done: {count} environments")


if __name__ == "__main__":
    main()
