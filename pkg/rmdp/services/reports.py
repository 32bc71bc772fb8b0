"""
Run Reports

Handles:
- Learning-curve CSV per seed (step,mean_return,p10,p90)
- Aggregate CSV over seeds (mean and order-statistic percentiles per step)
- Q-table dumps (tab-separated, sorted)
- JSON reports (schema_version 1) for solver and training runs

Floats are written with format_float so repeated runs give identical bytes.
"""

import csv
import io
import json
import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from rmdp.models.rmdp import Vertex, vertex_sort_key
from rmdp.services.recursive_q import LearningCurve, QTable, percentile
from rmdp.services.text_format import format_float

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CURVE_HEADER = ["step", "mean_return", "p10", "p90"]
AGGREGATE_HEADER = ["step", "mean_return", "p10", "p90", "runs"]
PERCENTILE_RULE = (
    "# p10/p90: nearest-rank order statistics of the per-seed mean_return at each step "
    "(numpy method 'inverted_cdf', no interpolation); steps missing from any seed are dropped"
)


def _write_text(path: Union[str, Path], text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


# ============================================================
# CURVES
# ============================================================


def curve_csv(curve: LearningCurve) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CURVE_HEADER)
    for point in curve.points:
        writer.writerow(
            [point.step, format_float(point.mean_return), format_float(point.p10), format_float(point.p90)]
        )
    return buffer.getvalue()


def write_curve_csv(curve: LearningCurve, path: Union[str, Path]) -> Path:
    return _write_text(path, curve_csv(curve))


def aggregate_curves(curves: Sequence[LearningCurve]) -> List[Tuple[int, float, float, float, int]]:
    """
    Combine per-seed curves at the steps every curve shares.

    Returns:
        Rows (step, mean, p10, p90, runs) in step order
    """
    if not curves:
        return []
    by_step: List[Dict[int, float]] = [
        {point.step: point.mean_return for point in curve.points} for curve in curves
    ]
    shared = sorted(set.intersection(*(set(d) for d in by_step)))
    rows = []
    for s in shared:
        values = [d[s] for d in by_step]
        rows.append(
            (s, float(np.mean(values)), percentile(values, 10), percentile(values, 90), len(values))
        )
    return rows


def aggregate_csv(curves: Sequence[LearningCurve]) -> str:
    buffer = io.StringIO()
    buffer.write(PERCENTILE_RULE + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(AGGREGATE_HEADER)
    for s, mean, p10, p90, runs in aggregate_curves(curves):
        writer.writerow([s, format_float(mean), format_float(p10), format_float(p90), runs])
    return buffer.getvalue()


def write_aggregate_csv(curves: Sequence[LearningCurve], path: Union[str, Path]) -> Path:
    return _write_text(path, aggregate_csv(curves))


def read_curve_csv(path: Union[str, Path]) -> List[Dict[str, float]]:
    """Rows of a curve or aggregate CSV (comment lines skipped)."""
    with open(path, encoding="utf-8", newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    reader = csv.DictReader(lines)
    return [{key: float(value) for key, value in row.items()} for row in reader]


# ============================================================
# Q-TABLES
# ============================================================


def dump_qtable(q: QTable) -> str:
    """vertex, exit-value vector, action, value, visits; one line per entry."""
    lines = ["vertex\texit_values\taction\tvalue\tvisits"]
    keys = sorted(q.entries, key=lambda k: (vertex_sort_key(k[0]), k[1], k[2]))
    for vertex, v, action in keys:
        vector = ",".join(format_float(x) for x in v)
        lines.append(
            "\t".join(
                [
                    str(vertex),
                    f"[{vector}]",
                    action,
                    format_float(q.entries[(vertex, v, action)]),
                    str(q.visits.get((vertex, v, action), 0)),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def write_qtable(q: QTable, path: Union[str, Path]) -> Path:
    return _write_text(path, dump_qtable(q))


# ============================================================
# JSON
# ============================================================


def vertex_map(values: Mapping[Vertex, object]) -> Dict[str, object]:
    """Vertex-keyed map as a JSON object, keys in canonical vertex order."""
    return {str(v): values[v] for v in sorted(values, key=vertex_sort_key)}


def report(kind: str, **fields) -> dict:
    document = {"schema_version": SCHEMA_VERSION, "kind": kind}
    document.update(fields)
    return document


def write_json(document: dict, path: Union[str, Path]) -> Path:
    return _write_text(path, json.dumps(document, indent=2, sort_keys=False) + "\n")


def training_summary(
    algorithm: str,
    model: str,
    results: Mapping[int, Optional[LearningCurve]],
    errors: Mapping[int, str],
) -> dict:
    """Per-seed final means, truncated-episode counts and failures."""
    seeds = []
    for seed in sorted(set(results) | set(errors)):
        curve = results.get(seed)
        entry = {"seed": seed}
        if curve is not None:
            entry.update(
                final_mean=curve.final_mean,
                episodes=curve.episodes,
                truncated_episodes=curve.truncated_episodes,
            )
        if seed in errors:
            entry["error"] = errors[seed]
        seeds.append(entry)
    finals = [s["final_mean"] for s in seeds if s.get("final_mean") is not None]
    return report(
        "train",
        algorithm=algorithm,
        model=model,
        seeds=seeds,
        mean_final=float(np.mean(finals)) if finals else None,
    )
