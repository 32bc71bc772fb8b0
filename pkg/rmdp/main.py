"""
Command-line front end.

Usage:
    python -m rmdp.main validate MODEL
    python -m rmdp.main solve MODEL_OR_CONFIG [--algorithm solve-truncated] [--output DIR]
    python -m rmdp.main train MODEL_OR_CONFIG [--algorithm rql] [--seeds 0-9] [--output DIR]
    python -m rmdp.main export-lp MODEL [--output FILE]
    python -m rmdp.main product MDP PDA [--output FILE]
    python -m rmdp.main export-env NAME [--output DIR]

MODEL is a `.rmdp` file, a built-in environment (cloud, spelunking,
palindrome) or `chain:N`. A `.env` argument is read as a run config.

Exit codes: 0 ok, 1 domain error, 2 IO or usage error.
"""

import argparse
import logging
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from rmdp import config
from rmdp.errors import ModelSyntaxError, RmdpError, UsageError
from rmdp.models.rmdp import Rmdp, node
from rmdp.services import reports
from rmdp.services.envs import build_env, env_specs
from rmdp.services.oracle import (
    lp_export_1exit,
    model_sampler,
    pac_learn_1exit,
    solve_1exit,
    solve_deterministic,
)
from rmdp.services.recursive_q import TRAINERS, LearningCurve, QTable
from rmdp.services.run_config import (
    ALGORITHMS,
    SOLVERS,
    RunConfig,
    bundled_config,
    check_compatibility,
    load_run_config,
    parse_seeds,
)
from rmdp.services.text_format import load_model, load_pda, parse_model_unchecked, save_model
from rmdp.services.transforms import ProductRewards, hierarchical_chain, pda_product
from rmdp.services.truncated import solve_truncated
from rmdp.services.validators import check_model

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2

_CHAIN_RE = re.compile(r"^chain:(\d+)$")


# ============================================================
# MODEL AND CONFIG RESOLUTION
# ============================================================


def resolve_model(name: str) -> Rmdp:
    """Load a model file, build a named environment or a `chain:N` model."""
    match = _CHAIN_RE.match(name)
    if match:
        return hierarchical_chain(int(match.group(1)))
    if name in env_specs():
        return build_env(name)[0]
    path = Path(name)
    if not path.is_file():
        raise UsageError(f"{name}: no such model file or built-in environment")
    return load_model(path)


def resolve_run(args, default_algorithm: str, allowed) -> RunConfig:
    """
    Run config from a `.env` file, the bundled file of an environment, or defaults.

    A file naming an algorithm of the other command (a trainer for `solve`,
    a solver for `train`) falls back to `default_algorithm` unless
    --algorithm is given.
    """
    target = args.target
    if target.endswith(".env"):
        run = load_run_config(target)
    elif bundled_config(target) is not None:
        run = load_run_config(bundled_config(target))
    else:
        run = RunConfig(model=target, algorithm=default_algorithm)
    seeds = parse_seeds(args.seeds) if getattr(args, "seeds", None) is not None else None
    algorithm = args.algorithm
    if algorithm is None and run.algorithm not in allowed:
        algorithm = default_algorithm
    run = run.with_overrides(
        algorithm=algorithm,
        seeds=seeds,
        output_dir=Path(args.output) if args.output else None,
    )
    if run.algorithm not in ALGORITHMS:
        raise UsageError(f"unknown algorithm {run.algorithm!r}")
    return run


def _start(run: RunConfig, m: Rmdp) -> Tuple[str, str]:
    if run.hyperparameters.start is not None:
        return run.hyperparameters.start
    first = m.components[0]
    return first.name, first.entries[0]


# ============================================================
# COMMANDS
# ============================================================


def cmd_validate(args) -> int:
    path = Path(args.model)
    if not path.is_file():
        raise UsageError(f"{path}: file not found")
    text = path.read_text(encoding="utf-8")
    try:
        m = parse_model_unchecked(text)
    except ModelSyntaxError as e:
        for error in e.errors:
            print(f"{path}:{error.line}: expected {error.expected}")
        return EXIT_DOMAIN
    result = check_model(m)
    for diagnostic in result.errors:
        print(f"{path}: {diagnostic}")
    for warning in result.warnings:
        print(f"{path}: warning: {warning}")
    if result.is_valid:
        print(f"{path}: ok ({len(m.components)} components)")
        return EXIT_OK
    return EXIT_DOMAIN


def _solve_document(run: RunConfig, m: Rmdp) -> dict:
    start = _start(run, m)
    discount = run.hyperparameters.discount
    if run.algorithm == "solve-truncated":
        values = solve_truncated(m, run.stack_bound, run.tolerance)
        return reports.report(
            "solve",
            algorithm=run.algorithm,
            model=run.model,
            stack_bound=run.stack_bound,
            tolerance=run.tolerance,
            start={"component": start[0], "entry": start[1]},
            value=values.value(start[0], node(start[1])),
            values={name: reports.vertex_map(values.root(name)) for name in m.names},
            strategy={name: reports.vertex_map(values.root_strategy(name)) for name in m.names},
        )
    if run.algorithm == "solve-1exit":
        solution = solve_1exit(m, discount)
        return reports.report(
            "solve",
            algorithm=run.algorithm,
            model=run.model,
            start={"component": start[0], "entry": start[1]},
            value=solution.entry_value(start[1]),
            values=reports.vertex_map(solution.values),
            strategy=reports.vertex_map(solution.strategy),
            residual=solution.residual,
            iterations=solution.iterations,
        )
    if run.algorithm == "solve-deterministic":
        values = solve_deterministic(m, run.depth_cap)
        return reports.report(
            "solve",
            algorithm=run.algorithm,
            model=run.model,
            depth_cap=run.depth_cap,
            start={"component": start[0], "entry": start[1]},
            value=values[start],
            values={f"{comp}/{entry}": value for (comp, entry), value in values.items()},
        )
    if run.algorithm == "pac-1exit":
        if run.pac_k is None:
            raise UsageError("pac-1exit needs PAC_K (bound on the expected number of steps)")
        result = pac_learn_1exit(
            model_sampler(m),
            m,
            run.pac_eps,
            run.pac_delta,
            run.pac_k,
            seed=run.seeds[0] if run.seeds else 0,
            discount=discount,
        )
        return reports.report(
            "solve",
            algorithm=run.algorithm,
            model=run.model,
            eps=result.eps,
            delta=result.delta,
            row_precision=result.row_precision,
            samples_per_row=result.samples_per_row,
            start={"component": start[0], "entry": start[1]},
            value=result.solution.entry_value(start[1]),
            values=reports.vertex_map(result.values),
            strategy=reports.vertex_map(result.solution.strategy),
        )
    raise UsageError(f"{run.algorithm} is not a solver; use one of {', '.join(SOLVERS)}")


def cmd_solve(args) -> int:
    run = resolve_run(args, "solve-truncated", SOLVERS)
    if run.algorithm not in SOLVERS:
        raise UsageError(f"{run.algorithm} is not a solver; use one of {', '.join(SOLVERS)}")
    m = resolve_model(run.model)
    check_compatibility(run, m)
    document = _solve_document(run, m)
    path = run.output_dir / f"{run.algorithm}.json"
    reports.write_json(document, path)
    print(f"{run.algorithm} {run.model}: value {document['value']!r} -> {path}")
    return EXIT_OK


def _train_seed(run: RunConfig, m: Rmdp, seed: int) -> Tuple[QTable, LearningCurve]:
    trainer = TRAINERS[run.algorithm]
    q, curve = trainer(m, run.hyperparameters.with_seed(seed))
    reports.write_curve_csv(curve, run.output_dir / f"curve_seed{seed}.csv")
    reports.write_qtable(q, run.output_dir / f"qtable_seed{seed}.tsv")
    return q, curve


def cmd_train(args) -> int:
    run = resolve_run(args, "rql", tuple(TRAINERS))
    if args.total_steps is not None:
        run = run.with_overrides(
            hyperparameters=replace(run.hyperparameters, total_steps=args.total_steps)
        )
    if not run.is_training:
        raise UsageError(f"{run.algorithm} is not a trainer; use one of {', '.join(TRAINERS)}")
    m = resolve_model(run.model)
    check_compatibility(run, m)

    curves: Dict[int, Optional[LearningCurve]] = {}
    errors: Dict[int, str] = {}
    workers = max(1, min(config.MAX_WORKERS, len(run.seeds)))
    logger.info(f"Training {run.algorithm} on {run.model}: {len(run.seeds)} seeds, {workers} workers")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {seed: pool.submit(_train_seed, run, m, seed) for seed in run.seeds}
        for seed, future in futures.items():
            try:
                _, curve = future.result()
                curves[seed] = curve
            except (RmdpError, ValueError) as e:
                logger.warning(f"Seed {seed} failed: {e}")
                errors[seed] = str(e)

    finished = [curves[seed] for seed in run.seeds if seed in curves]
    reports.write_aggregate_csv(finished, run.output_dir / "aggregate.csv")
    summary = reports.training_summary(run.algorithm, run.model, curves, errors)
    reports.write_json(summary, run.output_dir / "report.json")
    print(
        f"{run.algorithm} {run.model}: {len(finished)}/{len(run.seeds)} seeds, "
        f"mean final return {summary['mean_final']!r} -> {run.output_dir}"
    )
    return EXIT_OK if finished else EXIT_DOMAIN


def cmd_export_lp(args) -> int:
    m = resolve_model(args.model)
    text = lp_export_1exit(m, args.discount)
    if args.output:
        path = Path(args.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        logger.info(f"Wrote {path}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_product(args) -> int:
    mdp = resolve_model(args.mdp)
    pda_path = Path(args.pda)
    if not pda_path.is_file():
        raise UsageError(f"{pda_path}: file not found")
    pda = load_pda(pda_path)
    goals = [g for g in args.goals.split(",") if g] if args.goals else None
    rewards = ProductRewards(success=args.success, reject=args.reject, step=args.step)
    product = pda_product(mdp, pda, rewards, args.corruption, goals)
    path = save_model(product, args.output)
    print(f"product: {len(product.components)} components -> {path}")
    return EXIT_OK


def cmd_export_env(args) -> int:
    m, spec = build_env(args.name)
    folder = Path(args.output)
    save_model(m, folder / f"{spec.name}.rmdp")
    reports.write_json(spec.to_json(), folder / f"{spec.name}.json")
    print(f"{spec.name}: {len(m.components)} components -> {folder}")
    return EXIT_OK


# ============================================================
# ENTRY POINT
# ============================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmdp", description="Recursive MDP toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a .rmdp file")
    p.add_argument("model")
    p.set_defaults(handler=cmd_validate)

    for name, handler, help_text in (
        ("solve", cmd_solve, "run an exact or PAC solver"),
        ("train", cmd_train, "train a Q-learner over several seeds"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("target", help="model, built-in environment, chain:N or run config (.env)")
        p.add_argument("--algorithm", choices=ALGORITHMS)
        p.add_argument("--seeds", help="e.g. 0,1,2 or 0-9")
        p.add_argument("--output", help="output directory")
        if name == "train":
            p.add_argument("--total-steps", type=int)
        p.set_defaults(handler=handler)

    p = sub.add_parser("export-lp", help="write the 1-exit optimality LP")
    p.add_argument("model")
    p.add_argument("--output")
    p.add_argument("--discount", type=float, default=1.0)
    p.set_defaults(handler=cmd_export_lp)

    p = sub.add_parser("product", help="compose a flat MDP with a pushdown monitor")
    p.add_argument("mdp")
    p.add_argument("pda")
    p.add_argument("--output", default="product.rmdp")
    p.add_argument("--corruption", type=float, default=0.01)
    p.add_argument("--goals", help="comma-separated goal cells")
    p.add_argument("--success", type=float, default=50.0)
    p.add_argument("--reject", type=float, default=-5.0)
    p.add_argument("--step", type=float, default=-1.0)
    p.set_defaults(handler=cmd_product)

    p = sub.add_parser("export-env", help="write a built-in environment and its settings")
    p.add_argument("name", choices=sorted(env_specs()))
    p.add_argument("--output", default=".")
    p.set_defaults(handler=cmd_export_env)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=config.LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (RmdpError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
