from rmdp.services.validators import (
    check_model,
    diameter,
    ensure_valid,
    is_deterministic,
    is_single_exit,
    validate,
)
from rmdp.services.text_format import (
    load_model,
    load_pda,
    parse_model,
    parse_pda,
    save_model,
    serialize_model,
    serialize_pda,
)
from rmdp.services.semantics import (
    dump_trajectory,
    initial_config,
    run_episode,
    stackless_policy,
    step,
)
from rmdp.services.recursive_q import (
    Hyperparameters,
    LearningCurve,
    QTable,
    evaluate_policy,
    flat_q_train,
    get_exits,
    greedy_policy,
    quantize,
    rql1_train,
    rql_train,
)
from rmdp.services.oracle import (
    eval_stackless,
    lp_export_1exit,
    pac_learn_1exit,
    solve_1exit,
    solve_deterministic,
)
from rmdp.services.truncated import solve_truncated
from rmdp.services.transforms import (
    PdaMonitor,
    ProductRewards,
    add_exit_lane,
    hierarchical_chain,
    pda_product,
)
from rmdp.services.envs import (
    build_env,
    cloud_rmdp,
    palindrome_env,
    spelunking_rmdp,
    strategy_class,
)

__all__ = [
    "check_model",
    "diameter",
    "ensure_valid",
    "is_deterministic",
    "is_single_exit",
    "validate",
    "load_model",
    "load_pda",
    "parse_model",
    "parse_pda",
    "save_model",
    "serialize_model",
    "serialize_pda",
    "dump_trajectory",
    "initial_config",
    "run_episode",
    "stackless_policy",
    "step",
    "Hyperparameters",
    "LearningCurve",
    "QTable",
    "evaluate_policy",
    "flat_q_train",
    "get_exits",
    "greedy_policy",
    "quantize",
    "rql1_train",
    "rql_train",
    "eval_stackless",
    "lp_export_1exit",
    "pac_learn_1exit",
    "solve_1exit",
    "solve_deterministic",
    "solve_truncated",
    "PdaMonitor",
    "ProductRewards",
    "add_exit_lane",
    "hierarchical_chain",
    "pda_product",
    "build_env",
    "cloud_rmdp",
    "palindrome_env",
    "spelunking_rmdp",
    "strategy_class",
]
