"""stlflow: interpretable temporal-logic decision trees for labeled traces.

The package learns signal temporal logic classifiers shaped as binary
decision trees by exact search over a flow-based integer program's solution
space: primitive formula templates at internal nodes, class predictions at
the leaves, and a tunable penalty trading accuracy against tree size.
"""
from .stl import (
    Always,
    And,
    Eventually,
    Formula,
    HorizonError,
    Not,
    Or,
    ParseError,
    Pred,
    Signal,
    TRUE,
    format_formula,
    horizon,
    nnf,
    parse_formula,
    pred,
    robustness,
    satisfies,
)
from .primitives import (
    PrimitiveTemplate,
    RobustnessTable,
    TimeParams,
    build_primitive_set,
    candidate_thresholds,
    enumerate_time_params,
    instantiate,
    precompute_table,
    reduce_by_symmetry,
)
from .data import (
    LabeledDataset,
    dataset_hash,
    gen_naval,
    gen_plateau_waves,
    load_dataset,
    save_dataset,
    split,
)
from .tree import (
    ClassificationTree,
    ClassNode,
    Classify,
    Decision,
    DecisionNode,
    DecisionTree,
    TreeSolution,
    UNUSED,
    build_skeleton,
    ccr,
    classify,
    extract_bdt,
    summarize_formulae,
    tree_from_json,
    tree_to_json,
)
from .encoding import (
    InferenceProblem,
    MilpModel,
    encode,
    expand_solution,
    export_lp,
    objective_value,
    score,
    validate_solution,
)
from .solver import (
    BudgetExhausted,
    SearchNode,
    SearchSpaceTooLarge,
    SolveBudget,
    SolveResult,
    admissible_bound,
    solve_bruteforce,
    solve_exact,
)

__version__ = "0.1.0"
