"""Command-line interface: train, classify, export-lp, gen-data,
check-solution.

All randomness flows from one --seed.  Reports are JSON with sorted keys so
identical runs produce identical bytes apart from the "timing" block.
Exit codes: 0 on success/optimal, 2 when the solve budget ran out, 1 on any
other error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from .data import LabeledDataset, dataset_hash, gen_naval, gen_plateau_waves, load_dataset, save_dataset, split
from .encoding import (
    InferenceProblem,
    encode,
    expand_solution,
    export_lp,
    objective_value,
    validate_solution,
)
from .solver import STATUS_OPTIMAL, SolveBudget, solve_bruteforce, solve_exact
from .stl import format_formula
from .tree import (
    Classify,
    Decision,
    TreeSolution,
    UNUSED,
    ccr,
    extract_bdt,
    summarize_formulae,
    tree_from_json,
    tree_to_json,
)
from .primitives import instantiate

__all__ = ["main", "run_train", "make_dataset"]

_DEFAULTS = {
    "dataset": None,
    "gen": None,
    "split": None,
    "depth": 2,
    "level": 1,
    "lam": 0.0,
    "stride": None,
    "max_width": None,
    "seed": 0,
    "budget_secs": 1800.0,
    "threads": 1,
    "out": "out",
    "solver": "exact",
}


def make_dataset(config) -> LabeledDataset:
    """Dataset from --dataset PATH or a --gen spec like 'naval:n=100'."""
    if config.get("dataset"):
        return load_dataset(config["dataset"])
    spec = config.get("gen")
    if not spec:
        raise ValueError("either --dataset or --gen is required")
    name, _, args_text = spec.partition(":")
    args = {}
    if args_text:
        for part in args_text.split(","):
            key, _, value = part.partition("=")
            args[key.strip()] = value.strip()
    seed = int(config.get("seed", 0))
    if name == "naval":
        return gen_naval(n_per_family=int(args.get("n", 50)), seed=seed)
    if name == "plateau":
        return gen_plateau_waves(seed=seed, noise=float(args.get("noise", 0.01)))
    raise ValueError(f"unknown generator {name!r} (expected naval or plateau)")


def _solution_doc(problem: InferenceProblem, result) -> dict:
    nodes = {}
    for n in problem.skeleton.nodes:
        role = result.solution.roles.get(n, UNUSED)
        if isinstance(role, Decision):
            nodes[str(n)] = {
                "role": "decision",
                "psi": role.psi,
                "theta": role.theta,
                "pi": role.pi,
                "formula": format_formula(role.formula),
                "class": None,
            }
        elif isinstance(role, Classify):
            nodes[str(n)] = {"role": "classify", "psi": None, "theta": None,
                             "pi": None, "formula": None, "class": role.label}
        else:
            nodes[str(n)] = {"role": "unused", "psi": None, "theta": None,
                             "pi": None, "formula": None, "class": None}
    return {
        "status": result.status,
        "objective": result.objective,
        "lambda": problem.lam,
        "ncorrect": result.ncorrect,
        "ndecisions": result.ndecisions,
        "depth": problem.skeleton.depth,
        "nodes": nodes,
        "flows": result.solution.flows,
    }


def _manifest_doc(problem: InferenceProblem) -> dict:
    doc = dict(problem.meta)
    doc["big_m"] = problem.big_m()
    doc["classes"] = problem.classes
    doc["templates"] = [
        {"operators": list(t.operators), "relation": t.relation, "dim": t.dim}
        for t in problem.templates
    ]
    return doc


def _write_json(path: Path, doc):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def run_train(config: dict) -> tuple[dict, int]:
    """Full pipeline: data -> primitives -> solve -> tree -> report files."""
    cfg = dict(_DEFAULTS)
    cfg.update({k: v for k, v in config.items() if v is not None})
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()
    dataset = make_dataset(cfg)
    test_set = None
    if cfg.get("split"):
        dataset, test_set = split(dataset, float(cfg["split"]), seed=int(cfg["seed"]))
    problem = InferenceProblem.build(
        dataset,
        depth=int(cfg["depth"]),
        level=int(cfg["level"]),
        stride=cfg["stride"] if cfg["stride"] is None else int(cfg["stride"]),
        max_width=cfg["max_width"] if cfg["max_width"] is None else int(cfg["max_width"]),
        lam=float(cfg["lam"]),
        threads=int(cfg.get("threads", 1)),
    )
    budget = SolveBudget(wall_secs=float(cfg["budget_secs"]))
    if cfg.get("solver") == "bruteforce":
        result = solve_bruteforce(problem)
    else:
        result = solve_exact(problem, budget)
    bdt = extract_bdt(result.solution)
    summaries = summarize_formulae(bdt)
    ccr_train = ccr(bdt, dataset)
    report = {
        "config": {
            "dataset": cfg.get("dataset"),
            "gen": cfg.get("gen"),
            "split": cfg.get("split"),
            "depth": int(cfg["depth"]),
            "level": int(cfg["level"]),
            "lambda": float(cfg["lam"]),
            "stride": problem.meta["stride"],
            "max_width": problem.meta["max_width"],
            "seed": int(cfg["seed"]),
            "threads": int(cfg.get("threads", 1)),
        },
        "dataset_hash": problem.meta["dataset_hash"],
        "n_train": dataset.n_samples,
        "status": result.status,
        "objective": result.objective,
        "ncorrect": result.ncorrect,
        "ndecisions": result.ndecisions,
        "ccr_train": ccr_train,
        "formulas": {str(c): format_formula(phi) for c, phi in summaries.items()},
        "class_names": dataset.class_names,
    }
    if test_set is not None:
        report["n_test"] = test_set.n_samples
        report["ccr_test"] = ccr(bdt, test_set)
    report["timing"] = {
        "runtime_secs": time.monotonic() - t0,
        "solver_secs": result.runtime_secs,
        "expansions": result.expansions,
    }
    _write_json(out_dir / "solution.json", _solution_doc(problem, result))
    (out_dir / "bdt.json").write_text(tree_to_json(bdt) + "\n")
    _write_json(out_dir / "manifest.json", _manifest_doc(problem))
    _write_json(out_dir / "report.json", report)
    code = 0 if result.status == STATUS_OPTIMAL else 2
    return report, code


def cmd_train(args) -> int:
    report, code = run_train(_config_from_args(args))
    print(json.dumps(report, indent=2, sort_keys=True))
    return code


def cmd_classify(args) -> int:
    dt = tree_from_json(Path(args.model).read_text())
    dataset = load_dataset(args.dataset)
    if dt.max_horizon() > dataset.horizon:
        raise ValueError(
            f"model needs horizon {dt.max_horizon()}, dataset has {dataset.horizon}"
        )
    from .tree import classify as classify_one

    rows = []
    hits = 0
    for i in range(dataset.n_samples):
        predicted = classify_one(dt, dataset.signal(i))
        actual = int(dataset.labels[i])
        hits += int(predicted == actual)
        rows.append((dataset.sample_ids[i], predicted, actual, int(predicted == actual)))
    out = Path(args.out) if args.out else None
    if out:
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["sample_id", "predicted", "actual", "correct"])
            writer.writerows(rows)
    summary = {"n": dataset.n_samples, "ccr": hits / dataset.n_samples}
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_export_lp(args) -> int:
    cfg = _config_from_args(args)
    merged = dict(_DEFAULTS)
    merged.update({k: v for k, v in cfg.items() if v is not None})
    dataset = make_dataset(merged)
    if merged.get("split"):
        dataset, _ = split(dataset, float(merged["split"]), seed=int(merged["seed"]))
    problem = InferenceProblem.build(
        dataset,
        depth=int(merged["depth"]),
        level=int(merged["level"]),
        stride=merged["stride"] if merged["stride"] is None else int(merged["stride"]),
        max_width=merged["max_width"] if merged["max_width"] is None else int(merged["max_width"]),
        lam=float(merged["lam"]),
    )
    model = encode(problem)
    out_dir = Path(merged["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    export_lp(model, out_dir / "model.lp")
    _write_json(out_dir / "manifest.json", _manifest_doc(problem))
    print(json.dumps({"lp": str(out_dir / "model.lp"),
                      "variables": len(model.variables),
                      "constraints": len(model.constraints)}, sort_keys=True))
    return 0


def cmd_gen_data(args) -> int:
    cfg = {"gen": args.gen, "seed": args.seed}
    dataset = make_dataset(cfg)
    save_dataset(dataset, args.out)
    print(json.dumps({"out": args.out, "n_samples": dataset.n_samples,
                      "horizon": dataset.horizon, "dim": dataset.dim}, sort_keys=True))
    return 0


def _solution_from_doc(problem: InferenceProblem, doc: dict) -> TreeSolution:
    roles = {}
    for n_text, rec in doc["nodes"].items():
        n = int(n_text)
        if rec["role"] == "decision":
            psi, theta, pi = int(rec["psi"]), int(rec["theta"]), float(rec["pi"])
            template = problem.templates[psi]
            theta_params = problem.theta_grids[template.arity][theta]
            roles[n] = Decision(psi, theta, pi, instantiate(template, theta_params, pi))
        elif rec["role"] == "classify":
            roles[n] = Classify(int(rec["class"]))
    return TreeSolution(int(doc["depth"]), roles)


def cmd_check_solution(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    dataset = load_dataset(args.dataset)
    actual_hash = dataset_hash(dataset)
    if actual_hash != manifest["dataset_hash"]:
        raise ValueError(
            f"dataset hash {actual_hash} does not match manifest "
            f"{manifest['dataset_hash']}"
        )
    problem = InferenceProblem.build(
        dataset,
        depth=int(manifest["depth"]),
        level=int(manifest["level"]),
        stride=manifest["stride"],
        max_width=manifest["max_width"],
        lam=float(manifest["lambda"]),
    )
    doc = json.loads(Path(args.solution).read_text())
    solution = _solution_from_doc(problem, doc)
    model = encode(problem)
    assignment = expand_solution(problem, solution)
    violations = validate_solution(model, assignment)
    replay_objective = objective_value(assignment, problem.lam)
    print(
        json.dumps(
            {
                "violations": [str(v) for v in violations],
                "n_violations": len(violations),
                "replay_objective": replay_objective,
                "reported_objective": doc.get("objective"),
            },
            sort_keys=True,
            indent=2,
        )
    )
    return 0 if not violations else 1


def _config_from_args(args) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        cfg.update(json.loads(Path(args.config).read_text()))
    for key in _DEFAULTS:
        attr = {"lam": "lam"}.get(key, key)
        value = getattr(args, attr, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _add_train_flags(p):
    p.add_argument("--dataset", help="CSV or JSON dataset path")
    p.add_argument("--gen", help="generator spec: naval[:n=50] or plateau[:noise=0.01]")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--split", type=float, help="train fraction for a stratified split")
    p.add_argument("--depth", type=int, help="tree depth (1..4)")
    p.add_argument("--level", type=int, choices=(1, 2), help="primitive nesting level")
    p.add_argument("--lambda", dest="lam", type=float, help="decision-node penalty in [0,1]")
    p.add_argument("--stride", type=int, help="time-grid stride (default: 1 up to H=64)")
    p.add_argument("--max-width", dest="max_width", type=int, help="max interval width")
    p.add_argument("--seed", type=int, help="seed for generators and splits")
    p.add_argument("--budget-secs", dest="budget_secs", type=float, help="solver wall budget")
    p.add_argument("--threads", type=int, help="worker threads for table precompute")
    p.add_argument("--solver", choices=("exact", "bruteforce"), help="search backend")
    p.add_argument("--out", help="output directory")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="stlflow",
        description="Learn interpretable temporal-logic decision trees from labeled traces",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit a tree and write reports")
    _add_train_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_cls = sub.add_parser("classify", help="classify a dataset with a saved tree")
    p_cls.add_argument("--model", required=True, help="bdt.json from train")
    p_cls.add_argument("--dataset", required=True)
    p_cls.add_argument("--out", help="predictions CSV path")
    p_cls.set_defaults(func=cmd_classify)

    p_lp = sub.add_parser("export-lp", help="write the integer program in LP format")
    _add_train_flags(p_lp)
    p_lp.set_defaults(func=cmd_export_lp)

    p_gen = sub.add_parser("gen-data", help="write a synthetic dataset")
    p_gen.add_argument("--gen", required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen_data)

    p_chk = sub.add_parser("check-solution", help="replay a solution against the model")
    p_chk.add_argument("--solution", required=True)
    p_chk.add_argument("--manifest", required=True)
    p_chk.add_argument("--dataset", required=True)
    p_chk.set_defaults(func=cmd_check_solution)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface upstream errors with a nonzero code
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
