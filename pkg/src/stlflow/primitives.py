"""Primitive formula templates, time-parameter grids and robustness tables.

A primitive template is a chain of temporal operators over a single-coordinate
predicate with a free threshold.  For a fixed template and time parameters the
robustness of any signal is an affine function of the threshold, so a table of
zero-threshold robustness values is enough to evaluate every instantiation.

The threshold of a template is kept in the ">=-normalized" frame: for a
template with relation '<' the instantiated predicate is `x < -pi`.  With that
convention `robustness(instantiate(t, theta, pi)) == table_value - pi` holds
exactly for both relations, which is what the search and the integer program
rely on.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .stl import Always, Eventually, Formula, Not, Pred, robustness

__all__ = [
    "PrimitiveTemplate",
    "TimeParams",
    "RobustnessTable",
    "enumerate_time_params",
    "build_primitive_set",
    "reduce_by_symmetry",
    "instantiate",
    "precompute_table",
    "candidate_thresholds",
    "save_table",
    "load_table",
]

_OPS = ("F", "G")
_RELATIONS = (">=", "<")


@dataclass(frozen=True)
class PrimitiveTemplate:
    """Operator chain (outermost first), relation and predicate coordinate."""

    operators: tuple
    relation: str
    dim: int

    def __post_init__(self):
        if not 1 <= len(self.operators) <= 2:
            raise ValueError("templates support one or two nested operators")
        if any(op not in _OPS for op in self.operators):
            raise ValueError("operators must be 'F' or 'G'")
        if self.relation not in _RELATIONS:
            raise ValueError("relation must be '>=' or '<'")
        if self.dim < 1:
            raise ValueError("dim is 1-based")
        object.__setattr__(self, "operators", tuple(self.operators))

    @property
    def arity(self) -> int:
        return len(self.operators)

    def dual(self) -> "PrimitiveTemplate":
        """Negation dual: flip every operator and the relation."""
        flipped = tuple("G" if op == "F" else "F" for op in self.operators)
        rel = "<" if self.relation == ">=" else ">="
        return PrimitiveTemplate(flipped, rel, self.dim)

    def __str__(self):
        return f"{''.join(self.operators)}(x{self.dim} {self.relation} .)"


@dataclass(frozen=True)
class TimeParams:
    """One interval per temporal operator, outermost first."""

    intervals: tuple

    def __post_init__(self):
        ivs = tuple((int(a), int(b)) for a, b in self.intervals)
        for a, b in ivs:
            if a < 0 or b < a:
                raise ValueError(f"bad interval [{a},{b}]")
        object.__setattr__(self, "intervals", ivs)

    @property
    def arity(self) -> int:
        return len(self.intervals)

    @property
    def joint_horizon(self) -> int:
        return sum(b for _, b in self.intervals)


def enumerate_time_params(q: int, H: int, stride: int = 1, max_width: int | None = None):
    """All interval tuples on the stride grid, in lexicographic order.

    Bounds live on {0, stride, 2*stride, ...} within [0, H]; the summed upper
    bounds stay <= H so every instantiated template is evaluable at step 0.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    if H < 0:
        raise ValueError("H must be >= 0")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    grid = list(range(0, H + 1, stride))

    def intervals(budget):
        out = []
        for a in grid:
            for b in grid:
                if b < a or b > budget:
                    continue
                if max_width is not None and b - a > max_width:
                    continue
                out.append((a, b))
        return out

    def rec(remaining, budget):
        if remaining == 1:
            return [((a, b),) for a, b in intervals(budget)]
        out = []
        for a, b in intervals(budget):
            for rest in rec(remaining - 1, budget - b):
                out.append(((a, b),) + rest)
        return out

    return [TimeParams(tup) for tup in rec(q, H)]


def build_primitive_set(level: int, d: int):
    """Level 1: F and G over each relation and coordinate.  Level 2 adds the
    GF and FG chains."""
    if level not in (1, 2):
        raise ValueError("level must be 1 or 2")
    if d < 1:
        raise ValueError("d must be >= 1")
    chains = [("F",), ("G",)]
    if level == 2:
        chains += [("G", "F"), ("F", "G")]
    return [
        PrimitiveTemplate(chain, rel, dim)
        for chain in chains
        for rel in _RELATIONS
        for dim in range(1, d + 1)
    ]


def reduce_by_symmetry(templates):
    """Keep one representative per negation-dual pair (the F-rooted one).

    Learning a G-rooted template is the same as learning its F-rooted dual
    with the routing sides swapped, so half of the set is redundant.  The
    input must be closed under duality.
    """
    pool = set(templates)
    if len(pool) != len(templates):
        raise ValueError("template set contains duplicates")
    for t in templates:
        if t.dual() not in pool:
            raise ValueError(f"set is not closed under negation: missing dual of {t}")
    return [t for t in templates if t.operators[0] == "F"]


def instantiate(template: PrimitiveTemplate, theta: TimeParams, pi: float) -> Formula:
    """Concrete formula for the template at time parameters `theta` and
    normalized threshold `pi`.

    Relation '>=' yields `... (x_dim >= pi)`; relation '<' yields
    `... (x_dim < -pi)` so that robustness equals the zero-threshold table
    value minus `pi` in both cases.
    """
    if theta.arity != template.arity:
        raise ValueError(
            f"template has {template.arity} operator(s) but theta has {theta.arity}"
        )
    if template.relation == ">=":
        phi: Formula = Pred(template.dim, pi)
    else:
        phi = Not(Pred(template.dim, -pi))
    for op, (a, b) in zip(reversed(template.operators), reversed(theta.intervals)):
        phi = Eventually(a, b, phi) if op == "F" else Always(a, b, phi)
    return phi


@dataclass
class RobustnessTable:
    """Zero-threshold robustness of every sample for every (template, theta).

    `values[t]` has shape (len(theta_grids[templates[t].arity]), n_samples).
    """

    templates: list
    theta_grids: dict
    values: list
    dataset_hash: str = ""

    @property
    def n_samples(self) -> int:
        return 0 if not self.values else self.values[0].shape[1]

    def column(self, template_idx: int, theta_idx: int) -> np.ndarray:
        return self.values[template_idx][theta_idx]

    def lookup(self, sample: int, template_idx: int, theta_idx: int) -> float:
        return float(self.values[template_idx][theta_idx, sample])

    def value_range(self):
        lo = min(float(v.min()) for v in self.values)
        hi = max(float(v.max()) for v in self.values)
        return lo, hi


def _chain_stat(work: np.ndarray, operators, theta: TimeParams, cache) -> np.ndarray:
    """Zero-threshold robustness column for one theta.  `work` is the
    (n_samples, H+1) array of predicate robustness values."""
    if len(operators) == 1:
        a, b = theta.intervals[0]
        seg = work[:, a : b + 1]
        return seg.max(axis=1) if operators[0] == "F" else seg.min(axis=1)
    (a1, b1), (a2, b2) = theta.intervals
    width = b2 - a2 + 1
    inner_op = operators[1]
    key = (inner_op, width)
    inner = cache.get(key)
    if inner is None:
        win = sliding_window_view(work, width, axis=1)
        inner = win.max(axis=2) if inner_op == "F" else win.min(axis=2)
        cache[key] = inner
    # inner[:, k] is the stat of window [k, k+width-1]; shift by a2
    seg = inner[:, a1 + a2 : b1 + a2 + 1]
    return seg.max(axis=1) if operators[0] == "F" else seg.min(axis=1)


def precompute_table(
    dataset, templates, theta_grids, dataset_hash: str = "", threads: int = 1
) -> RobustnessTable:
    """Tabulate zero-threshold robustness for all samples and templates.

    `dataset` provides `signals` shaped (n, H+1, d).  Raises if any theta
    cannot be evaluated at step 0 within the shared horizon.  The per-cell
    work is order-independent, so `threads > 1` only spreads templates over
    a thread pool; the resulting table is identical either way.
    """
    signals = np.asarray(dataset.signals, dtype=float)
    n, steps, d = signals.shape
    H = steps - 1
    bad = [
        (q, theta.intervals)
        for q, grid in sorted(theta_grids.items())
        for theta in grid
        if theta.joint_horizon > H
    ]
    if bad:
        raise ValueError(
            f"time parameters exceed the dataset horizon {H}: {bad[:5]}"
            + ("..." if len(bad) > 5 else "")
        )

    def one_template(template):
        if template.dim > d:
            raise ValueError(
                f"template {template} needs dimension {template.dim}, data has {d}"
            )
        grid = theta_grids[template.arity]
        base = signals[:, :, template.dim - 1]
        work = base if template.relation == ">=" else -base
        cache: dict = {}
        cols = np.empty((len(grid), n), dtype=float)
        for t_idx, theta in enumerate(grid):
            cols[t_idx] = _chain_stat(work, template.operators, theta, cache)
        return cols

    if threads > 1 and len(templates) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(one_template, templates))
    else:
        values = [one_template(t) for t in templates]
    return RobustnessTable(list(templates), dict(theta_grids), values, dataset_hash)


def candidate_thresholds(column) -> np.ndarray:
    """Finite threshold set that realizes every sign split of the column.

    Midpoints between consecutive distinct values, plus one sentinel below
    and one above (offset by max(1, value span)).  The sign pattern of
    `column - pi` only changes when `pi` crosses a column value, so this set
    is lossless for routing decisions.
    """
    vals = np.unique(np.asarray(column, dtype=float))
    if vals.size == 0:
        raise ValueError("empty threshold column")
    delta = max(1.0, float(vals[-1] - vals[0]))
    mids = (vals[:-1] + vals[1:]) / 2.0
    return np.concatenate(([vals[0] - delta], mids, [vals[-1] + delta]))


def _grid_spec(theta_grids) -> str:
    return json.dumps(
        {str(q): [list(map(list, t.intervals)) for t in grid] for q, grid in sorted(theta_grids.items())},
        sort_keys=True,
    )


def table_cache_key(dataset_hash: str, templates, theta_grids) -> str:
    text = json.dumps(
        {
            "dataset": dataset_hash,
            "templates": [[list(t.operators), t.relation, t.dim] for t in templates],
            "grids": _grid_spec(theta_grids),
        },
        sort_keys=True,
    )
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_table(table: RobustnessTable, path):
    """Persist a robustness table keyed by dataset hash and grid config."""
    meta = {
        "key": table_cache_key(table.dataset_hash, table.templates, table.theta_grids),
        "dataset_hash": table.dataset_hash,
        "templates": [[list(t.operators), t.relation, t.dim] for t in table.templates],
        "grids": {
            str(q): [list(map(list, t.intervals)) for t in grid]
            for q, grid in sorted(table.theta_grids.items())
        },
    }
    arrays = {f"values_{i}": v for i, v in enumerate(table.values)}
    np.savez_compressed(path, meta=json.dumps(meta, sort_keys=True), **arrays)


def load_table(path, expected_key: str | None = None) -> RobustnessTable:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        values = [np.asarray(data[f"values_{i}"]) for i in range(len(meta["templates"]))]
    templates = [
        PrimitiveTemplate(tuple(ops), rel, dim) for ops, rel, dim in meta["templates"]
    ]
    theta_grids = {
        int(q): [TimeParams(tuple(map(tuple, iv))) for iv in grid]
        for q, grid in meta["grids"].items()
    }
    if expected_key is not None and meta["key"] != expected_key:
        raise ValueError(f"table cache key mismatch: {meta['key']} != {expected_key}")
    return RobustnessTable(templates, theta_grids, values, meta["dataset_hash"])


def verify_table(table: RobustnessTable, dataset, rng: np.random.Generator, n_checks: int = 50):
    """Spot-check table entries against the direct robustness recursion."""
    for _ in range(n_checks):
        t_idx = int(rng.integers(len(table.templates)))
        template = table.templates[t_idx]
        grid = table.theta_grids[template.arity]
        th_idx = int(rng.integers(len(grid)))
        i = int(rng.integers(dataset.n_samples))
        phi = instantiate(template, grid[th_idx], 0.0)
        expect = robustness(dataset.signal(i), phi, 0)
        got = table.lookup(i, t_idx, th_idx)
        if got != expect:
            raise AssertionError(
                f"table mismatch at sample {i}, template {template}, theta {grid[th_idx].intervals}: "
                f"{got} != {expect}"
            )
