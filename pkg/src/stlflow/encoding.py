"""Flow-based integer program for tree inference, plus validation and export.

The model routes every sample from a source through the skeleton to a sink.
A sample contributes to the objective only when it reaches a classification
node of its own class; decision nodes route by the sign of the robustness of
their selected primitive, linked through a precomputed robustness table and
big-M constraints.  The builder keeps the model solver-neutral: plain linear
rows over named binary/continuous variables.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset, dataset_hash
from .primitives import (
    PrimitiveTemplate,
    RobustnessTable,
    build_primitive_set,
    candidate_thresholds,
    enumerate_time_params,
    precompute_table,
    reduce_by_symmetry,
)
from .tree import ClassificationTree, Classify, Decision, TreeSolution, UNUSED

__all__ = [
    "InferenceProblem",
    "MilpModel",
    "Constraint",
    "Violation",
    "encode",
    "validate_solution",
    "expand_solution",
    "export_lp",
    "objective_value",
    "score",
]

EPSILON = 1e-6


def score(ncorrect: int, ndecisions: int, lam: float) -> float:
    """Objective value: reward correct classifications, penalize decisions."""
    return (1.0 - lam) * ncorrect - lam * ndecisions


def default_stride(H: int) -> int:
    return 1 if H <= 64 else -(-H // 64)


@dataclass
class InferenceProblem:
    """Everything the encoder and the solvers need for one instance."""

    skeleton: ClassificationTree
    templates: list
    theta_grids: dict
    table: RobustnessTable
    labels: np.ndarray
    classes: list
    lam: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        self.labels = np.asarray(self.labels, dtype=int)
        if len(self.table.values) != len(self.templates):
            raise ValueError("table does not match the template list")
        for t_idx, template in enumerate(self.templates):
            expect = (len(self.theta_grids[template.arity]), self.labels.shape[0])
            if self.table.values[t_idx].shape != expect:
                raise ValueError(
                    f"table for template {template} has shape "
                    f"{self.table.values[t_idx].shape}, expected {expect}"
                )
        # solver-canonical column order: nested chains first, then '<' before
        # '>=', then coordinate; thetas in grid order within a column block
        order = sorted(
            range(len(self.templates)),
            key=lambda i: (
                -self.templates[i].arity,
                0 if self.templates[i].relation == "<" else 1,
                self.templates[i].dim,
                i,
            ),
        )
        self.template_order = order
        self.columns = [
            (p, t)
            for p in order
            for t in range(len(self.theta_grids[self.templates[p].arity]))
        ]

    @property
    def n_samples(self) -> int:
        return int(self.labels.shape[0])

    @property
    def arities(self) -> list:
        return sorted({t.arity for t in self.templates})

    def theta_offsets(self) -> dict:
        """Global theta ids: grids concatenated by ascending arity."""
        offsets, total = {}, 0
        for q in sorted(self.theta_grids):
            offsets[q] = total
            total += len(self.theta_grids[q])
        return offsets

    def n_thetas(self) -> int:
        return sum(len(g) for g in self.theta_grids.values())

    def tau(self, template_idx: int, theta_idx: int) -> np.ndarray:
        return self.table.column(template_idx, theta_idx)

    def big_m(self) -> float:
        lo, hi = self.table.value_range()
        max_abs_cand = 0.0
        min_cand, max_cand = np.inf, -np.inf
        for values in self.table.values:
            v1 = values.min(axis=1)
            vm = values.max(axis=1)
            delta = np.maximum(1.0, vm - v1)
            lo_c = v1 - delta
            hi_c = vm + delta
            max_abs_cand = max(max_abs_cand, float(np.abs(lo_c).max()), float(np.abs(hi_c).max()))
            min_cand = min(min_cand, float(lo_c.min()))
            max_cand = max(max_cand, float(hi_c.max()))
        M = (hi - lo) + max_abs_cand + 1.0
        needed = max(hi - min_cand, max_cand - lo)
        if M < needed:  # pragma: no cover - cannot happen, guarded anyway
            M = needed + 1.0
        return M

    @classmethod
    def build(
        cls,
        dataset: LabeledDataset,
        depth: int,
        level: int = 1,
        stride: int | None = None,
        max_width: int | None = None,
        lam: float = 0.0,
        templates: list | None = None,
        table: RobustnessTable | None = None,
        threads: int = 1,
    ) -> "InferenceProblem":
        """Assemble a problem from a dataset: templates (symmetry-reduced),
        theta grids on the stride lattice, and the robustness table."""
        H = dataset.horizon
        if stride is None:
            stride = default_stride(H)
        if templates is None:
            templates = reduce_by_symmetry(build_primitive_set(level, dataset.dim))
        theta_grids = {
            q: enumerate_time_params(q, H, stride=stride, max_width=max_width)
            for q in sorted({t.arity for t in templates})
        }
        ds_hash = dataset_hash(dataset)
        if table is None:
            table = precompute_table(
                dataset, templates, theta_grids, dataset_hash=ds_hash, threads=threads
            )
        meta = {
            "depth": depth,
            "level": level,
            "stride": stride,
            "max_width": max_width,
            "lambda": lam,
            "dataset_hash": ds_hash,
            "n_samples": dataset.n_samples,
            "horizon": H,
            "dim": dataset.dim,
        }
        return cls(
            skeleton=ClassificationTree(depth),
            templates=list(templates),
            theta_grids=theta_grids,
            table=table,
            labels=dataset.labels.copy(),
            classes=dataset.classes,
            lam=lam,
            meta=meta,
        )


@dataclass
class Constraint:
    name: str
    tag: str
    terms: list  # (coefficient, variable name)
    sense: str  # '==' or '<='
    rhs: float
    node: int | None = None
    sample: int | None = None


@dataclass
class Violation:
    name: str
    tag: str
    node: int | None
    sample: int | None
    residual: float

    def __str__(self):
        where = []
        if self.node is not None:
            where.append(f"node {self.node}")
        if self.sample is not None:
            where.append(f"sample {self.sample}")
        loc = f" ({', '.join(where)})" if where else ""
        return f"{self.tag} constraint {self.name}{loc}: residual {self.residual:g}"


@dataclass
class MilpModel:
    variables: dict  # name -> 'B' | 'C'
    constraints: list
    objective: list  # (coefficient, variable name)
    maximize: bool
    big_m: float
    epsilon: float
    meta: dict = field(default_factory=dict)

    def variable_counts(self) -> dict:
        out: dict = {}
        for name in self.variables:
            prefix = name.split("_", 1)[0]
            out[prefix] = out.get(prefix, 0) + 1
        return out


def _v_zs(i):
    return f"zs_{i}"


def _v_z(i, n):
    return f"z_{i}_{n}"


def _v_zt(i, n):
    return f"zt_{i}_{n}"


def _v_b(n, p):
    return f"b_{n}_{p}"


def _v_w(n, c):
    return f"w_{n}_{c}"


def _v_xi(n, t):
    return f"xi_{n}_{t}"


def _v_y(i, n, p):
    return f"y_{i}_{n}_{p}"


def _v_kappa(i, n, p):
    return f"kap_{i}_{n}_{p}"


def _v_rho(i, n, p):
    return f"rho_{i}_{n}_{p}"


def _v_pi(n):
    return f"pi_{n}"


def encode(problem: InferenceProblem) -> MilpModel:
    """Build the full flow/node/satisfaction model for the instance."""
    skel = problem.skeleton
    N = skel.internal_nodes
    L = skel.leaves
    samples = range(problem.n_samples)
    n_templates = len(problem.templates)
    offsets = problem.theta_offsets()
    M = problem.big_m()
    eps = EPSILON

    variables: dict = {}

    def add_var(name, kind):
        variables[name] = kind
        return name

    for i in samples:
        add_var(_v_zs(i), "B")
        for n in N + L:
            add_var(_v_z(i, n), "B")
            add_var(_v_zt(i, n), "B")
    for n in N:
        for p in range(n_templates):
            add_var(_v_b(n, p), "B")
        for t in range(problem.n_thetas()):
            add_var(_v_xi(n, t), "B")
        add_var(_v_pi(n), "C")
        for i in samples:
            for p in range(n_templates):
                add_var(_v_y(i, n, p), "B")
                add_var(_v_kappa(i, n, p), "B")
                add_var(_v_rho(i, n, p), "C")
    for n in N + L:
        for c in problem.classes:
            add_var(_v_w(n, c), "B")

    cons: list = []

    def add(name, tag, terms, sense, rhs, node=None, sample=None):
        cons.append(Constraint(name, tag, terms, sense, rhs, node, sample))

    for i in samples:
        add(f"src_{i}", "flow", [(1.0, _v_zs(i)), (-1.0, _v_z(i, 1))], "==", 0.0, node=1, sample=i)
    for n in N:
        for i in samples:
            add(
                f"conserve_{i}_{n}",
                "flow",
                [
                    (1.0, _v_z(i, n)),
                    (-1.0, _v_zt(i, n)),
                    (-1.0, _v_z(i, skel.left(n))),
                    (-1.0, _v_z(i, skel.right(n))),
                ],
                "==",
                0.0,
                node=n,
                sample=i,
            )
    for n in L:
        for i in samples:
            add(
                f"leaf_{i}_{n}",
                "flow",
                [(1.0, _v_z(i, n)), (-1.0, _v_zt(i, n))],
                "==",
                0.0,
                node=n,
                sample=i,
            )

    for n in N:
        terms = [(1.0, _v_b(n, p)) for p in range(n_templates)]
        terms += [(1.0, _v_w(n, c)) for c in problem.classes]
        add(f"role_{n}", "node", terms, "==", 1.0, node=n)
    for n in L:
        add(
            f"role_{n}",
            "node",
            [(1.0, _v_w(n, c)) for c in problem.classes],
            "==",
            1.0,
            node=n,
        )

    for n in N:
        for q in problem.arities:
            terms = [
                (1.0, _v_b(n, p))
                for p in range(n_templates)
                if problem.templates[p].arity == q
            ]
            terms += [
                (-1.0, _v_xi(n, offsets[q] + t))
                for t in range(len(problem.theta_grids[q]))
            ]
            add(f"window_{n}_q{q}", "time-window", terms, "==", 0.0, node=n)

    for n in N + L:
        for i in samples:
            label = int(problem.labels[i])
            add(
                f"sink_{i}_{n}",
                "class-sink",
                [(1.0, _v_zt(i, n)), (-1.0, _v_w(n, label))],
                "<=",
                0.0,
                node=n,
                sample=i,
            )

    for n in N:
        for p, template in enumerate(problem.templates):
            q = template.arity
            taus = problem.table.values[p]
            for i in samples:
                terms = [(1.0, _v_rho(i, n, p)), (1.0, _v_pi(n))]
                terms += [
                    (-float(taus[t, i]), _v_xi(n, offsets[q] + t))
                    for t in range(taus.shape[0])
                ]
                add(f"rho_{i}_{n}_{p}", "rho-link", terms, "==", 0.0, node=n, sample=i)
                add(
                    f"bigMp_{i}_{n}_{p}",
                    "big-M",
                    [(1.0, _v_rho(i, n, p)), (-M, _v_y(i, n, p))],
                    "<=",
                    0.0,
                    node=n,
                    sample=i,
                )
                add(
                    f"bigMn_{i}_{n}_{p}",
                    "big-M",
                    [(-1.0, _v_rho(i, n, p)), (M - eps, _v_y(i, n, p))],
                    "<=",
                    M - eps,
                    node=n,
                    sample=i,
                )

    for n in N:
        for i in samples:
            add(
                f"left_{i}_{n}",
                "route-left",
                [(1.0, _v_z(i, skel.left(n)))]
                + [(-1.0, _v_kappa(i, n, p)) for p in range(n_templates)],
                "<=",
                0.0,
                node=n,
                sample=i,
            )
            add(
                f"right_{i}_{n}",
                "route-right",
                [(1.0, _v_z(i, skel.right(n)))]
                + [(1.0, _v_kappa(i, n, p)) for p in range(n_templates)],
                "<=",
                1.0,
                node=n,
                sample=i,
            )
            add(
                f"rightb_{i}_{n}",
                "route-right",
                [(1.0, _v_z(i, skel.right(n)))]
                + [(-1.0, _v_b(n, p)) for p in range(n_templates)],
                "<=",
                0.0,
                node=n,
                sample=i,
            )
            for p in range(n_templates):
                add(
                    f"kapy_{i}_{n}_{p}",
                    "linearization",
                    [(1.0, _v_kappa(i, n, p)), (-1.0, _v_y(i, n, p))],
                    "<=",
                    0.0,
                    node=n,
                    sample=i,
                )
                add(
                    f"kapb_{i}_{n}_{p}",
                    "linearization",
                    [(1.0, _v_kappa(i, n, p)), (-1.0, _v_b(n, p))],
                    "<=",
                    0.0,
                    node=n,
                    sample=i,
                )
                add(
                    f"kaplb_{i}_{n}_{p}",
                    "linearization",
                    [
                        (-1.0, _v_kappa(i, n, p)),
                        (1.0, _v_y(i, n, p)),
                        (1.0, _v_b(n, p)),
                    ],
                    "<=",
                    1.0,
                    node=n,
                    sample=i,
                )

    lam = problem.lam
    objective = []
    if 1.0 - lam != 0.0:
        for i in samples:
            for n in N + L:
                objective.append((1.0 - lam, _v_zt(i, n)))
    if lam != 0.0:
        for n in N:
            for p in range(n_templates):
                objective.append((-lam, _v_b(n, p)))

    meta = dict(problem.meta)
    meta.update({"big_m": M, "epsilon": eps})
    return MilpModel(variables, cons, objective, True, M, eps, meta)


def validate_solution(model: MilpModel, assignment: dict, tol: float = 1e-6) -> list:
    """Replay every constraint; return the violations (empty when feasible).

    Binary variables are checked for exact 0/1 values; continuous rows use
    the given tolerance.
    """
    missing = [name for name in model.variables if name not in assignment]
    if missing:
        raise KeyError(
            f"assignment is missing {len(missing)} variables, e.g. {missing[:5]}"
        )
    out = []
    for name, kind in model.variables.items():
        if kind == "B":
            v = assignment[name]
            if v not in (0, 1, 0.0, 1.0):
                out.append(Violation(name, "integrality", None, None, float(v)))
    for con in model.constraints:
        lhs = 0.0
        for coef, var in con.terms:
            lhs += coef * assignment[var]
        resid = lhs - con.rhs
        bad = abs(resid) > tol if con.sense == "==" else resid > tol
        if bad:
            out.append(Violation(con.name, con.tag, con.node, con.sample, resid))
    return out


def route_sample(problem: InferenceProblem, solution: TreeSolution, i: int):
    """Follow sample i through the solved tree by robustness sign.

    Returns (path, sink_node, predicted_class); sink_node is None when the
    sample reaches a classification node of the wrong class.
    """
    skel = problem.skeleton
    n = 1
    path = [n]
    while True:
        role = solution.roles.get(n, UNUSED)
        if isinstance(role, Classify):
            if role.label == int(problem.labels[i]):
                return path, n, role.label
            return path, None, role.label
        if not isinstance(role, Decision):
            raise ValueError(f"sample {i} reached unused node {n}")
        tau = float(problem.table.values[role.psi][role.theta, i])
        n = skel.left(n) if tau - role.pi >= 0.0 else skel.right(n)
        path.append(n)


def expand_solution(problem: InferenceProblem, solution: TreeSolution) -> dict:
    """Full variable assignment realizing a solved tree.

    Unused nodes become classification nodes for class 1 with a zero
    threshold, which satisfies the one-hot role rows without attracting
    flow.
    """
    skel = problem.skeleton
    offsets = problem.theta_offsets()
    n_templates = len(problem.templates)
    assignment: dict = {}

    for n in skel.internal_nodes + skel.leaves:
        role = solution.roles.get(n, UNUSED)
        for p in range(n_templates):
            assignment[_v_b(n, p)] = 0.0
        for c in problem.classes:
            assignment[_v_w(n, c)] = 0.0
        if not skel.is_leaf(n):
            for t in range(problem.n_thetas()):
                assignment[_v_xi(n, t)] = 0.0
            assignment[_v_pi(n)] = 0.0
        if isinstance(role, Decision):
            if skel.is_leaf(n):
                raise ValueError(f"leaf {n} cannot carry a decision")
            assignment[_v_b(n, role.psi)] = 1.0
            q = problem.templates[role.psi].arity
            assignment[_v_xi(n, offsets[q] + role.theta)] = 1.0
            assignment[_v_pi(n)] = float(role.pi)
        elif isinstance(role, Classify):
            assignment[_v_w(n, role.label)] = 1.0
        else:
            assignment[_v_w(n, problem.classes[0])] = 1.0

    for n in skel.internal_nodes:
        role = solution.roles.get(n, UNUSED)
        pi_n = float(role.pi) if isinstance(role, Decision) else 0.0
        sel = None
        if isinstance(role, Decision):
            sel = (problem.templates[role.psi].arity, role.theta)
        for p, template in enumerate(problem.templates):
            taus = problem.table.values[p]
            for i in range(problem.n_samples):
                if sel is not None and template.arity == sel[0]:
                    rho = float(taus[sel[1], i]) - pi_n
                else:
                    rho = -pi_n
                y = 1.0 if rho >= 0.0 else 0.0
                assignment[_v_rho(i, n, p)] = rho
                assignment[_v_y(i, n, p)] = y
                assignment[_v_kappa(i, n, p)] = y * assignment[_v_b(n, p)]

    for i in range(problem.n_samples):
        assignment[_v_zs(i)] = 0.0
        for n in skel.internal_nodes + skel.leaves:
            assignment[_v_z(i, n)] = 0.0
            assignment[_v_zt(i, n)] = 0.0
        path, sink, _ = route_sample(problem, solution, i)
        if sink is not None:
            assignment[_v_zs(i)] = 1.0
            for n in path:
                assignment[_v_z(i, n)] = 1.0
            assignment[_v_zt(i, sink)] = 1.0
    return assignment


def objective_value(assignment: dict, lam: float) -> float:
    """Objective of a full assignment: reward flow into the sink, penalize
    selected primitives."""
    ncorrect = sum(
        int(round(v)) for name, v in assignment.items() if name.startswith("zt_")
    )
    ndec = sum(int(round(v)) for name, v in assignment.items() if name.startswith("b_"))
    return score(ncorrect, ndec, lam)


def _fmt_coef(x: float) -> str:
    return f"{x:.12g}"


def export_lp(model: MilpModel, path):
    """Write the model in LP format (Maximize / Subject To / Bounds /
    Binary / End) with the stable variable-name schema."""
    lines = []
    lines.append("\\ stlflow tree-inference model")
    for key in sorted(model.meta):
        lines.append(f"\\ {key}: {model.meta[key]}")
    lines.append("Maximize")
    terms = [t for t in model.objective if t[0] != 0.0]
    if not terms:
        body = "0 " + next(iter(model.variables))
    else:
        parts = []
        for idx, (coef, var) in enumerate(terms):
            sign = "-" if coef < 0 else ("+" if idx else "")
            parts.append(f"{sign} {_fmt_coef(abs(coef))} {var}".strip())
        body = " ".join(parts)
    lines.append(" obj: " + body)
    lines.append("Subject To")
    for con in model.constraints:
        parts = []
        for idx, (coef, var) in enumerate(con.terms):
            sign = "-" if coef < 0 else ("+" if idx else "")
            parts.append(f"{sign} {_fmt_coef(abs(coef))} {var}".strip())
        sense = "=" if con.sense == "==" else "<="
        row = f" {con.name}: " + " ".join(parts) + f" {sense} {_fmt_coef(con.rhs)}"
        # wrap long rows, LP readers dislike very long lines
        while len(row) > 250:
            cut = row.rfind(" ", 0, 250)
            lines.append(row[:cut])
            row = "   " + row[cut + 1 :]
        lines.append(row)
    lines.append("Bounds")
    for name, kind in model.variables.items():
        if kind == "C":
            lines.append(f" {name} free")
    lines.append("Binary")
    binaries = [name for name, kind in model.variables.items() if kind == "B"]
    for start in range(0, len(binaries), 8):
        lines.append(" " + " ".join(binaries[start : start + 8]))
    lines.append("End")
    text = "\n".join(lines) + "\n"
    if hasattr(path, "write"):
        path.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def node_candidate_thresholds(problem: InferenceProblem, template_idx: int, theta_idx: int, subset=None):
    """Candidate thresholds for one column, restricted to a sample subset."""
    col = problem.table.values[template_idx][theta_idx]
    if subset is not None:
        col = col[subset]
    return candidate_thresholds(col)
