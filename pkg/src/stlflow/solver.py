"""Exact maximization of the tree objective over the discrete solution space.

`solve_exact` searches node roles, primitive columns and threshold candidates
with an admissible-bound branch-and-bound organized as a recursive
optimal-subtree computation (the objective is additive over nodes, so subtree
optima compose).  `solve_bruteforce` is an independent exhaustive oracle for
small instances.

Both searches use the same deterministic total order on solutions: higher
objective first, then fewer decision nodes, then the lexicographically
smallest role assignment in skeleton breadth-first order, where a node entry
is (classify, class) < (decision, column, threshold index) < (unused,) and
columns are ranked nested chains first, '<' relation first, then coordinate.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .encoding import InferenceProblem, score
from .primitives import candidate_thresholds, instantiate
from .tree import Classify, Decision, TreeSolution

__all__ = [
    "SolveBudget",
    "SearchNode",
    "SolveResult",
    "admissible_bound",
    "solve_exact",
    "solve_bruteforce",
    "BudgetExhausted",
    "SearchSpaceTooLarge",
    "enumeration_cost",
    "STATUS_OPTIMAL",
    "STATUS_BUDGET",
]

STATUS_OPTIMAL = "optimal"
STATUS_BUDGET = "budget-exhausted-best-found"


@dataclass
class SolveBudget:
    """Caps on the search effort."""

    wall_secs: float = 1800.0
    max_expansions: int = 10**9
    target_objective: float | None = None

    def __post_init__(self):
        if self.wall_secs <= 0 or self.max_expansions <= 0:
            raise ValueError("budget limits must be positive")


@dataclass
class SearchNode:
    """Summary of a partial assignment during search."""

    committed_correct: int
    routable: int
    decisions: int


def admissible_bound(node: SearchNode, lam: float) -> float:
    """Upper bound on the objective of any completion of `node`.

    Every still-routable sample contributes at most (1 - lam) and any further
    decision only subtracts, so this never underestimates a completion.
    """
    return (
        (1.0 - lam) * node.committed_correct
        + (1.0 - lam) * node.routable
        - lam * node.decisions
    )


class BudgetExhausted(RuntimeError):
    pass


class SearchSpaceTooLarge(ValueError):
    pass


@dataclass
class SolveResult:
    solution: TreeSolution
    status: str
    objective: float
    ncorrect: int
    ndecisions: int
    expansions: int = 0
    runtime_secs: float = 0.0


# ---------------------------------------------------------------------------
# subtree summaries and the shared total order


@dataclass(frozen=True)
class _Sub:
    """Subtree summary: counts plus breadth-first key levels for tie-breaks."""

    correct: int
    ndec: int
    levels: tuple
    node: tuple  # ('c', label) | ('d', col_pos, j, pi, left_node, right_node)


_UNUSED_CODE = (2,)


def _pad_levels(code, rem):
    levels = [(code,)]
    width = 1
    for _ in range(rem):
        width *= 2
        levels.append((_UNUSED_CODE,) * width)
    return tuple(levels)


def _make_classify(label: int, count: int, rem: int) -> _Sub:
    return _Sub(int(count), 0, _pad_levels((0, int(label)), rem), ("c", int(label)))


def _make_decision(col_pos: int, j: int, pi: float, left: _Sub, right: _Sub) -> _Sub:
    levels = [((1, int(col_pos), int(j)),)]
    for lv_l, lv_r in zip(left.levels, right.levels):
        levels.append(lv_l + lv_r)
    return _Sub(
        left.correct + right.correct,
        1 + left.ndec + right.ndec,
        tuple(levels),
        ("d", int(col_pos), int(j), float(pi), left.node, right.node),
    )


def _better(a: _Sub, b: _Sub, lam: float) -> bool:
    """Strict order: objective, then fewer decisions, then smaller key."""
    sa = score(a.correct, a.ndec, lam)
    sb = score(b.correct, b.ndec, lam)
    if sa != sb:
        return sa > sb
    if a.ndec != b.ndec:
        return a.ndec < b.ndec
    return a.levels < b.levels


def _beats_tuple(correct: int, ndec: int, best: _Sub, lam: float) -> bool:
    """Could a solution with these counts strictly beat `best`?"""
    s = score(correct, ndec, lam)
    sb = score(best.correct, best.ndec, lam)
    if s != sb:
        return s > sb
    return ndec < best.ndec


# ---------------------------------------------------------------------------
# sorted column views over one sample subset


class _ColumnSweep:
    """Per-column descending sort of the robustness values of one subset.

    A split "left = top k" is realizable by a threshold iff k is 0, m, or a
    strict value drop.  Ascending threshold candidates correspond to k in
    descending order: j = 0 puts everything left, j = n_distinct nothing.
    """

    def __init__(self, tau_subset: np.ndarray, onehot_subset: np.ndarray):
        ncol, m = tau_subset.shape
        self.m = m
        self.order = np.argsort(-tau_subset, axis=1, kind="stable")
        self.sorted_tau = np.take_along_axis(tau_subset, self.order, axis=1)
        n_classes = onehot_subset.shape[0]
        sorted_lab = np.empty((n_classes, ncol, m), dtype=np.int32)
        for c in range(n_classes):
            sorted_lab[c] = onehot_subset[c][self.order]
        self.cum = np.cumsum(sorted_lab, axis=2)
        self.totals = onehot_subset.sum(axis=1).astype(np.int64)
        if m > 1:
            self.drops = self.sorted_tau[:, :-1] > self.sorted_tau[:, 1:]
        else:
            self.drops = np.zeros((ncol, 0), dtype=bool)
        majL = np.zeros((ncol, m + 1), dtype=np.int64)
        majR = np.zeros((ncol, m + 1), dtype=np.int64)
        argL = np.zeros((ncol, m + 1), dtype=np.int64)
        argR = np.zeros((ncol, m + 1), dtype=np.int64)
        if m:
            majL[:, 1:] = self.cum.max(axis=0)
            argL[:, 1:] = self.cum.argmax(axis=0)
            rem_counts = self.totals[:, None, None] - self.cum
            majR[:, 1:] = rem_counts.max(axis=0)
            argR[:, 1:] = rem_counts.argmax(axis=0)
            majR[:, 0] = int(self.totals.max())
            argR[:, 0] = int(self.totals.argmax())
        self.majL, self.majR, self.argL, self.argR = majL, majR, argL, argR
        self.valid = np.zeros((ncol, m + 1), dtype=bool)
        self.valid[:, 0] = True
        if m:
            self.valid[:, m] = True
            if m > 1:
                self.valid[:, 1:m] = self.drops
        self._ks = np.arange(m + 1)

    def value1(self) -> np.ndarray:
        """Correct count of a decision with classify children, per (col, k)."""
        return self.majL + self.majR

    def n_distinct(self, col: int) -> int:
        if self.m == 0:
            return 0
        return 1 + int(self.drops[col].sum())

    def j_of_k(self, col: int, k: int) -> int:
        """Ascending-candidate index realizing left size k."""
        if k == self.m:
            return 0
        above = int(self.drops[col, k:].sum()) if self.m > 1 else 0
        return 1 + above

    def threshold(self, col: int, k: int) -> float:
        """Candidate threshold realizing left size k (matches the candidate
        list built from distinct values: midpoints plus sentinels)."""
        st = self.sorted_tau[col]
        delta = max(1.0, float(st[0] - st[-1]))
        if k == self.m:
            return float(st[-1] - delta)
        if k == 0:
            return float(st[0] + delta)
        return float(st[k] + st[k - 1]) / 2.0

    def left_pure_max_k(self, col: int) -> int:
        """Largest valid k in [1, m] whose top block is single-class (0: none)."""
        mask = self.valid[col, 1:] & (self.majL[col, 1:] == self._ks[1:])
        hits = np.flatnonzero(mask)
        return int(hits[-1]) + 1 if hits.size else 0

    def right_pure_min_k(self, col: int):
        """Smallest valid k in [0, m-1] whose bottom block is single-class."""
        m = self.m
        mask = self.valid[col, :m] & (self.majR[col, :m] == m - self._ks[:m])
        hits = np.flatnonzero(mask)
        return int(hits[0]) if hits.size else None

    def right_pure_ks(self, col: int, start: int):
        """Valid ks in [start+1, m-1] whose bottom block stays single-class."""
        m = self.m
        mask = self.valid[col, :m] & (self.majR[col, :m] == m - self._ks[:m])
        hits = np.flatnonzero(mask)
        return [int(k) for k in hits if k > start]


# ---------------------------------------------------------------------------
# exact search


class _TreeSearch:
    def __init__(self, problem: InferenceProblem, budget: SolveBudget):
        self.problem = problem
        self.budget = budget
        self.lam = problem.lam
        self.n = problem.n_samples
        cols = problem.columns
        self.tau = np.vstack(
            [problem.table.values[p][t][None, :] for (p, t) in cols]
        )
        self.onehot = np.stack(
            [(problem.labels == c).astype(np.int32) for c in problem.classes]
        )
        self.memo: dict = {}
        self.expansions = 0
        self.deadline = time.monotonic() + budget.wall_secs
        self.report = None
        self._depth_in = 0

    def _tick(self, k: int = 1):
        before = self.expansions
        self.expansions += k
        if before // 256 != self.expansions // 256:
            if time.monotonic() > self.deadline:
                raise BudgetExhausted("wall-clock budget exhausted")
        if self.expansions > self.budget.max_expansions:
            raise BudgetExhausted("node-expansion budget exhausted")

    def _subset_bytes(self, subset: np.ndarray) -> bytes:
        mask = np.zeros(self.n, dtype=bool)
        mask[subset] = True
        return np.packbits(mask).tobytes()

    def _classify_sub(self, subset: np.ndarray, rem: int) -> _Sub:
        if subset.size == 0:
            return _make_classify(self.problem.classes[0], 0, rem)
        counts = self.onehot[:, subset].sum(axis=1)
        c = int(np.argmax(counts))
        return _make_classify(self.problem.classes[c], int(counts[c]), rem)

    def _sweep(self, subset: np.ndarray) -> _ColumnSweep:
        return _ColumnSweep(self.tau[:, subset], self.onehot[:, subset])

    def _report_if_root(self, sub: _Sub):
        if self.report is not None and self._depth_in == 1:
            self.report(sub)

    # -- best decision with classify children (the one-decision optimum)

    def _selection(self, subset: np.ndarray, sweep: _ColumnSweep | None = None):
        """(value, col, k, j, pi, left_label, left_count, right_label,
        right_count) of the best single split, or None on an empty subset."""
        key = ("sel", self._subset_bytes(subset))
        if key in self.memo:
            return self.memo[key]
        if subset.size == 0:
            self.memo[key] = None
            return None
        self._tick()
        if sweep is None:
            sweep = self._sweep(subset)
        masked = np.where(sweep.valid, sweep.value1(), -1)
        col_best = masked.max(axis=1)
        v_star = int(col_best.max())
        col = int(np.argmax(col_best == v_star))
        row = masked[col]
        k = int(len(row) - 1 - np.argmax(row[::-1] == v_star))
        j = sweep.j_of_k(col, k)
        pi = sweep.threshold(col, k)
        classes = self.problem.classes
        left_label = classes[int(sweep.argL[col, k])] if k else classes[0]
        right_label = classes[int(sweep.argR[col, k])] if k < sweep.m else classes[0]
        out = (
            v_star,
            col,
            k,
            j,
            pi,
            left_label,
            int(sweep.majL[col, k]),
            right_label,
            int(sweep.majR[col, k]),
        )
        self.memo[key] = out
        return out

    def _selection_sub(self, selection, rem: int) -> _Sub:
        _v, col, _k, j, pi, ll, lc, rl, rc = selection
        left = _make_classify(ll, lc, rem - 1)
        right = _make_classify(rl, rc, rem - 1)
        return _make_decision(col, j, pi, left, right)

    def _perfect1(self, subset: np.ndarray) -> bool:
        """A single split (or nothing) classifies the whole subset correctly."""
        if subset.size == 0:
            return True
        sel = self._selection(subset)
        return sel is not None and sel[0] == subset.size

    def _split_subset(self, subset, sweep: _ColumnSweep, col: int, k: int):
        idx = sweep.order[col]
        return subset[idx[:k]], subset[idx[k:]]

    # -- main recursion

    def best(self, subset: np.ndarray, rem: int) -> _Sub:
        key = (rem, self._subset_bytes(subset))
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        self._depth_in += 1
        try:
            result = self._classify_sub(subset, rem)
            self._report_if_root(result)
            if rem >= 1 and subset.size:
                self._tick()
                sweep = self._sweep(subset)
                selection = self._selection(subset, sweep)
                if selection is not None:
                    cand = self._selection_sub(selection, rem)
                    if _better(cand, result, self.lam):
                        result = cand
                        self._report_if_root(result)
                if rem >= 2:
                    result = self._deepen(subset, sweep, rem, result)
        finally:
            self._depth_in -= 1
        self.memo[key] = result
        return result

    def _pattern_walk(self, subset, sweep: _ColumnSweep, rem: int, best: _Sub) -> _Sub:
        """First (in key order) root split classifying everything with two
        decisions: one child a pure classify, the other a perfect single
        split.  Since a perfect subset stays perfect under restriction, one
        probe per column and pattern decides whether the column can hit, so
        the walk stops at the first hit."""
        m = subset.size
        ncol = sweep.order.shape[0]
        classes = self.problem.classes
        for col in range(ncol):
            self._tick()
            hits = []
            k_a = sweep.left_pure_max_k(col)
            if 1 <= k_a < m:
                _sl, sr = self._split_subset(subset, sweep, col, k_a)
                if self._perfect1(sr):
                    left = _make_classify(
                        classes[int(sweep.argL[col, k_a])], k_a, rem - 1
                    )
                    right = self._selection_sub(self._selection(sr), rem - 1)
                    hits.append(
                        _make_decision(
                            col, sweep.j_of_k(col, k_a), sweep.threshold(col, k_a),
                            left, right,
                        )
                    )
            k_b = sweep.right_pure_min_k(col)
            if k_b is not None and 1 <= k_b < m:
                sl, _sr = self._split_subset(subset, sweep, col, k_b)
                if self._perfect1(sl):
                    # push k as high as the left side stays one-split perfect
                    k_star = k_b
                    ks = sweep.right_pure_ks(col, k_b)
                    lo_i, hi_i = 0, len(ks) - 1
                    while lo_i <= hi_i:
                        mid = (lo_i + hi_i) // 2
                        sl2, _ = self._split_subset(subset, sweep, col, ks[mid])
                        if self._perfect1(sl2):
                            k_star = ks[mid]
                            lo_i = mid + 1
                        else:
                            hi_i = mid - 1
                    sl3, _sr3 = self._split_subset(subset, sweep, col, k_star)
                    left = self._selection_sub(self._selection(sl3), rem - 1)
                    right = _make_classify(
                        classes[int(sweep.argR[col, k_star])], m - k_star, rem - 1
                    )
                    hits.append(
                        _make_decision(
                            col, sweep.j_of_k(col, k_star),
                            sweep.threshold(col, k_star), left, right,
                        )
                    )
            if hits:
                cand = hits[0]
                for h in hits[1:]:
                    if _better(h, cand, self.lam):
                        cand = h
                if _better(cand, best, self.lam):
                    best = cand
                    self._report_if_root(best)
                return best
        return best

    def _deepen(self, subset, sweep: _ColumnSweep, rem: int, best: _Sub) -> _Sub:
        m = subset.size
        # all-correct with two decisions, fast pattern scan
        if _beats_tuple(m, 2, best, self.lam):
            best = self._pattern_walk(subset, sweep, rem, best)
        # deeper trees need at least three decisions
        if not _beats_tuple(m, 3, best, self.lam):
            return best
        ncol = sweep.order.shape[0]
        for col in range(ncol):
            row_valid = sweep.valid[col]
            for k in range(m, -1, -1):
                if not row_valid[k]:
                    continue
                self._tick()
                sl, sr = self._split_subset(subset, sweep, col, k)
                left = self.best(sl, rem - 1)
                if not _beats_tuple(
                    left.correct + (m - k), 1 + left.ndec, best, self.lam
                ):
                    continue
                right = self.best(sr, rem - 1)
                cand = _make_decision(
                    col, sweep.j_of_k(col, k), sweep.threshold(col, k), left, right
                )
                if _better(cand, best, self.lam):
                    best = cand
                    self._report_if_root(best)
        return best


def _sub_to_solution(problem: InferenceProblem, root: _Sub) -> TreeSolution:
    from .encoding import route_sample

    roles: dict = {}

    def rec(node, n):
        if node[0] == "c":
            roles[n] = Classify(node[1])
            return
        _, col_pos, _j, pi, left, right = node
        psi, theta = problem.columns[col_pos]
        template = problem.templates[psi]
        theta_params = problem.theta_grids[template.arity][theta]
        roles[n] = Decision(psi, theta, pi, instantiate(template, theta_params, pi))
        rec(left, 2 * n)
        rec(right, 2 * n + 1)

    rec(root.node, 1)
    solution = TreeSolution(problem.skeleton.depth, roles)
    flows = []
    for i in range(problem.n_samples):
        path, sink, _ = route_sample(problem, solution, i)
        flows.append(path if sink is not None else [])
    solution.flows = flows
    return solution


def solve_exact(problem: InferenceProblem, budget: SolveBudget | None = None) -> SolveResult:
    """Search the full candidate space; return the best tree found and a
    status flag saying whether optimality was certified."""
    budget = budget or SolveBudget()
    search = _TreeSearch(problem, budget)
    t0 = time.monotonic()
    all_samples = np.arange(problem.n_samples)
    depth = problem.skeleton.depth
    incumbent = search._classify_sub(all_samples, depth)
    status = STATUS_OPTIMAL

    def report(sub: _Sub):
        nonlocal incumbent
        if _better(sub, incumbent, problem.lam):
            incumbent = sub
        if (
            budget.target_objective is not None
            and score(sub.correct, sub.ndec, problem.lam) >= budget.target_objective
        ):
            raise BudgetExhausted("target objective reached")

    search.report = report
    try:
        root = search.best(all_samples, depth)
        if not _better(incumbent, root, problem.lam):
            incumbent = root
    except BudgetExhausted:
        status = STATUS_BUDGET
    solution = _sub_to_solution(problem, incumbent)
    return SolveResult(
        solution=solution,
        status=status,
        objective=score(incumbent.correct, incumbent.ndec, problem.lam),
        ncorrect=incumbent.correct,
        ndecisions=incumbent.ndec,
        expansions=search.expansions,
        runtime_secs=time.monotonic() - t0,
    )


# ---------------------------------------------------------------------------
# brute-force oracle


def enumeration_cost(problem: InferenceProblem) -> float:
    """Work estimate of the exhaustive recursion (candidate evaluations)."""
    ncand = 0
    for p, t in problem.columns:
        col = problem.table.values[p][t]
        ncand += len(np.unique(col)) + 1
    n_classes = float(len(problem.classes))
    cost = n_classes
    for _ in range(problem.skeleton.depth):
        cost = n_classes + ncand * (2.0 * cost)
    return cost


def solve_bruteforce(problem: InferenceProblem, max_cost: float = 1e7) -> SolveResult:
    """Exhaustive enumeration over node roles, columns and thresholds.

    Evaluates every candidate split by direct threshold masks (no sorting,
    no bounds, no pruning) and applies the same tie-break order as
    `solve_exact`.  Refuses instances whose estimated enumeration cost
    exceeds `max_cost`.
    """
    cost = enumeration_cost(problem)
    if cost > max_cost:
        raise SearchSpaceTooLarge(
            f"estimated enumeration cost {cost:.3g} exceeds {max_cost:.3g}"
        )
    t0 = time.monotonic()
    lam = problem.lam
    cols = problem.columns
    tau = np.vstack([problem.table.values[p][t][None, :] for (p, t) in cols])
    onehot = np.stack(
        [(problem.labels == c).astype(np.int64) for c in problem.classes]
    )
    classes = problem.classes
    leaf_memo: dict = {}

    def classify_sub(subset, rem):
        if subset.size == 0:
            return _make_classify(classes[0], 0, rem)
        counts = onehot[:, subset].sum(axis=1)
        c = int(np.argmax(counts))
        return _make_classify(classes[c], int(counts[c]), rem)

    def depth1(subset):
        key = subset.tobytes()
        hit = leaf_memo.get(key)
        if hit is not None:
            return hit
        best_sub = classify_sub(subset, 1)
        if subset.size:
            oh = onehot[:, subset]
            totals = oh.sum(axis=1)
            for col_pos in range(len(cols)):
                col = tau[col_pos, subset]
                cands = candidate_thresholds(col)
                left_masks = col[None, :] >= cands[:, None]
                counts_left = np.einsum("jm,cm->jc", left_masks, oh)
                counts_right = totals[None, :] - counts_left
                for j in range(len(cands)):
                    lc = counts_left[j]
                    rc = counts_right[j]
                    lbl_l = int(np.argmax(lc))
                    lbl_r = int(np.argmax(rc))
                    cand = _make_decision(
                        col_pos,
                        j,
                        float(cands[j]),
                        _make_classify(classes[lbl_l], int(lc[lbl_l]), 0),
                        _make_classify(classes[lbl_r], int(rc[lbl_r]), 0),
                    )
                    if _better(cand, best_sub, lam):
                        best_sub = cand
        leaf_memo[key] = best_sub
        return best_sub

    def best(subset, rem):
        result = classify_sub(subset, rem)
        if rem == 0 or subset.size == 0:
            return result
        if rem == 1:
            return depth1(subset)
        for col_pos in range(len(cols)):
            col = tau[col_pos, subset]
            cands = candidate_thresholds(col)
            for j, pi in enumerate(cands):
                left_mask = col >= pi
                cand = _make_decision(
                    col_pos,
                    j,
                    float(pi),
                    best(subset[left_mask], rem - 1),
                    best(subset[~left_mask], rem - 1),
                )
                if _better(cand, result, lam):
                    result = cand
        return result

    root = best(np.arange(problem.n_samples), problem.skeleton.depth)
    solution = _sub_to_solution(problem, root)
    return SolveResult(
        solution=solution,
        status=STATUS_OPTIMAL,
        objective=score(root.correct, root.ndec, lam),
        ncorrect=root.correct,
        ndecisions=root.ndec,
        runtime_secs=time.monotonic() - t0,
    )
