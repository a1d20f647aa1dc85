"""Classification-tree skeleton, solved node roles and the deployable tree.

The skeleton is a complete binary tree of a fixed depth with heap-style node
ids (internal nodes 1..2^D-1, leaves 2^D..2^(D+1)-1) plus an implicit source
feeding node 1 and a sink every node can classify into.  A solved tree
assigns each node a role: a primitive decision, a class prediction, or
unused.  Dropping unused nodes yields the binary decision tree used for
deployment.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .stl import And, Formula, Not, Signal, TRUE, format_formula, horizon, parse_formula, satisfies, Or

__all__ = [
    "ClassificationTree",
    "build_skeleton",
    "Decision",
    "Classify",
    "UNUSED",
    "TreeSolution",
    "DecisionNode",
    "ClassNode",
    "DecisionTree",
    "extract_bdt",
    "classify",
    "ccr",
    "summarize_formulae",
    "tree_to_json",
    "tree_from_json",
]

MAX_DEPTH = 4


@dataclass(frozen=True)
class ClassificationTree:
    """Complete source/sink tree skeleton of a given depth."""

    depth: int

    def __post_init__(self):
        if not 1 <= self.depth <= MAX_DEPTH:
            raise ValueError(f"depth must be between 1 and {MAX_DEPTH}")

    @property
    def internal_nodes(self):
        return list(range(1, 2**self.depth))

    @property
    def leaves(self):
        return list(range(2**self.depth, 2 ** (self.depth + 1)))

    @property
    def nodes(self):
        return self.internal_nodes + self.leaves

    def is_leaf(self, n: int) -> bool:
        return n >= 2**self.depth

    @staticmethod
    def left(n: int) -> int:
        return 2 * n

    @staticmethod
    def right(n: int) -> int:
        return 2 * n + 1

    @staticmethod
    def parent(n: int) -> int:
        return n // 2


def build_skeleton(depth: int) -> ClassificationTree:
    """Complete skeleton; depth 2 gives internal nodes {1,2,3}, leaves {4..7}."""
    return ClassificationTree(depth)


@dataclass(frozen=True)
class Decision:
    """Internal node checking one instantiated primitive."""

    psi: int
    theta: int
    pi: float
    formula: Formula


@dataclass(frozen=True)
class Classify:
    label: int


class _Unused:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNUSED"


UNUSED = _Unused()


@dataclass
class TreeSolution:
    """Role assignment over a skeleton, plus optional per-sample flow traces.

    `flows[i]` is the list of node ids sample i traverses on its way to the
    sink, empty when the sample is not correctly classified (no flow).
    """

    depth: int
    roles: dict
    flows: list | None = None

    def __post_init__(self):
        skel = ClassificationTree(self.depth)
        for n in skel.nodes:
            role = self.roles.get(n, UNUSED)
            self.roles[n] = role
            if skel.is_leaf(n) and isinstance(role, Decision):
                raise ValueError(f"leaf {n} cannot carry a decision")

    @property
    def skeleton(self) -> ClassificationTree:
        return ClassificationTree(self.depth)

    def n_decisions(self) -> int:
        return sum(1 for r in self.roles.values() if isinstance(r, Decision))


@dataclass(frozen=True)
class ClassNode:
    label: int


@dataclass(frozen=True)
class DecisionNode:
    formula: Formula
    left: object
    right: object


@dataclass(frozen=True)
class DecisionTree:
    """Deployable binary decision tree extracted from a solved skeleton."""

    root: object

    def max_horizon(self) -> int:
        def rec(node):
            if isinstance(node, ClassNode):
                return 0
            return max(horizon(node.formula), rec(node.left), rec(node.right))

        return rec(self.root)

    def classes(self) -> list:
        out = set()

        def rec(node):
            if isinstance(node, ClassNode):
                out.add(node.label)
            else:
                rec(node.left)
                rec(node.right)

        rec(self.root)
        return sorted(out)


def extract_bdt(solution: TreeSolution) -> DecisionTree:
    """Drop unused nodes: decisions become internal nodes (left branch =
    satisfied), classifications become leaves."""
    skel = solution.skeleton

    def rec(n: int):
        role = solution.roles.get(n, UNUSED)
        if isinstance(role, Classify):
            return ClassNode(role.label)
        if isinstance(role, Decision):
            return DecisionNode(role.formula, rec(skel.left(n)), rec(skel.right(n)))
        raise ValueError(f"node {n} is reachable but has no decision or class")

    return DecisionTree(rec(1))


def classify(dt: DecisionTree, s: Signal) -> int:
    """Walk the tree: go left iff the node formula is satisfied at step 0."""
    if dt.max_horizon() > s.horizon:
        from .stl import HorizonError

        raise HorizonError(0, dt.max_horizon(), s.horizon)
    node = dt.root
    while isinstance(node, DecisionNode):
        node = node.left if satisfies(s, node.formula, 0) else node.right
    return node.label


def ccr(dt: DecisionTree, dataset) -> float:
    """Fraction of dataset samples whose predicted class matches the label."""
    if dataset.n_samples == 0:
        raise ValueError("empty dataset")
    hits = sum(
        1
        for i in range(dataset.n_samples)
        if classify(dt, dataset.signal(i)) == int(dataset.labels[i])
    )
    return hits / dataset.n_samples


def _paths(node, prefix):
    if isinstance(node, ClassNode):
        yield node.label, list(prefix)
        return
    prefix.append((node.formula, True))
    yield from _paths(node.left, prefix)
    prefix.pop()
    prefix.append((node.formula, False))
    yield from _paths(node.right, prefix)
    prefix.pop()


def _absorb(disjuncts):
    """Sound simplifications on a list of literal-conjunctions.

    1. unit absorption: X or (not X and B) == X or B, for unit disjuncts X
    2. subsumption: drop any disjunct that is a superset of another
    """
    disjuncts = [list(d) for d in disjuncts]
    changed = True
    while changed:
        changed = False
        units = [d[0] for d in disjuncts if len(d) == 1]
        for d in disjuncts:
            if len(d) <= 1:
                continue
            kept = [
                lit for lit in d if (lit[0], not lit[1]) not in units
            ]
            if len(kept) != len(d):
                del d[:]
                d.extend(kept)
                changed = True
        sets = [frozenset(d) for d in disjuncts]
        drop = set()
        for i, si in enumerate(sets):
            for j, sj in enumerate(sets):
                if i != j and j not in drop and i not in drop and si < sj:
                    drop.add(j)
        # identical disjuncts: keep the first
        seen = {}
        for i, si in enumerate(sets):
            if i in drop:
                continue
            if si in seen:
                drop.add(i)
            else:
                seen[si] = i
        if drop:
            disjuncts = [d for i, d in enumerate(disjuncts) if i not in drop]
            changed = True
    return disjuncts


def _literal(formula: Formula, positive: bool) -> Formula:
    return formula if positive else Not(formula)


def summarize_formulae(dt: DecisionTree) -> dict:
    """Per-class formula: disjunction over that class's leaves of the
    conjunction along the root-to-leaf path (right branches negated)."""
    by_class: dict = {}
    for label, path in _paths(dt.root, []):
        by_class.setdefault(label, []).append(path)
    out = {}
    for label in sorted(by_class):
        disjuncts = _absorb(by_class[label])
        terms = []
        for d in disjuncts:
            if not d:
                terms = [TRUE]
                break
            conj = _literal(*d[0])
            for lit in d[1:]:
                conj = And(conj, _literal(*lit))
            terms.append(conj)
        phi = terms[0]
        for term in terms[1:]:
            phi = Or(phi, term)
        out[label] = phi
    return out


def tree_to_json(dt: DecisionTree) -> str:
    """Serialize to a stable JSON document (formulas in the text grammar)."""
    nodes = []

    def rec(node):
        nid = len(nodes)
        if isinstance(node, ClassNode):
            nodes.append(
                {"id": nid, "kind": "class", "formula": None, "class": node.label,
                 "left": None, "right": None}
            )
            return nid
        rec_entry = {"id": nid, "kind": "decision", "formula": format_formula(node.formula),
                     "class": None, "left": None, "right": None}
        nodes.append(rec_entry)
        rec_entry["left"] = rec(node.left)
        rec_entry["right"] = rec(node.right)
        return nid

    rec(dt.root)
    return json.dumps({"format": "stlflow-bdt-v1", "root": 0, "nodes": nodes},
                      indent=2, sort_keys=True)


def tree_from_json(text: str) -> DecisionTree:
    doc = json.loads(text)
    if doc.get("format") != "stlflow-bdt-v1":
        raise ValueError("not a stlflow decision-tree document")
    nodes = {n["id"]: n for n in doc["nodes"]}

    def rec(nid):
        n = nodes[nid]
        if n["kind"] == "class":
            return ClassNode(int(n["class"]))
        return DecisionNode(parse_formula(n["formula"]), rec(n["left"]), rec(n["right"]))

    return DecisionTree(rec(doc["root"]))
