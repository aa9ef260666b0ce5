"""Scenario trees with dense breadth-first node ids."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence


class TreeError(ValueError):
    pass


class EmptyBranching(TreeError):
    pass


class NonUnitRoot(TreeError):
    pass


class ProbabilityMismatch(TreeError):
    pass


class UnknownNode(TreeError, KeyError):
    pass


class RootHasNoPath(TreeError):
    pass


@dataclass(frozen=True)
class NodeRecord:
    id: int
    stage: int                 # 1-based; the root is stage 1
    parent: int | None
    probability: float
    children: tuple = ()
    payload: Any = None


@dataclass(frozen=True)
class ScenarioTree:
    branching: tuple
    nodes: tuple
    stage_nodes: tuple = field(repr=False)   # stage_nodes[s-1] -> tuple of ids

    @property
    def stage_count(self) -> int:
        return len(self.branching)

    @property
    def root(self) -> int:
        return 0

    def __len__(self):
        return len(self.nodes)

    def node(self, n: int) -> NodeRecord:
        if not isinstance(n, int) or n < 0 or n >= len(self.nodes):
            raise UnknownNode(n)
        return self.nodes[n]

    def stage(self, n: int) -> int:
        return self.node(n).stage

    def parent(self, n: int) -> int | None:
        return self.node(n).parent

    def children(self, n: int) -> tuple:
        return self.node(n).children

    def probability(self, n: int) -> float:
        return self.node(n).probability

    @property
    def leaves(self) -> tuple:
        return self.stage_nodes[-1]

    def is_leaf(self, n: int) -> bool:
        return self.stage(n) == self.stage_count

    def non_root(self) -> tuple:
        return tuple(range(1, len(self.nodes)))

    def non_leaf(self) -> tuple:
        return tuple(n for s in self.stage_nodes[:-1] for n in s)

    def interior(self) -> tuple:
        """Nodes that are neither the root nor leaves."""
        return tuple(n for s in self.stage_nodes[1:-1] for n in s)

    def ancestors(self, n: int) -> list:
        """Root..n inclusive."""
        out = []
        cur = n
        while cur is not None:
            out.append(cur)
            cur = self.node(cur).parent
        return out[::-1]

    def to_dict(self) -> dict:
        return {
            "branching": list(self.branching),
            "nodes": [{"id": r.id, "stage": r.stage, "parent": r.parent,
                       "probability": r.probability} for r in self.nodes],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioTree":
        branching = list(data["branching"])
        probs = {int(r["id"]): float(r["probability"]) for r in data["nodes"]}
        tree = build_tree(branching)
        if not all(math.isclose(probs.get(r.id, -1.0), r.probability, rel_tol=1e-12, abs_tol=1e-15)
                   for r in tree.nodes):
            conditional = []
            for s in range(1, tree.stage_count):
                first_parent = tree.stage_nodes[s - 1][0]
                kids = tree.children(first_parent)
                pp = probs[first_parent]
                conditional.append([probs[k] / pp for k in kids])
            tree = build_tree(branching, [[1.0]] + conditional)
        return tree


def build_tree(branching: Sequence[int], conditional_probs="uniform") -> ScenarioTree:
    """Build a tree where every stage-(t-1) node has ``branching[t]`` children.

    ``conditional_probs`` is ``"uniform"`` or one probability vector per stage
    (the first being ``[1.0]``); the same vector is applied under every parent.
    """
    branching = [int(r) for r in branching]
    if not branching:
        raise EmptyBranching("branching must name at least the root stage")
    if branching[0] != 1:
        raise NonUnitRoot(f"R_1 must be 1, got {branching[0]}")
    if any(r < 1 for r in branching):
        raise TreeError("branching factors must be positive")
    if conditional_probs == "uniform":
        cond = [[1.0 / r] * r for r in branching]
    else:
        cond = [list(map(float, p)) for p in conditional_probs]
        if len(cond) != len(branching):
            raise ProbabilityMismatch("need one probability vector per stage")
        for r, p in zip(branching, cond):
            if len(p) != r or abs(sum(p) - 1.0) > 1e-12 or min(p) <= 0:
                raise ProbabilityMismatch(f"bad conditional probabilities {p} for R={r}")

    parents = [None]
    stages = [1]
    probs = [1.0]
    stage_nodes = [(0,)]
    for s in range(1, len(branching)):
        level = []
        for par in stage_nodes[-1]:
            for k in range(branching[s]):
                nid = len(parents)
                parents.append(par)
                stages.append(s + 1)
                probs.append(probs[par] * cond[s][k])
                level.append(nid)
        stage_nodes.append(tuple(level))

    kids = [[] for _ in parents]
    for nid, par in enumerate(parents):
        if par is not None:
            kids[par].append(nid)
    nodes = tuple(NodeRecord(i, stages[i], parents[i], probs[i], tuple(kids[i]))
                  for i in range(len(parents)))
    return ScenarioTree(tuple(branching), nodes, tuple(stage_nodes))


def siblings(tree: ScenarioTree, n: int) -> tuple:
    """Children of n's parent, excluding n (empty for the root)."""
    rec = tree.node(n)
    if rec.parent is None:
        return ()
    return tuple(k for k in tree.children(rec.parent) if k != n)


def path_to_parent(tree: ScenarioTree, n: int) -> list:
    """Nodes from the root down to ``a(n)``, in order."""
    rec = tree.node(n)
    if rec.parent is None:
        raise RootHasNoPath("the root has no parent path")
    return tree.ancestors(rec.parent)


def sharing_capacity(tree: ScenarioTree) -> int:
    return sum(len(siblings(tree, n)) for n in range(len(tree)))
