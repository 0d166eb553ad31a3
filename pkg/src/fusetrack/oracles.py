"""Independent exact references for the labeling problem.

These solvers are deliberately simple and exhaustive: they are used by tests
as ground truth for the fast approximate pipeline, and by the hierarchical
refinement to solve small contracted problems to optimality.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .graph import CostGraph, Labeling

EXACT_NODE_LIMIT = 16
ENUMERATION_LIMIT = 10**6


@dataclass(frozen=True)
class ExactSolution:
    """Global optimum of a labeling problem plus search statistics."""

    labeling: Labeling
    objective: float
    nodes_explored: int


def exact_partition_solver(
    graph: CostGraph, n_labels: int, node_limit: int = EXACT_NODE_LIMIT
) -> ExactSolution:
    """Globally optimal labeling by branch-and-bound over node decisions.

    Label identities are irrelevant to the cost, so the search enumerates
    set partitions of the selected nodes (reject / join an existing block /
    open a new block, capped at ``n_labels`` blocks) instead of label
    vectors.  The admissible bound adds, for every undecided node, the best
    cost it could possibly contribute: ``min(0, c_v + sum of negative edge
    weights at v)``.
    """
    n = graph.n
    if n > node_limit:
        raise ValueError(f"exact solver limited to {node_limit} nodes, got {n}")
    if n_labels < 1:
        raise ValueError("n_labels must be >= 1")
    if n == 0:
        return ExactSolution(Labeling((), n_labels), 0.0, 0)

    dense = graph.adjacency.toarray()
    costs = graph.unary
    strength = np.abs(dense).sum(axis=1)
    order = sorted(range(n), key=lambda v: (-strength[v], v))
    neg_gain = np.minimum(0.0, costs + np.minimum(0.0, dense).sum(axis=1))
    tail = np.zeros(n + 1)
    for i in range(n - 1, -1, -1):
        tail[i] = tail[i + 1] + neg_gain[order[i]]

    best_value = 0.0  # rejecting everything is always feasible
    best_blocks: list[list[int]] = []
    explored = 0

    blocks: list[list[int]] = []

    def recurse(i: int, value: float) -> None:
        nonlocal best_value, best_blocks, explored
        explored += 1
        if value + tail[i] >= best_value:
            return
        if i == n:
            best_value = value
            best_blocks = [list(b) for b in blocks]
            return
        v = order[i]
        # ties explore reject, then a fresh block, then joins: equal-cost
        # solutions found first never contain gratuitous merges
        choices: list[tuple[float, int, int]] = [(0.0, 0, -1)]
        if len(blocks) < n_labels:
            choices.append((float(costs[v]), 1, len(blocks)))
        for b, block in enumerate(blocks):
            choices.append((float(costs[v] + dense[v, block].sum()), 2 + b, b))
        for delta, _, action in sorted(choices):
            if action == -1:
                recurse(i + 1, value)
            elif action == len(blocks):
                blocks.append([v])
                recurse(i + 1, value + delta)
                blocks.pop()
            else:
                blocks[action].append(v)
                recurse(i + 1, value + delta)
                blocks[action].pop()

    recurse(0, 0.0)

    assignment: list = [None] * n
    for label, block in enumerate(best_blocks):
        for v in block:
            assignment[v] = label
    labeling = Labeling(tuple(assignment), n_labels)
    return ExactSolution(labeling, graph.objective_of(labeling), explored)


def grid_line_search(
    omega: Callable[[float], float], steps: int
) -> tuple[float, float]:
    """Minimize a scalar function over a uniform grid on [0, 1].

    Returns ``(argmin, min value)``; ties resolve to the smallest grid point.
    """
    if steps < 2:
        raise ValueError("need at least two grid points")
    gammas = np.linspace(0.0, 1.0, steps)
    values = np.array([omega(float(g)) for g in gammas], dtype=np.float64)
    i = int(np.argmin(values))
    return float(gammas[i]), float(values[i])


def enumerate_binarize(
    point: np.ndarray, n_labels: int, limit: int = ENUMERATION_LIMIT
) -> Labeling:
    """Closest feasible binary labeling by full enumeration.

    Every combination of per-node choices (reject first, then each label) is
    scored by squared euclidean distance to ``point``; the first minimizer in
    that lexicographic order wins.
    """
    x = np.asarray(point, dtype=np.float64).reshape(-1)
    if n_labels < 1 or x.size % n_labels != 0:
        raise ValueError("point size is not a multiple of n_labels")
    n = x.size // n_labels
    options = n_labels + 1
    if options**n > limit:
        raise ValueError(f"enumeration of {options}**{n} labelings exceeds {limit}")
    blocks = x.reshape(n, n_labels)
    # distance contribution of node v under option o (0 = reject, k+1 = label k)
    base = (blocks**2).sum(axis=1)
    node_costs = np.empty((n, options), dtype=np.float64)
    node_costs[:, 0] = base
    for k in range(n_labels):
        node_costs[:, k + 1] = base - blocks[:, k] ** 2 + (1.0 - blocks[:, k]) ** 2
    totals = np.zeros(1, dtype=np.float64)
    for v in range(n):
        totals = (totals[:, None] + node_costs[v][None, :]).reshape(-1)
    index = int(np.argmin(totals))
    assignment: list = []
    for v in range(n - 1, -1, -1):
        index, option = divmod(index, options)
        assignment.append(None if option == 0 else option - 1)
    assignment.reverse()
    return Labeling(tuple(assignment), n_labels)
