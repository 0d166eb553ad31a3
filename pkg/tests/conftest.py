"""Shared test helpers: dense-matrix oracles and random instances.

The dense helpers deliberately materialize the full quadratic form the
library is designed to avoid, providing an independent reference path.
"""

import numpy as np
import pytest

from fusetrack.graph import CostGraph, Labeling


def dense_q(graph: CostGraph, n_labels: int) -> np.ndarray:
    """Full (n*P) x (n*P) pairwise matrix: one identical block per label."""
    n = graph.n
    Q = np.zeros((n * n_labels, n * n_labels))
    for u, v, w in zip(graph.edge_u, graph.edge_v, graph.edge_w):
        for k in range(n_labels):
            Q[u * n_labels + k, v * n_labels + k] = w
            Q[v * n_labels + k, u * n_labels + k] = w
    return Q


def dense_c(graph: CostGraph, n_labels: int) -> np.ndarray:
    return np.repeat(graph.unary, n_labels)


def dense_objective(graph: CostGraph, point: np.ndarray, lambda_reg: float = 0.0) -> float:
    n_labels = point.size // graph.n
    Q = dense_q(graph, n_labels)
    c = dense_c(graph, n_labels)
    value = 0.5 * float(point @ Q @ point) + float(c @ point)
    if lambda_reg:
        value += lambda_reg * float(np.sum(point**2 - point))
    return value


def dense_gradient(graph: CostGraph, point: np.ndarray, lambda_reg: float = 0.0) -> np.ndarray:
    n_labels = point.size // graph.n
    grad = dense_q(graph, n_labels) @ point + dense_c(graph, n_labels)
    if lambda_reg:
        grad = grad + lambda_reg * (2.0 * point - 1.0)
    return grad


def random_graph(rng, n, density=0.7, scale=1.0) -> CostGraph:
    unary = rng.uniform(-scale, scale, size=n)
    edges = []
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < density:
                w = float(rng.uniform(-scale, scale))
                if w != 0.0:
                    edges.append((u, v, w))
    return CostGraph(unary, edges)


def random_feasible_point(rng, n, n_labels) -> np.ndarray:
    """Random point in the product of per-node 'at most one label' simplices."""
    blocks = rng.uniform(0.0, 1.0, size=(n, n_labels))
    budget = rng.uniform(0.0, 1.0, size=n)
    sums = blocks.sum(axis=1)
    sums[sums == 0.0] = 1.0
    blocks = blocks * (budget / sums)[:, None]
    return blocks.reshape(-1)


def random_labeling(rng, n, n_labels) -> Labeling:
    assignment = []
    for _ in range(n):
        label = int(rng.integers(-1, n_labels))
        assignment.append(None if label < 0 else label)
    return Labeling(tuple(assignment), n_labels)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
