"""Frank-Wolfe solver over the per-node label simplex polytope.

The feasible set is the product of one "pick at most one label" simplex per
node, whose vertices are exactly the binary labelings.  The solver keeps the
iterate as an (n, labels) block matrix and maintains the pairwise product
``A @ X`` incrementally, so one iteration costs O(edges + n * labels) and no
dense quadratic matrix ever exists.

Three layers are provided:

* the primitives (:func:`linear_minimization_oracle`,
  :func:`optimal_step_size`, :func:`binarize`),
* a single Frank-Wolfe run with away steps and best-binary tracking
  (:func:`solve_fw`),
* the regularization schedule that convexifies the objective, halves the
  regularizer after runs that stop suspiciously early, and keeps the best
  binary solution over all runs including a plain unregularized one
  (:func:`solve_with_schedule`).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .graph import (
    FEASIBILITY_TOL,
    CostGraph,
    Labeling,
    feasibility_violation,
)

# Rebuild the iterate from its active-set representation when convex-update
# rounding drift approaches the feasibility tolerance.
_REBUILD_TRIGGER = 5e-13


@dataclass(frozen=True)
class SolverConfig:
    """Tunables for the Frank-Wolfe runs and the hierarchical refinement."""

    max_iterations: int = 750
    gap_tolerance: float = 1e-4
    max_labels: int = 70
    lambda_halvings_max: int = 8
    short_run_threshold: int = 10
    away_steps: bool = True
    active_set_drop_tolerance: float = 1e-10
    exact_threshold: int = 16
    hierarchy_max_iterations: int = 100
    # Re-enter rejected nodes with positive unary cost instead of negative
    # ones during hierarchical correction (the non-default reading).
    reconsider_positive_unary: bool = False

    def __post_init__(self) -> None:
        if self.max_iterations <= 0 or self.max_labels <= 0:
            raise ValueError("iteration and label caps must be positive")
        if not (0.0 < self.gap_tolerance < 1.0):
            raise ValueError("gap tolerance must be in (0, 1)")
        if self.lambda_halvings_max < 0 or self.short_run_threshold <= 0:
            raise ValueError("schedule parameters must be positive")
        if self.active_set_drop_tolerance <= 0:
            raise ValueError("drop tolerance must be positive")
        if self.exact_threshold < 1 or self.hierarchy_max_iterations < 1:
            raise ValueError("hierarchy thresholds must be positive")


@dataclass(frozen=True)
class TraceSample:
    """One point of a solver convergence trace."""

    seconds: float
    best_objective: float
    gap: float
    lambda_reg: float


@dataclass
class FwResult:
    """Outcome of one Frank-Wolfe run (or of a schedule of runs)."""

    best_binary: Labeling
    best_objective: float
    iterations: int
    final_gap: float
    trace: list[TraceSample]
    lambda_reg: float
    # per-iteration diagnostics, recorded at every loop head
    objective_values: list[float] = field(default_factory=list)
    gap_values: list[float] = field(default_factory=list)
    feasibility_violations: list[float] = field(default_factory=list)


@dataclass
class ScheduleResult:
    """Best run of a regularization schedule plus all individual runs."""

    best: FwResult
    runs: list[FwResult]
    trace: list[TraceSample]

    @property
    def best_binary(self) -> Labeling:
        return self.best.best_binary

    @property
    def best_objective(self) -> float:
        return self.best.best_objective


def linear_minimization_oracle(
    gradient: np.ndarray, n: int, n_labels: int
) -> np.ndarray:
    """Vertex of the feasible polytope minimizing a linear objective.

    Blocks decouple: each node independently picks its smallest gradient
    entry if that entry is negative (ties to the lowest label index) and
    stays unselected otherwise.
    """
    grad = np.asarray(gradient, dtype=np.float64).reshape(-1)
    if grad.size != n * n_labels:
        raise ValueError("gradient dimension mismatch")
    labels = _lmo_labels(grad.reshape(n, n_labels))
    point = np.zeros(n * n_labels, dtype=np.float64)
    sel = np.flatnonzero(labels >= 0)
    point[sel * n_labels + labels[sel]] = 1.0
    return point


def _lmo_labels(grad2d: np.ndarray) -> np.ndarray:
    if grad2d.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    best = np.argmin(grad2d, axis=1)
    values = grad2d[np.arange(grad2d.shape[0]), best]
    labels = np.where(values < 0.0, best, -1)
    return labels.astype(np.int64)


def optimal_step_size(
    slope: float, curvature: float, value_at_0: float, value_at_1: float
) -> float:
    """Exact minimizer over [0, 1] of a 1-d quadratic segment restriction.

    ``slope`` is the directional derivative at 0 and ``curvature`` the
    (constant) second derivative; the endpoint values settle the concave
    case.  The linear case (zero curvature) is decided by the slope sign.
    """
    for name, value in (
        ("slope", slope),
        ("curvature", curvature),
        ("value_at_0", value_at_0),
        ("value_at_1", value_at_1),
    ):
        if math.isnan(value):
            raise ValueError(f"{name} is NaN")
    if curvature == 0.0:
        return 0.0 if slope >= 0.0 else 1.0
    root = -slope / curvature
    if curvature > 0.0:
        return min(max(root, 0.0), 1.0)
    if root >= 1.0:
        return 0.0
    if root <= 0.0:
        return 1.0
    return 0.0 if value_at_0 <= value_at_1 else 1.0


def binarize(point: np.ndarray, n_labels: int) -> Labeling:
    """Closest feasible binary labeling to a relaxed point.

    The rounding problem is linear with a totally unimodular constraint
    matrix and decouples per node: keep the largest entry of each block iff
    it exceeds one half (a tie at exactly 0.5 rejects the node).
    """
    x = np.asarray(point, dtype=np.float64).reshape(-1)
    if n_labels < 1 or x.size % n_labels != 0:
        raise ValueError("point size is not a multiple of n_labels")
    blocks = x.reshape(-1, n_labels)
    labels = _binarize_labels(blocks)
    assignment = tuple(None if lab < 0 else int(lab) for lab in labels)
    return Labeling(assignment, n_labels)


def _binarize_labels(blocks: np.ndarray) -> np.ndarray:
    if blocks.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    best = np.argmax(blocks, axis=1)
    values = blocks[np.arange(blocks.shape[0]), best]
    return np.where(values > 0.5, best, -1).astype(np.int64)


def compute_lambda0(graph: CostGraph) -> float:
    """Starting regularizer weight: sqrt of the largest absolute row sum of
    the pairwise cost matrix (identical for every label copy)."""
    return math.sqrt(graph.max_absolute_row_sum())


def _vertex_adjacency_product(graph: CostGraph, labels: np.ndarray, n_labels: int) -> np.ndarray:
    """A @ V for the binary block matrix V of a vertex, in O(edges)."""
    out = np.zeros((graph.n, n_labels), dtype=np.float64)
    indptr = graph.adjacency.indptr
    indices = graph.adjacency.indices
    data = graph.adjacency.data
    for u in np.flatnonzero(labels >= 0):
        lo, hi = indptr[u], indptr[u + 1]
        out[indices[lo:hi], labels[u]] += data[lo:hi]
    return out


def _vertex_dot(grad2d: np.ndarray, labels: np.ndarray) -> float:
    sel = np.flatnonzero(labels >= 0)
    if sel.size == 0:
        return 0.0
    return float(grad2d[sel, labels[sel]].sum())


def solve_fw(
    graph: CostGraph,
    config: SolverConfig,
    initial: Optional[np.ndarray] = None,
    lambda_reg: float = 0.0,
    time_origin: Optional[float] = None,
) -> FwResult:
    """One Frank-Wolfe run on the (optionally regularized) objective.

    Every loop head evaluates the oracle vertex and the rounded iterate with
    the unregularized cost and keeps the best binary labeling seen.  The run
    stops when the duality gap drops below the configured tolerance or the
    iteration cap is reached.  Away steps maintain an explicit active set of
    vertices with convex weights; they require a binary starting point (the
    default all-zeros start is one) and are skipped for fractional starts.
    """
    if lambda_reg < 0.0:
        raise ValueError("lambda_reg must be >= 0")
    n = graph.n
    n_labels = config.max_labels
    if time_origin is None:
        time_origin = time.perf_counter()
    if n == 0:
        empty = Labeling((), n_labels)
        return FwResult(empty, 0.0, 0, 0.0, [], lambda_reg)

    if initial is None:
        x = np.zeros(n * n_labels, dtype=np.float64)
    else:
        x = np.asarray(initial, dtype=np.float64).reshape(-1).copy()
        if x.size != n * n_labels:
            raise ValueError("initial point dimension mismatch")
        if feasibility_violation(x, n) > FEASIBILITY_TOL:
            raise ValueError("initial point is infeasible")
    X = x.reshape(n, n_labels)
    AX = np.asarray(graph.adjacency @ X, dtype=np.float64)
    unary = graph.unary

    initial_is_vertex = bool(np.all((X == 0.0) | (X == 1.0)))
    use_away = config.away_steps and initial_is_vertex
    active: dict[bytes, tuple[np.ndarray, float]] = {}
    if use_away:
        start_labels = _binarize_labels(X)
        active[start_labels.tobytes()] = (start_labels, 1.0)

    best_labels: Optional[np.ndarray] = None
    best_value = math.inf
    trace: list[TraceSample] = []
    objective_values: list[float] = []
    gap_values: list[float] = []
    feasibility_violations: list[float] = []

    iterations = 0
    gap = 0.0
    while True:
        grad2d = unary[:, None] + AX
        if lambda_reg != 0.0:
            grad2d = grad2d + lambda_reg * (2.0 * X - 1.0)

        s_labels = _lmo_labels(grad2d)
        f_s = graph.objective_of_labels(s_labels)
        if f_s < best_value:
            best_value, best_labels = f_s, s_labels
        r_labels = _binarize_labels(X)
        f_r = graph.objective_of_labels(r_labels)
        if f_r < best_value:
            best_value, best_labels = f_r, r_labels

        x_dot_grad = float(np.sum(X * grad2d))
        s_dot_grad = _vertex_dot(grad2d, s_labels)
        gap = x_dot_grad - s_dot_grad

        row_sums = X.sum(axis=1)
        violation = max(
            float(-X.min(initial=0.0)),
            float(X.max(initial=0.0) - 1.0),
            float(row_sums.max(initial=0.0) - 1.0),
            0.0,
        )
        f_reg = (
            float(unary @ row_sums)
            + 0.5 * float(np.sum(X * AX))
            + lambda_reg * (float(np.sum(X * X)) - float(np.sum(X)))
        )
        objective_values.append(f_reg)
        gap_values.append(gap)
        feasibility_violations.append(violation)
        trace.append(
            TraceSample(time.perf_counter() - time_origin, best_value, gap, lambda_reg)
        )

        if gap < config.gap_tolerance or iterations >= config.max_iterations:
            break

        # direction: regular step toward the oracle vertex, or an away step
        # shrinking the worst active vertex, whichever descends steeper
        slope_fw = s_dot_grad - x_dot_grad
        away_key = None
        away_entry = None
        slope_away = math.inf
        if use_away and active:
            worst_value = -math.inf
            for key, (labels_v, weight) in active.items():
                value = _vertex_dot(grad2d, labels_v)
                if value > worst_value:
                    worst_value = value
                    away_key, away_entry = key, (labels_v, weight)
            slope_away = x_dot_grad - worst_value

        if away_entry is not None and slope_away < slope_fw and away_entry[1] < 1.0:
            labels_v, weight = away_entry
            D = X.copy()
            sel = np.flatnonzero(labels_v >= 0)
            D[sel, labels_v[sel]] -= 1.0
            AD = AX - _vertex_adjacency_product(graph, labels_v, n_labels)
            slope = slope_away
            gamma_max = weight / (1.0 - weight)
            step_kind = "away"
        else:
            D = -X.copy()
            sel = np.flatnonzero(s_labels >= 0)
            D[sel, s_labels[sel]] += 1.0
            AD = _vertex_adjacency_product(graph, s_labels, n_labels) - AX
            slope = slope_fw
            gamma_max = 1.0
            step_kind = "fw"

        curvature = float(np.sum(D * AD))
        if lambda_reg != 0.0:
            curvature += 2.0 * lambda_reg * float(np.sum(D * D))
        value_at_max = f_reg + gamma_max * slope + 0.5 * gamma_max**2 * curvature
        t = optimal_step_size(
            gamma_max * slope, gamma_max**2 * curvature, f_reg, value_at_max
        )
        gamma = gamma_max * t

        X += gamma * D
        AX += gamma * AD

        if use_away:
            if step_kind == "fw":
                if gamma == 1.0:
                    active = {s_labels.tobytes(): (s_labels, 1.0)}
                else:
                    for key, (labels_v, weight) in list(active.items()):
                        active[key] = (labels_v, weight * (1.0 - gamma))
                    s_key = s_labels.tobytes()
                    prev = active.get(s_key)
                    active[s_key] = (s_labels, (prev[1] if prev else 0.0) + gamma)
            else:
                # x_new = (1+gamma)x - gamma*v, so scale all weights then
                # remove the moved mass from the away vertex
                for key, (labels_v, weight) in list(active.items()):
                    active[key] = (labels_v, weight * (1.0 + gamma))
                labels_v, scaled = active[away_key]
                active[away_key] = (labels_v, scaled - gamma)
            active = {
                key: (labels_v, weight)
                for key, (labels_v, weight) in active.items()
                if weight > config.active_set_drop_tolerance
            }
            total = sum(weight for _, weight in active.values())
            if active and abs(total - 1.0) > 1e-9:
                active = {
                    key: (labels_v, weight / total)
                    for key, (labels_v, weight) in active.items()
                }

            if feasibility_violation(X.reshape(-1), n) > _REBUILD_TRIGGER:
                X[:] = 0.0
                for labels_v, weight in active.values():
                    sel = np.flatnonzero(labels_v >= 0)
                    X[sel, labels_v[sel]] += weight
                AX = np.asarray(graph.adjacency @ X, dtype=np.float64)

        iterations += 1

    if best_labels is None:  # unreachable: the loop head always runs once
        best_labels = np.full(n, -1, dtype=np.int64)
    assignment = tuple(None if lab < 0 else int(lab) for lab in best_labels)
    best_binary = Labeling(assignment, n_labels)
    return FwResult(
        best_binary=best_binary,
        best_objective=graph.objective_of(best_binary),
        iterations=iterations,
        final_gap=gap,
        trace=trace,
        lambda_reg=lambda_reg,
        objective_values=objective_values,
        gap_values=gap_values,
        feasibility_violations=feasibility_violations,
    )


def solve_with_schedule(graph: CostGraph, config: SolverConfig) -> ScheduleResult:
    """Regularized Frank-Wolfe with halving restarts, then a plain run.

    Starts at the convexifying weight ``sqrt(max |row sum|)``; whenever a run
    stops in fewer iterations than the short-run threshold the weight is
    halved and the solve restarts from zero, at most ``lambda_halvings_max``
    times.  A final unregularized run always participates, so the returned
    best is never worse than plain Frank-Wolfe.
    """
    t0 = time.perf_counter()
    if graph.n == 0:
        empty = solve_fw(graph, config, lambda_reg=0.0, time_origin=t0)
        return ScheduleResult(empty, [empty], list(empty.trace))

    runs: list[FwResult] = []
    lambda0 = compute_lambda0(graph)
    if lambda0 > 0.0:
        halvings = 0
        while True:
            run = solve_fw(
                graph, config, lambda_reg=lambda0 * 2.0**-halvings, time_origin=t0
            )
            runs.append(run)
            if run.iterations >= config.short_run_threshold:
                break
            if halvings >= config.lambda_halvings_max:
                break
            halvings += 1
    runs.append(solve_fw(graph, config, lambda_reg=0.0, time_origin=t0))

    best = runs[0]
    for run in runs[1:]:
        if run.best_objective < best.best_objective:
            best = run
    merged: list[TraceSample] = []
    running = math.inf
    for run in runs:
        for sample in run.trace:
            running = min(running, sample.best_objective)
            merged.append(
                TraceSample(sample.seconds, running, sample.gap, sample.lambda_reg)
            )
    return ScheduleResult(best, runs, merged)


def write_trace_csv(samples: list[TraceSample], path) -> None:
    """Write a convergence trace as CSV (wall_seconds, best_objective, gap, lambda)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("wall_seconds,best_objective,gap,lambda\n")
        for s in samples:
            fh.write(f"{s.seconds!r},{s.best_objective!r},{s.gap!r},{s.lambda_reg!r}\n")
