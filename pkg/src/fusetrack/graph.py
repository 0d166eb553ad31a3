"""Graph-labeling domain types and objective evaluation.

A labeling problem is described by a sparse cost graph: one unary cost per
detection node and symmetric pairwise costs on node pairs.  A solution
assigns each node to at most one of ``n_labels`` identity labels; nodes may
stay unassigned (rejected).  Costs are label independent, so the quadratic
objective matrix never has to be materialised: everything is evaluated from
the strict upper triangle of the pairwise matrix and the unary vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

PROBABILITY_CLAMP = 1e-6
FEASIBILITY_TOL = 1e-12


class DetectionKind(str, Enum):
    HEAD = "head"
    BODY = "body"


def clamp_probability(p: float) -> float:
    """Clamp a probability into [1e-6, 1 - 1e-6] so logit costs stay finite."""
    return min(max(float(p), PROBABILITY_CLAMP), 1.0 - PROBABILITY_CLAMP)


@dataclass(frozen=True)
class Detection:
    """A single detector output: a box in one frame with a confidence."""

    id: int
    frame: int
    box: tuple[float, float, float, float]  # (x, y, width, height), y up
    kind: DetectionKind
    probability: float

    def __post_init__(self) -> None:
        if self.frame < 0:
            raise ValueError(f"detection {self.id}: frame must be >= 0")
        x, y, w, h = self.box
        if not (w > 0 and h > 0):
            raise ValueError(f"detection {self.id}: box must have positive size")
        object.__setattr__(self, "kind", DetectionKind(self.kind))
        object.__setattr__(self, "probability", clamp_probability(self.probability))

    @property
    def center(self) -> tuple[float, float]:
        x, y, w, h = self.box
        return (x + 0.5 * w, y + 0.5 * h)


class CostGraph:
    """Unary costs plus a sparse symmetric pairwise cost matrix.

    Only the strict upper triangle of the pairwise matrix is stored, as
    coordinate arrays sorted by (u, v), together with a CSR adjacency view
    used for neighbor scans and gradient products.  Storage is
    O(edges + nodes) and independent of the number of labels.
    """

    def __init__(self, unary: Sequence[float], edges: Iterable[tuple[int, int, float]]):
        self.unary = np.asarray(unary, dtype=np.float64).reshape(-1)
        n = self.unary.shape[0]
        seen: dict[tuple[int, int], float] = {}
        for u, v, w in edges:
            u, v, w = int(u), int(v), float(w)
            if u == v:
                raise ValueError(f"self-edge on node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u}, {v}) out of range for {n} nodes")
            key = (u, v) if u < v else (v, u)
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen[key] = w
            if w == 0.0:
                del seen[key]  # exact zeros are not stored
        items = sorted(seen.items())
        self.edge_u = np.array([k[0] for k, _ in items], dtype=np.int64)
        self.edge_v = np.array([k[1] for k, _ in items], dtype=np.int64)
        self.edge_w = np.array([w for _, w in items], dtype=np.float64)
        data = np.concatenate([self.edge_w, self.edge_w])
        rows = np.concatenate([self.edge_u, self.edge_v])
        cols = np.concatenate([self.edge_v, self.edge_u])
        self.adjacency = sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    @property
    def n(self) -> int:
        return int(self.unary.shape[0])

    @property
    def nnz(self) -> int:
        """Number of stored (nonzero, upper-triangle) pairwise entries."""
        return int(self.edge_w.shape[0])

    def neighbors(self, v: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices and weights of all nodes sharing an edge with ``v``."""
        lo, hi = self.adjacency.indptr[v], self.adjacency.indptr[v + 1]
        return self.adjacency.indices[lo:hi], self.adjacency.data[lo:hi]

    def _blocks(self, point: np.ndarray) -> np.ndarray:
        x = np.asarray(point, dtype=np.float64).reshape(-1)
        if self.n == 0:
            if x.size != 0:
                raise ValueError("point dimension mismatch for empty graph")
            return x.reshape(0, 1)
        if x.size == 0 or x.size % self.n != 0:
            raise ValueError(
                f"point of size {x.size} is not a multiple of {self.n} nodes"
            )
        return x.reshape(self.n, x.size // self.n)

    def objective(self, point: np.ndarray, lambda_reg: float = 0.0) -> float:
        """Labeling cost of a relaxed point, optionally with the
        binary-vanishing quadratic regularizer added.

        The pairwise part is accumulated per label and combined with
        ``math.fsum`` so the value is exactly invariant under label
        permutations.  On binary points the regularizer contributes an exact
        zero for any ``lambda_reg``.
        """
        x2d = self._blocks(point)
        per_label = x2d * (self.adjacency @ x2d)
        pairwise = 0.5 * math.fsum(float(s) for s in per_label.sum(axis=0))
        node_sums = np.array([math.fsum(row) for row in x2d], dtype=np.float64)
        unary = float(self.unary @ node_sums)
        value = unary + pairwise
        if lambda_reg != 0.0:
            x = x2d.reshape(-1)
            value += lambda_reg * (float(np.dot(x, x)) - float(np.sum(x)))
        return value

    def objective_of(self, labeling: "Labeling") -> float:
        """Labeling cost evaluated by a direct scan over stored edges.

        Faster than :meth:`objective` on binary points and exactly invariant
        under relabeling, since the summation order never depends on label
        identities.
        """
        return self.objective_of_labels(labeling.labels_array())

    def objective_of_labels(self, labels: np.ndarray) -> float:
        """Same as :meth:`objective_of` for an int label array (-1 rejects)."""
        if labels.shape[0] != self.n:
            raise ValueError("labeling size mismatch")
        selected = labels >= 0
        unary = float(self.unary[selected].sum())
        if self.nnz == 0:
            return unary
        lu = labels[self.edge_u]
        lv = labels[self.edge_v]
        same = (lu >= 0) & (lu == lv)
        return unary + float(self.edge_w[same].sum())

    def gradient(self, point: np.ndarray, lambda_reg: float = 0.0) -> np.ndarray:
        """Gradient of the (regularized) objective at ``point``."""
        x2d = self._blocks(point)
        grad = self.unary[:, None] + self.adjacency @ x2d
        if lambda_reg != 0.0:
            grad = grad + lambda_reg * (2.0 * x2d - 1.0)
        return np.asarray(grad, dtype=np.float64).reshape(-1)

    def quadratic_form(self, direction: np.ndarray, lambda_reg: float = 0.0) -> float:
        """Value of d'(Q + 2*lambda*I)d for a flat direction vector."""
        d2d = self._blocks(direction)
        value = float(np.sum(d2d * (self.adjacency @ d2d)))
        if lambda_reg != 0.0:
            d = d2d.reshape(-1)
            value += 2.0 * lambda_reg * float(np.dot(d, d))
        return value

    def max_absolute_row_sum(self) -> float:
        """Largest sum of |pairwise cost| over the edges at one node."""
        if self.n == 0:
            raise ValueError("empty graph")
        if self.nnz == 0:
            return 0.0
        sums = np.zeros(self.n, dtype=np.float64)
        np.add.at(sums, self.edge_u, np.abs(self.edge_w))
        np.add.at(sums, self.edge_v, np.abs(self.edge_w))
        return float(sums.max())


class TrackingGraph(CostGraph):
    """A cost graph over detections with a temporal sparsity window.

    Pairwise costs may only connect detections at most ``temporal_window``
    frames apart; anything farther is implicitly zero.
    """

    def __init__(
        self,
        detections: Sequence[Detection],
        unary: Sequence[float],
        edges: Iterable[tuple[int, int, float]],
        temporal_window: int,
    ):
        edges = list(edges)
        super().__init__(unary, edges)
        self.detections = tuple(detections)
        if len(self.detections) != self.n:
            raise ValueError("unary costs and detections disagree in length")
        ids = [d.id for d in self.detections]
        if len(set(ids)) != len(ids):
            raise ValueError("detection ids must be unique within a graph")
        if temporal_window < 0:
            raise ValueError("temporal window must be >= 0")
        self.temporal_window = int(temporal_window)
        frames = np.array([d.frame for d in self.detections], dtype=np.int64)
        if self.nnz:
            span = np.abs(frames[self.edge_u] - frames[self.edge_v])
            if int(span.max(initial=0)) > self.temporal_window:
                bad = int(np.argmax(span))
                raise ValueError(
                    f"edge ({self.edge_u[bad]}, {self.edge_v[bad]}) spans "
                    f"{span[bad]} frames, beyond the window of {self.temporal_window}"
                )


@dataclass(frozen=True)
class Labeling:
    """Assignment of each node to at most one label; ``None`` rejects a node."""

    assignment: tuple[Optional[int], ...]
    n_labels: int

    def __post_init__(self) -> None:
        if self.n_labels < 1:
            raise ValueError("n_labels must be >= 1")
        for v, lab in enumerate(self.assignment):
            if lab is not None and not (0 <= lab < self.n_labels):
                raise ValueError(f"node {v}: label {lab} outside [0, {self.n_labels})")

    @property
    def n(self) -> int:
        return len(self.assignment)

    def labels_array(self) -> np.ndarray:
        """Assignment as an int array with -1 for rejected nodes."""
        return np.array(
            [-1 if a is None else a for a in self.assignment], dtype=np.int64
        )

    def used_labels(self) -> tuple[int, ...]:
        return tuple(sorted({a for a in self.assignment if a is not None}))

    def clusters(self) -> dict[int, tuple[int, ...]]:
        """Map from label to the tuple of node indices carrying it."""
        out: dict[int, list[int]] = {}
        for v, a in enumerate(self.assignment):
            if a is not None:
                out.setdefault(a, []).append(v)
        return {k: tuple(vs) for k, vs in sorted(out.items())}

    def to_point(self) -> np.ndarray:
        """Flat binary point with one block of length ``n_labels`` per node."""
        point = np.zeros(self.n * self.n_labels, dtype=np.float64)
        for v, a in enumerate(self.assignment):
            if a is not None:
                point[v * self.n_labels + a] = 1.0
        return point

    @classmethod
    def from_point(cls, point: np.ndarray, n_labels: int) -> "Labeling":
        """Inverse of :meth:`to_point`; the point must be exactly binary."""
        x = np.asarray(point, dtype=np.float64).reshape(-1)
        if n_labels < 1 or x.size % n_labels != 0:
            raise ValueError("point size is not a multiple of n_labels")
        blocks = x.reshape(-1, n_labels)
        if not np.all((blocks == 0.0) | (blocks == 1.0)):
            raise ValueError("point is not binary")
        counts = blocks.sum(axis=1)
        if np.any(counts > 1):
            raise ValueError("some node selects more than one label")
        assignment: list[Optional[int]] = []
        for row, count in zip(blocks, counts):
            assignment.append(int(np.argmax(row)) if count else None)
        return cls(tuple(assignment), n_labels)


def labeling_to_point(labeling: Labeling) -> np.ndarray:
    return labeling.to_point()


def point_to_labeling(point: np.ndarray, n_labels: int) -> Labeling:
    return Labeling.from_point(point, n_labels)


def feasibility_violation(point: np.ndarray, n: int) -> float:
    """Largest violation of the box and per-node simplex constraints.

    Returns 0.0 for a feasible point; compare against ``FEASIBILITY_TOL``.
    """
    x = np.asarray(point, dtype=np.float64).reshape(-1)
    if n == 0:
        return 0.0
    blocks = x.reshape(n, -1)
    worst = max(
        float(-x.min(initial=0.0)),
        float(x.max(initial=0.0) - 1.0),
        float(blocks.sum(axis=1).max(initial=0.0) - 1.0),
    )
    return max(worst, 0.0)


def write_instance(graph: CostGraph, path) -> None:
    """Serialize a cost graph to the plain-text instance format.

    One ``node id frame cost`` line per node followed by one
    ``edge id id cost`` line per stored pairwise entry.  Tracking graphs
    keep their detection ids, frames and window; bare cost graphs are
    written with ids 0..n-1 and frame 0.
    """
    lines = []
    if isinstance(graph, TrackingGraph):
        ids = [d.id for d in graph.detections]
        frames = [d.frame for d in graph.detections]
        lines.append(f"window {graph.temporal_window}")
    else:
        ids = list(range(graph.n))
        frames = [0] * graph.n
    for i in range(graph.n):
        lines.append(f"node {ids[i]} {frames[i]} {float(graph.unary[i])!r}")
    for u, v, w in zip(graph.edge_u, graph.edge_v, graph.edge_w):
        lines.append(f"edge {ids[u]} {ids[v]} {float(w)!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_instance(path) -> TrackingGraph:
    """Parse the plain-text instance format written by :func:`write_instance`.

    Detections are reconstructed as stubs (unit boxes, body kind, probability
    implied by the unary cost) since the format carries costs only.
    """
    window: Optional[int] = None
    nodes: list[tuple[int, int, float]] = []
    raw_edges: list[tuple[int, int, float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            try:
                if parts[0] == "window":
                    window = int(parts[1])
                elif parts[0] == "node":
                    nodes.append((int(parts[1]), int(parts[2]), float(parts[3])))
                elif parts[0] == "edge":
                    raw_edges.append((int(parts[1]), int(parts[2]), float(parts[3])))
                else:
                    raise ValueError(f"unknown record {parts[0]!r}")
            except (IndexError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    index = {node_id: i for i, (node_id, _, _) in enumerate(nodes)}
    if len(index) != len(nodes):
        raise ValueError(f"{path}: duplicate node ids")
    detections = []
    unary = []
    for node_id, frame, cost in nodes:
        probability = 1.0 / (1.0 + math.exp(min(max(cost, -60.0), 60.0)))
        detections.append(
            Detection(node_id, frame, (0.0, 0.0, 1.0, 1.0), DetectionKind.BODY, probability)
        )
        unary.append(cost)
    edges = []
    for a, b, w in raw_edges:
        if a not in index or b not in index:
            raise ValueError(f"{path}: edge references unknown node ({a}, {b})")
        edges.append((index[a], index[b], w))
    if window is None:
        frames = [f for _, f, _ in nodes]
        window = (max(frames) - min(frames)) if frames else 0
    return TrackingGraph(detections, unary, edges, window)
