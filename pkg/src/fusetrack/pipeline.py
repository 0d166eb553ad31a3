"""End-to-end tracking harness.

Detections are read from CSV, cut into node-capped batches of whole frames
that overlap by the temporal window, each batch is solved by the regularized
Frank-Wolfe schedule plus hierarchical refinement, and batch labelings are
stitched into trajectories by majority vote over the shared detections.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .affinity import (
    AffinityConfig,
    Correspondences,
    FAMILIES,
    Priors,
    RegressionModel,
    StandardBox,
    build_costs,
    train_regression_model,
)
from .graph import Detection, DetectionKind, Labeling, TrackingGraph, clamp_probability
from .hierarchy import solve_hierarchical, split_attractive_components
from .metrics import Box, Trajectory, TrajectoryBox
from .solver import SolverConfig, solve_with_schedule

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    solver: SolverConfig = SolverConfig()
    affinity: AffinityConfig = AffinityConfig()
    max_batch_nodes: int = 1800
    score_scale: float = 1.0
    score_offset: float = 0.0

    def __post_init__(self) -> None:
        if self.max_batch_nodes < 1:
            raise ValueError("batch node cap must be >= 1")
        if self.score_scale <= 0:
            raise ValueError("score scale must be positive")


# ---------------------------------------------------------------------------
# detections file


def score_to_probability(score: float, scale: float = 1.0, offset: float = 0.0) -> float:
    """Monotone sigmoid calibration; a score at the offset maps to 0.5."""
    z = (score - offset) / scale
    return clamp_probability(1.0 / (1.0 + math.exp(-min(max(z, -60.0), 60.0))))


def probability_to_score(p: float, scale: float = 1.0, offset: float = 0.0) -> float:
    p = clamp_probability(p)
    return offset + scale * math.log(p / (1.0 - p))


def load_detections(
    path, score_scale: float = 1.0, score_offset: float = 0.0
) -> list[Detection]:
    """Parse detection CSV rows (frame, id, x, y, w, h, score, kind).

    Any malformed row fails with its line number; detector scores become
    probabilities through the sigmoid calibration.
    """
    detections: list[Detection] = []
    seen_ids: set[int] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("frame,"):
                continue
            parts = line.split(",")
            if len(parts) != 8:
                raise ValueError(f"{path}: line {lineno}: expected 8 fields")
            try:
                frame = int(parts[0])
                det_id = int(parts[1])
                box = (float(parts[2]), float(parts[3]), float(parts[4]), float(parts[5]))
                score = float(parts[6])
                kind = DetectionKind(parts[7].strip())
                if det_id in seen_ids:
                    raise ValueError(f"duplicate detection id {det_id}")
                detection = Detection(
                    det_id,
                    frame,
                    box,
                    kind,
                    score_to_probability(score, score_scale, score_offset),
                )
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
            seen_ids.add(det_id)
            detections.append(detection)
    return detections


def write_detections(
    detections: Sequence[Detection], path, score_scale: float = 1.0, score_offset: float = 0.0
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame,id,x,y,w,h,score,kind\n")
        for d in sorted(detections, key=lambda d: (d.frame, d.id)):
            score = probability_to_score(d.probability, score_scale, score_offset)
            x, y, w, h = d.box
            fh.write(
                f"{d.frame},{d.id},{float(x)!r},{float(y)!r},{float(w)!r},"
                f"{float(h)!r},{float(score)!r},{d.kind.value}\n"
            )


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    """Consecutive frames solved as one labeling problem."""

    index: int
    frames: tuple[int, ...]
    detections: tuple[Detection, ...]
    oversized: bool = False


def batch_sequence(
    detections: Sequence[Detection], max_nodes: int, temporal_window: int
) -> list[Batch]:
    """Split a sequence at frame boundaries into node-capped batches.

    Consecutive batches overlap by up to ``temporal_window`` frames; the
    overlap shrinks when it would leave no room for a new frame under the
    cap.  A single frame above the cap becomes its own oversized batch.
    """
    if max_nodes < 1:
        raise ValueError("max_nodes must be >= 1")
    by_frame: dict[int, list[Detection]] = {}
    for det in detections:
        by_frame.setdefault(det.frame, []).append(det)
    frames = sorted(by_frame)
    for frame in frames:
        by_frame[frame].sort(key=lambda d: d.id)
    counts = {frame: len(by_frame[frame]) for frame in frames}

    batches: list[Batch] = []
    start = 0
    while start < len(frames):
        count = counts[frames[start]]
        end = start + 1
        while end < len(frames) and count + counts[frames[end]] <= max_nodes:
            count += counts[frames[end]]
            end += 1
        oversized = count > max_nodes
        if oversized:
            logger.warning(
                "frame %d alone exceeds the %d-node cap (%d detections)",
                frames[start],
                max_nodes,
                count,
            )
        chunk = frames[start:end]
        batch_dets = tuple(d for frame in chunk for d in by_frame[frame])
        batches.append(Batch(len(batches), tuple(chunk), batch_dets, oversized))
        if end >= len(frames):
            break
        next_start = max(start + 1, end - temporal_window)
        while next_start < end and (
            sum(counts[f] for f in frames[next_start : end + 1]) > max_nodes
        ):
            next_start += 1
        start = next_start
    return batches


# ---------------------------------------------------------------------------
# solving and stitching


def solve_batch(graph: TrackingGraph, config: SolverConfig) -> Labeling:
    """Regularized Frank-Wolfe schedule followed by hierarchical refinement."""
    schedule = solve_with_schedule(graph, config)
    refined = solve_hierarchical(graph, schedule.best_binary, config)
    return refined.labeling


def extrapolate_body_box(head_box: Box, priors: Priors, std: StandardBox) -> Box:
    """Body box implied by a head box through the learned size/position priors.

    The body is centered horizontally on the head; its height places the head
    center at the prior's relative height inside the box.
    """
    hx, hy, hw, hh = head_box
    body_w = hw / priors.ratio.width_ratio_mean
    body_h = hh / priors.ratio.height_ratio_mean
    head_cx = hx + 0.5 * hw
    head_cy = hy + 0.5 * hh
    relative_height = (priors.spatial.expected_position[1] - std.y) / std.height
    bottom = head_cy - relative_height * body_h
    return (head_cx - 0.5 * body_w, bottom, body_w, body_h)


def _cluster_detections(batch: Batch, labeling: Labeling) -> dict[int, list[Detection]]:
    clusters: dict[int, list[Detection]] = {}
    for node, label in enumerate(labeling.assignment):
        if label is not None:
            clusters.setdefault(label, []).append(batch.detections[node])
    return dict(sorted(clusters.items()))


def stitch(
    batches: Sequence[Batch],
    labelings: Sequence[Labeling],
    priors: Priors,
    std: StandardBox = StandardBox(),
) -> list[Trajectory]:
    """Join per-batch labelings into trajectories.

    Cluster identity flows across consecutive batches by majority vote over
    the shared overlap detections (ties to the lower batch-local label); a
    detection is emitted by the first batch that labels it.  Frames covered
    only by a head detection get a body box extrapolated through the priors
    and are flagged.
    """
    if len(batches) != len(labelings):
        raise ValueError("need one labeling per batch")
    next_track_id = 1
    members: dict[int, list[Detection]] = {}
    emitted: set[int] = set()
    prev_clusters: dict[int, list[Detection]] = {}
    prev_track_of: dict[int, int] = {}

    for batch, labeling in zip(batches, labelings):
        if labeling.n != len(batch.detections):
            raise ValueError("labeling does not match its batch")
        clusters = _cluster_detections(batch, labeling)
        det_to_label = {
            det.id: label for label, dets in clusters.items() for det in dets
        }
        track_of: dict[int, int] = {}

        claims: list[tuple[int, int, int]] = []
        for prev_label, prev_dets in prev_clusters.items():
            votes: dict[int, int] = {}
            for det in prev_dets:
                successor = det_to_label.get(det.id)
                if successor is not None:
                    votes[successor] = votes.get(successor, 0) + 1
            if not votes:
                continue
            best_count = max(votes.values())
            successor = min(lab for lab, cnt in votes.items() if cnt == best_count)
            claims.append((-best_count, prev_track_of[prev_label], successor))
        for _, track_id, successor in sorted(claims):
            if successor not in track_of:
                track_of[successor] = track_id

        for label in clusters:
            if label not in track_of:
                track_of[label] = next_track_id
                next_track_id += 1
            track_id = track_of[label]
            bucket = members.setdefault(track_id, [])
            for det in clusters[label]:
                if det.id not in emitted:
                    emitted.add(det.id)
                    bucket.append(det)

        prev_clusters = clusters
        prev_track_of = track_of

    trajectories: list[Trajectory] = []
    for track_id in sorted(members):
        dets = members[track_id]
        by_frame: dict[int, list[Detection]] = {}
        for det in dets:
            by_frame.setdefault(det.frame, []).append(det)
        boxes: dict[int, TrajectoryBox] = {}
        for frame, frame_dets in sorted(by_frame.items()):
            bodies = [d for d in frame_dets if d.kind is DetectionKind.BODY]
            if bodies:
                best = max(bodies, key=lambda d: (d.probability, -d.id))
                boxes[frame] = TrajectoryBox(best.box, extrapolated=False)
            else:
                heads = [d for d in frame_dets if d.kind is DetectionKind.HEAD]
                best = max(heads, key=lambda d: (d.probability, -d.id))
                boxes[frame] = TrajectoryBox(
                    extrapolate_body_box(best.box, priors, std), extrapolated=True
                )
        trajectories.append(
            Trajectory(
                person_id=track_id,
                boxes=boxes,
                detection_ids=tuple(sorted(d.id for d in dets)),
            )
        )
    return trajectories


@dataclass
class TrackResult:
    trajectories: list[Trajectory]
    batches: list[Batch]
    labelings: list[Labeling]
    missing_correspondences: int = 0
    graphs: list[TrackingGraph] = field(default_factory=list)


def track(
    detections: Sequence[Detection],
    correspondences: Correspondences,
    model: RegressionModel,
    priors: Priors,
    config: PipelineConfig = PipelineConfig(),
) -> TrackResult:
    """Full pipeline: batch, build costs, solve, refine and stitch."""
    batches = batch_sequence(
        detections, config.max_batch_nodes, config.affinity.temporal_window
    )
    labelings: list[Labeling] = []
    graphs: list[TrackingGraph] = []
    missing = 0
    for batch in batches:
        build = build_costs(
            batch.detections, model, priors, correspondences, config.affinity
        )
        missing += build.missing_correspondences
        graphs.append(build.graph)
        labeling = solve_batch(build.graph, config.solver)
        # a label shared by parts without any attractive link between them is
        # coincidental; keep such parts out of the same trajectory
        labelings.append(split_attractive_components(build.graph, labeling))
        logger.info(
            "batch %d: %d nodes, %d edges, objective %.6f",
            batch.index,
            build.graph.n,
            build.graph.nnz,
            build.graph.objective_of(labelings[-1]),
        )
    trajectories = stitch(batches, labelings, priors, config.affinity.std_box)
    return TrackResult(trajectories, list(batches), labelings, missing, graphs)


# ---------------------------------------------------------------------------
# training files


def write_feature_samples(
    samples: Mapping[str, tuple[np.ndarray, np.ndarray]], path
) -> None:
    """Write labeled feature vectors as CSV rows (family, label, features...)."""
    with open(path, "w", encoding="utf-8") as fh:
        for family in FAMILIES:
            if family not in samples:
                continue
            X, y = samples[family]
            for row, label in zip(X, y):
                feats = ",".join(repr(float(v)) for v in row)
                fh.write(f"{family},{int(label)},{feats}\n")


def read_feature_samples(path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    rows: dict[str, tuple[list[list[float]], list[int]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 3:
                raise ValueError(f"{path}: line {lineno}: expected family,label,features")
            family = parts[0]
            if family not in FAMILIES:
                raise ValueError(f"{path}: line {lineno}: unknown family {family!r}")
            try:
                label = int(parts[1])
                feats = [float(v) for v in parts[2:]]
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
            bucket = rows.setdefault(family, ([], []))
            bucket[0].append(feats)
            bucket[1].append(label)
    out: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for family, (feats, labels) in rows.items():
        out[family] = (
            np.asarray(feats, dtype=np.float64),
            np.asarray(labels, dtype=np.int64),
        )
    return out


def train_model_from_features(path) -> RegressionModel:
    return train_regression_model(read_feature_samples(path))
