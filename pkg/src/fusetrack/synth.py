"""Synthetic desk-scale tracking scenarios with exact ground truth.

People move along horizontal lanes with piecewise-linear motion; every
person-frame produces a body box and a geometrically consistent head box.
Occlusion episodes drop body detections (heads survive them), spurious body
detections appear without any supporting head, and pixel-correspondence
counts between frames are proportional to box overlap for same-person pairs
and essentially zero across persons.  Everything is a deterministic function
of the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .affinity import (
    AffinityConfig,
    Correspondences,
    Priors,
    StandardBox,
    extract_training_samples,
    learn_priors,
)
from .graph import Detection, DetectionKind, TrackingGraph
from .metrics import Trajectory, TrajectoryBox

# vertical position of the head center inside the body box, as a fraction of
# the body height measured from the bottom
HEAD_RELATIVE_HEIGHT = 112.0 / 120.0


@dataclass(frozen=True)
class ScenarioParams:
    """Generator knobs; defaults give the standard occlusion suite."""

    persons: int = 4
    frames: int = 35
    occlusion_rate: float = 0.25
    body_miss_rate: float = 0.75
    head_miss_rate: float = 0.05
    false_positive_rate: float = 0.3
    localization_noise: float = 1.5
    image_width: float = 1280.0
    image_height: float = 720.0
    head_width_ratio: float = 0.35
    head_height_ratio: float = 0.16
    correspondence_window: int = 9

    def __post_init__(self) -> None:
        if self.persons < 1 or self.frames < 1:
            raise ValueError("need at least one person and one frame")
        for name in (
            "occlusion_rate",
            "body_miss_rate",
            "head_miss_rate",
        ):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise ValueError(f"{name} must be in [0, 1]")
        if self.false_positive_rate < 0 or self.localization_noise < 0:
            raise ValueError("rates and noise must be >= 0")


@dataclass
class ScenarioStats:
    """Bookkeeping needed to audit what the detectors saw."""

    occluded_person_frames: int = 0
    body_missing_frames: int = 0
    body_missing_head_present: int = 0
    false_positive_detections: int = 0


@dataclass
class ScenarioData:
    """A generated scenario: truth, detector output and correspondences."""

    seed: int
    params: ScenarioParams
    ground_truth: list[Trajectory]
    detections: list[Detection]
    correspondences: Correspondences
    identities: dict[int, int] = field(default_factory=dict)
    stats: ScenarioStats = field(default_factory=ScenarioStats)


def _containment(a, b) -> float:
    """Intersection area over the smaller box area."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    smaller = min(aw * ah, bw * bh)
    if smaller <= 0.0:
        return 0.0
    return ix * iy / smaller


def synthesize_scenario(seed: int, params: ScenarioParams = ScenarioParams()) -> ScenarioData:
    """Generate one scenario deterministically from the seed."""
    rng = np.random.default_rng(seed)
    stats = ScenarioStats()

    # per-person geometry and motion
    lane_gap = params.image_height / (params.persons + 1)
    persons = []
    for p in range(params.persons):
        width = float(rng.uniform(45.0, 55.0))
        # keep boxes shorter than the lane gap so neighbors never overlap
        height = float(rng.uniform(0.68, 0.82)) * lane_gap
        lane_y = lane_gap * (p + 1)
        direction = 1.0 if rng.random() < 0.5 else -1.0
        speed = float(rng.uniform(1.5, 3.0)) * direction
        margin = 80.0
        start_x = float(
            rng.uniform(margin, max(margin + 1.0, params.image_width - margin))
        )
        # one mid-sequence waypoint bends the path slightly
        bend_frame = int(rng.integers(params.frames // 3, 2 * params.frames // 3 + 1))
        bend_speed = speed * float(rng.uniform(0.6, 1.4))
        drift_y = float(rng.uniform(-1.0, 1.0)) * 0.04 * lane_gap / max(params.frames, 1)
        persons.append(
            dict(
                width=width,
                height=height,
                lane_y=lane_y,
                speed=speed,
                start_x=start_x,
                bend_frame=bend_frame,
                bend_speed=bend_speed,
                drift_y=drift_y,
            )
        )

    # occlusion episodes: one contiguous block per person
    occluded: list[set[int]] = []
    for p in range(params.persons):
        length = int(round(params.occlusion_rate * params.frames))
        block: set[int] = set()
        if length > 0:
            start = int(rng.integers(0, max(1, params.frames - length + 1)))
            block = set(range(start, min(params.frames, start + length)))
        occluded.append(block)

    def center_at(spec: dict, frame: int) -> tuple[float, float]:
        if frame <= spec["bend_frame"]:
            x = spec["start_x"] + spec["speed"] * frame
        else:
            x = (
                spec["start_x"]
                + spec["speed"] * spec["bend_frame"]
                + spec["bend_speed"] * (frame - spec["bend_frame"])
            )
        y = spec["lane_y"] + spec["drift_y"] * frame
        return x, y

    ground_truth: list[Trajectory] = []
    for p, spec in enumerate(persons):
        boxes = {}
        for frame in range(params.frames):
            cx, cy = center_at(spec, frame)
            boxes[frame] = TrajectoryBox(
                (cx - 0.5 * spec["width"], cy - 0.5 * spec["height"], spec["width"], spec["height"])
            )
        ground_truth.append(Trajectory(person_id=p + 1, boxes=boxes))

    detections: list[Detection] = []
    identities: dict[int, int] = {}
    next_id = 0

    def jitter(box, noise):
        if noise == 0.0:
            return box
        dx = float(rng.normal(0.0, noise))
        dy = float(rng.normal(0.0, noise))
        return (box[0] + dx, box[1] + dy, box[2], box[3])

    for frame in range(params.frames):
        for p, spec in enumerate(persons):
            cx, cy = center_at(spec, frame)
            w, h = spec["width"], spec["height"]
            body_box = (cx - 0.5 * w, cy - 0.5 * h, w, h)
            hw, hh = params.head_width_ratio * w, params.head_height_ratio * h
            head_cy = (cy - 0.5 * h) + HEAD_RELATIVE_HEIGHT * h
            head_box = (cx - 0.5 * hw, head_cy - 0.5 * hh, hw, hh)

            is_occluded = frame in occluded[p]
            if is_occluded:
                stats.occluded_person_frames += 1
            body_missed = is_occluded and rng.random() < params.body_miss_rate
            head_missed = rng.random() < params.head_miss_rate

            if body_missed:
                stats.body_missing_frames += 1
                if not head_missed:
                    stats.body_missing_head_present += 1
            else:
                prob = 0.6 if is_occluded else float(rng.uniform(0.83, 0.93))
                detections.append(
                    Detection(
                        next_id,
                        frame,
                        jitter(body_box, params.localization_noise),
                        DetectionKind.BODY,
                        prob,
                    )
                )
                identities[next_id] = p + 1
                next_id += 1
            if not head_missed:
                detections.append(
                    Detection(
                        next_id,
                        frame,
                        jitter(head_box, params.localization_noise),
                        DetectionKind.HEAD,
                        float(rng.uniform(0.80, 0.90)),
                    )
                )
                identities[next_id] = p + 1
                next_id += 1

        fp_count = int(rng.poisson(params.false_positive_rate))
        frame_truth = [
            track.boxes[frame].box for track in ground_truth if frame in track.boxes
        ]
        for _ in range(fp_count):
            w = float(rng.uniform(45.0, 55.0))
            h = float(rng.uniform(110.0, 130.0))
            # keep spurious boxes clear of every true person in the frame
            box = None
            for _attempt in range(32):
                x = float(rng.uniform(0.0, params.image_width - w))
                y = float(rng.uniform(0.0, params.image_height - h))
                candidate = (x, y, w, h)
                if all(_containment(candidate, gt) < 0.2 for gt in frame_truth):
                    box = candidate
                    break
            if box is None:
                continue
            detections.append(
                Detection(
                    next_id,
                    frame,
                    box,
                    DetectionKind.BODY,
                    float(rng.uniform(0.52, 0.62)),
                )
            )
            stats.false_positive_detections += 1
            next_id += 1

    correspondences = Correspondences()
    by_frame: dict[int, list[Detection]] = {}
    for det in detections:
        by_frame.setdefault(det.frame, []).append(det)
    for fa in sorted(by_frame):
        for fb in range(fa + 1, fa + params.correspondence_window + 1):
            if fb not in by_frame:
                continue
            for u in by_frame[fa]:
                for v in by_frame[fb]:
                    dm_u = max(4.0, round(u.box[2] * u.box[3] / 25.0))
                    dm_v = max(4.0, round(v.box[2] * v.box[3] / 25.0))
                    pu, pv = identities.get(u.id), identities.get(v.id)
                    share = 0.9 if (pu is not None and pu == pv) else 0.1
                    co = float(round(share * _containment(u.box, v.box) * min(dm_u, dm_v)))
                    correspondences.add(u.frame, u.id, v.frame, v.id, co, dm_u, dm_v)

    return ScenarioData(
        seed=seed,
        params=params,
        ground_truth=ground_truth,
        detections=detections,
        correspondences=correspondences,
        identities=identities,
        stats=stats,
    )


def scenario_priors(scenario: ScenarioData, std: Optional[StandardBox] = None) -> Priors:
    """Learn the position/size priors from the scenario's own annotations."""
    pairs = []
    by_frame: dict[int, list[Detection]] = {}
    for det in scenario.detections:
        if det.id in scenario.identities:
            by_frame.setdefault(det.frame, []).append(det)
    for dets in by_frame.values():
        heads = [d for d in dets if d.kind is DetectionKind.HEAD]
        bodies = [d for d in dets if d.kind is DetectionKind.BODY]
        for head in heads:
            for body in bodies:
                if scenario.identities[head.id] == scenario.identities[body.id]:
                    pairs.append((head, body))
    return learn_priors(pairs, std if std is not None else StandardBox())


def scenario_training_samples(
    scenario: ScenarioData, priors: Priors, config: Optional[AffinityConfig] = None
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Labeled per-family feature samples from the scenario annotations."""
    return extract_training_samples(
        scenario.detections,
        scenario.identities,
        scenario.correspondences,
        priors,
        config if config is not None else AffinityConfig(),
    )


def perfect_params(persons: int = 4, frames: int = 25) -> ScenarioParams:
    """Noise-free variant: every detection present, exact geometry."""
    return ScenarioParams(
        persons=persons,
        frames=frames,
        occlusion_rate=0.0,
        body_miss_rate=0.0,
        head_miss_rate=0.0,
        false_positive_rate=0.0,
        localization_noise=0.0,
    )


def body_only(detections: list[Detection]) -> list[Detection]:
    """Restrict detector input to full-body boxes."""
    return [d for d in detections if d.kind is DetectionKind.BODY]


def random_cost_instance(
    seed: int,
    nodes: int,
    frames: int = 1,
    window: int = 0,
    density: float = 0.7,
    cost_scale: float = 1.0,
) -> TrackingGraph:
    """Random sparse labeling instance with window-limited edges.

    Unary and pairwise costs are uniform in [-scale, scale]; each admissible
    pair becomes an edge with the given probability.  Nodes are spread evenly
    over the frames.
    """
    if nodes < 1 or frames < 1:
        raise ValueError("need at least one node and one frame")
    rng = np.random.default_rng(seed)
    frame_of = [(i * frames) // nodes for i in range(nodes)]
    unary = rng.uniform(-cost_scale, cost_scale, size=nodes)
    detections = []
    for i in range(nodes):
        probability = 1.0 / (1.0 + math.exp(min(max(unary[i], -60.0), 60.0)))
        detections.append(
            Detection(i, frame_of[i], (0.0, 0.0, 1.0, 1.0), DetectionKind.BODY, probability)
        )
    edges = []
    for u in range(nodes):
        for v in range(u + 1, nodes):
            if abs(frame_of[u] - frame_of[v]) > window:
                continue
            if rng.random() < density:
                weight = float(rng.uniform(-cost_scale, cost_scale))
                if weight != 0.0:
                    edges.append((u, v, weight))
    return TrackingGraph(detections, unary, edges, max(window, 0))
