"""Trajectories and CLEAR-MOT style tracking metrics.

Matching is frame-by-frame on box overlap with match persistence: a pairing
that survives from the previous frame is kept before remaining boxes are
matched greedily by descending overlap.  An identity switch is counted once
per ground-truth track each time its matched hypothesis id changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

Box = tuple[float, float, float, float]


@dataclass(frozen=True)
class TrajectoryBox:
    """One per-frame box of a trajectory; flagged when extrapolated from a head."""

    box: Box
    extrapolated: bool = False


@dataclass
class Trajectory:
    """A tracked person: at most one box per frame plus source detection ids."""

    person_id: int
    boxes: dict[int, TrajectoryBox] = field(default_factory=dict)
    detection_ids: tuple[int, ...] = ()

    @property
    def frames(self) -> tuple[int, ...]:
        return tuple(sorted(self.boxes))


@dataclass(frozen=True)
class Metrics:
    """CLEAR-MOT counts; MOTA = 1 - (FP + FN + IDS) / GT."""

    mota: float
    false_positives: int
    false_negatives: int
    id_switches: int
    mostly_tracked: int
    mostly_lost: int
    ground_truth_count: int


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two axis-aligned boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    if inter <= 0.0:
        return 0.0
    return inter / (aw * ah + bw * bh - inter)


def evaluate_metrics(
    ground_truth: list[Trajectory],
    hypotheses: list[Trajectory],
    iou_threshold: float = 0.5,
) -> Metrics:
    """Score hypothesis trajectories against ground truth.

    Mostly-tracked needs at least 80% of a track's frames matched and
    mostly-lost at most 20%.  An empty ground truth scores MOTA 1.0.
    """
    if not (0.0 < iou_threshold < 1.0):
        raise ValueError("IoU threshold must be in (0, 1)")
    gt_by_frame: dict[int, dict[int, Box]] = {}
    for track in ground_truth:
        for frame, tb in track.boxes.items():
            gt_by_frame.setdefault(frame, {})[track.person_id] = tb.box
    hyp_by_frame: dict[int, dict[int, Box]] = {}
    for track in hypotheses:
        for frame, tb in track.boxes.items():
            hyp_by_frame.setdefault(frame, {})[track.person_id] = tb.box

    false_positives = 0
    false_negatives = 0
    id_switches = 0
    gt_total = 0
    matched_frames: dict[int, int] = {t.person_id: 0 for t in ground_truth}
    last_match: dict[int, int] = {}
    prev_matches: dict[int, int] = {}

    for frame in sorted(set(gt_by_frame) | set(hyp_by_frame)):
        gts = gt_by_frame.get(frame, {})
        hyps = hyp_by_frame.get(frame, {})
        gt_total += len(gts)

        matches: dict[int, int] = {}
        taken: set[int] = set()
        for gt_id, hyp_id in prev_matches.items():
            if gt_id in gts and hyp_id in hyps:
                if iou(gts[gt_id], hyps[hyp_id]) >= iou_threshold:
                    matches[gt_id] = hyp_id
                    taken.add(hyp_id)
        candidates = []
        for gt_id, gt_box in gts.items():
            if gt_id in matches:
                continue
            for hyp_id, hyp_box in hyps.items():
                if hyp_id in taken:
                    continue
                overlap = iou(gt_box, hyp_box)
                if overlap >= iou_threshold:
                    candidates.append((-overlap, gt_id, hyp_id))
        for _, gt_id, hyp_id in sorted(candidates):
            if gt_id in matches or hyp_id in taken:
                continue
            matches[gt_id] = hyp_id
            taken.add(hyp_id)

        for gt_id, hyp_id in matches.items():
            previous = last_match.get(gt_id)
            if previous is not None and previous != hyp_id:
                id_switches += 1
            last_match[gt_id] = hyp_id
            matched_frames[gt_id] = matched_frames.get(gt_id, 0) + 1
        false_negatives += len(gts) - len(matches)
        false_positives += len(hyps) - len(matches)
        prev_matches = matches

    mostly_tracked = 0
    mostly_lost = 0
    for track in ground_truth:
        length = len(track.boxes)
        if length == 0:
            continue
        coverage = matched_frames.get(track.person_id, 0) / length
        if coverage >= 0.8:
            mostly_tracked += 1
        elif coverage <= 0.2:
            mostly_lost += 1

    if gt_total == 0:
        mota = 1.0
    else:
        mota = 1.0 - (false_positives + false_negatives + id_switches) / gt_total
    return Metrics(
        mota=mota,
        false_positives=false_positives,
        false_negatives=false_negatives,
        id_switches=id_switches,
        mostly_tracked=mostly_tracked,
        mostly_lost=mostly_lost,
        ground_truth_count=gt_total,
    )


def write_trajectories(trajectories: list[Trajectory], path) -> None:
    """Write trajectories as CSV rows (frame, person_id, x, y, w, h, flag).

    The flag is 1 for boxes extrapolated from a head detection.
    """
    rows = []
    for track in trajectories:
        for frame, tb in track.boxes.items():
            x, y, w, h = tb.box
            rows.append((frame, track.person_id, x, y, w, h, int(tb.extrapolated)))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame,person_id,x,y,w,h,extrapolated\n")
        for frame, pid, x, y, w, h, flag in rows:
            fh.write(f"{frame},{pid},{float(x)!r},{float(y)!r},{float(w)!r},{float(h)!r},{flag}\n")


def read_trajectories(path) -> list[Trajectory]:
    tracks: dict[int, Trajectory] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("frame,"):
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise ValueError(f"{path}: line {lineno}: expected 7 fields")
            try:
                frame, pid = int(parts[0]), int(parts[1])
                box = (float(parts[2]), float(parts[3]), float(parts[4]), float(parts[5]))
                flag = bool(int(parts[6]))
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
            track = tracks.setdefault(pid, Trajectory(pid))
            if frame in track.boxes:
                raise ValueError(
                    f"{path}: line {lineno}: duplicate frame {frame} for id {pid}"
                )
            track.boxes[frame] = TrajectoryBox(box, flag)
    return [tracks[pid] for pid in sorted(tracks)]
