"""Feature and cost model for head / full-body detection pairs.

All geometry lives in a y-up pixel frame: a box ``(x, y, w, h)`` has its
lower-left corner at ``(x, y)``.  Positions inside a box are expressed as
barycentric coordinates over the (lower-left, upper-left, upper-right)
corner triangle, which makes them invariant to box translation and scale and
lets every measurement happen inside one fixed standard box.

Pairwise association probabilities come from per-family logistic models and
are turned into additive costs through the complementary logit, so that
probability one half maps to cost zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .graph import (
    CostGraph,
    Detection,
    DetectionKind,
    TrackingGraph,
    clamp_probability,
)

Box = tuple[float, float, float, float]
Pixel = tuple[float, float]

SPATIAL_HEAD_BODY = "spatial_head_body"
TEMPORAL_SAME_KIND = "temporal_same_kind"
TEMPORAL_HEAD_BODY = "temporal_head_body"
FAMILIES = (SPATIAL_HEAD_BODY, TEMPORAL_SAME_KIND, TEMPORAL_HEAD_BODY)


# ---------------------------------------------------------------------------
# relative positioning


def box_corners(box: Box) -> tuple[Pixel, Pixel, Pixel]:
    """Lower-left, upper-left and upper-right corners of a box."""
    x, y, w, h = box
    return (x, y), (x, y + h), (x + w, y + h)


def box_center(box: Box) -> Pixel:
    x, y, w, h = box
    return (x + 0.5 * w, y + 0.5 * h)


@dataclass(frozen=True)
class StandardBox:
    """Fixed reference box all spatial measurements are mapped into."""

    x: float = 0.0
    y: float = 0.0
    width: float = 50.0
    height: float = 120.0

    def __post_init__(self) -> None:
        if not (self.width > 0 and self.height > 0):
            raise ValueError("standard box must have positive size")

    @property
    def box(self) -> Box:
        return (self.x, self.y, self.width, self.height)

    @property
    def center(self) -> Pixel:
        return box_center(self.box)


def barycentric(pixel: Pixel, box: Box) -> tuple[float, float, float]:
    """Affine weights of ``pixel`` over the box corner triangle.

    The weights sum to one and reproduce the pixel exactly as a weighted
    combination of the corners; points outside the triangle simply get
    weights outside [0, 1].
    """
    ll, ul, ur = box_corners(box)
    ax, ay = ul[0] - ll[0], ul[1] - ll[1]
    bx, by = ur[0] - ll[0], ur[1] - ll[1]
    det = ax * by - ay * bx
    if det == 0.0:
        raise ValueError("degenerate box: corner triangle has zero area")
    px, py = pixel[0] - ll[0], pixel[1] - ll[1]
    lam2 = (px * by - py * bx) / det
    lam3 = (ax * py - ay * px) / det
    return (1.0 - lam2 - lam3, lam2, lam3)


def map_to_standard(pixel: Pixel, box: Box, std: StandardBox) -> Pixel:
    """Transplant a pixel into the standard box at the same relative position."""
    lam = barycentric(pixel, box)
    ll, ul, ur = box_corners(std.box)
    return (
        lam[0] * ll[0] + lam[1] * ul[0] + lam[2] * ur[0],
        lam[0] * ll[1] + lam[1] * ul[1] + lam[2] * ur[1],
    )


def mirror_to_left_half(pixel: Pixel, box: Box) -> Pixel:
    """Reflect a pixel across the box's vertical center line if it lies right of it."""
    cx = box[0] + 0.5 * box[2]
    if pixel[0] > cx:
        return (2.0 * cx - pixel[0], pixel[1])
    return pixel


# ---------------------------------------------------------------------------
# priors


@dataclass(frozen=True)
class SpatialPrior:
    """Expected (mirrored) head position inside the standard box."""

    expected_position: Pixel


@dataclass(frozen=True)
class RatioPrior:
    """Mean head/body width and height ratios of matching detections."""

    width_ratio_mean: float
    height_ratio_mean: float

    def __post_init__(self) -> None:
        for value in (self.width_ratio_mean, self.height_ratio_mean):
            if not (0.0 < value < 1.0):
                raise ValueError("ratio means must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class Priors:
    spatial: SpatialPrior
    ratio: RatioPrior


def learn_priors(
    pairs: Sequence[tuple[Detection, Detection]], std: StandardBox
) -> Priors:
    """Fit the position and size priors from annotated (head, body) pairs."""
    if not pairs:
        raise ValueError("need at least one annotated head/body pair")
    positions = []
    width_ratios = []
    height_ratios = []
    for head, body in pairs:
        _require_kinds(head, body)
        mirrored = mirror_to_left_half(head.center, body.box)
        positions.append(map_to_standard(mirrored, body.box, std))
        width_ratios.append(head.box[2] / body.box[2])
        height_ratios.append(head.box[3] / body.box[3])
    mean_x = float(np.mean([p[0] for p in positions]))
    mean_y = float(np.mean([p[1] for p in positions]))
    if mean_x > std.x + 0.5 * std.width + 1e-9:
        raise ValueError("expected head position fell outside the left half")
    return Priors(
        SpatialPrior((mean_x, mean_y)),
        RatioPrior(float(np.mean(width_ratios)), float(np.mean(height_ratios))),
    )


def _require_kinds(head: Detection, body: Detection) -> None:
    if head.kind is not DetectionKind.HEAD or body.kind is not DetectionKind.BODY:
        raise ValueError("expected a (head, body) detection pair")


# ---------------------------------------------------------------------------
# features


def spatial_head_body_features(
    head: Detection, body: Detection, prior: SpatialPrior, std: StandardBox
) -> tuple[float, float]:
    """Distance and angle between observed and expected head position.

    The head center is mirrored to the left half of the body box, mapped into
    the standard box, and compared against the prior position: euclidean
    distance in standard pixels, and the angle (in [0, pi]) between the rays
    from the standard box center to the expected and observed positions.
    """
    _require_kinds(head, body)
    mirrored = mirror_to_left_half(head.center, body.box)
    observed = map_to_standard(mirrored, body.box, std)
    expected = prior.expected_position
    distance = math.hypot(observed[0] - expected[0], observed[1] - expected[1])
    cx, cy = std.center
    ux, uy = expected[0] - cx, expected[1] - cy
    vx, vy = observed[0] - cx, observed[1] - cy
    if (ux == 0.0 and uy == 0.0) or (vx == 0.0 and vy == 0.0):
        angle = 0.0
    else:
        angle = math.atan2(abs(ux * vy - uy * vx), ux * vx + uy * vy)
    return distance, angle


def temporal_features(
    u: Detection, v: Detection, co: float, dm_u: float, dm_v: float
) -> tuple[float, ...]:
    """Pixel-correspondence ratios between two detections.

    Same-kind pairs yield the three ratios (count over each sample size and
    over their mean); mixed head/body pairs yield the single ratio relative
    to the head's sample count.
    """
    if dm_u <= 0 or dm_v <= 0:
        raise ValueError("sampled-pixel counts must be positive")
    if co < 0 or co > min(dm_u, dm_v):
        raise ValueError("correspondence count outside [0, min(dm_u, dm_v)]")
    if u.kind is v.kind:
        return (co / dm_u, co / dm_v, co / (0.5 * (dm_u + dm_v)))
    dm_head = dm_u if u.kind is DetectionKind.HEAD else dm_v
    return (co / dm_head,)


def ratio_features(
    head: Detection, body: Detection, prior: RatioPrior
) -> tuple[float, float]:
    """Absolute deviation of the observed head/body size ratios from the prior."""
    _require_kinds(head, body)
    bw, bh = body.box[2], body.box[3]
    if bw <= 0 or bh <= 0:
        raise ValueError("body box must have positive size")
    return (
        abs(prior.width_ratio_mean - head.box[2] / bw),
        abs(prior.height_ratio_mean - head.box[3] / bh),
    )


# ---------------------------------------------------------------------------
# logistic regression


@dataclass(frozen=True)
class LogisticModel:
    """Weights and bias of one trained logistic regression."""

    weights: np.ndarray
    bias: float

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(weights)) or not math.isfinite(self.bias):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "weights", weights)

    def predict(self, features: Sequence[float]) -> float:
        z = float(np.dot(self.weights, np.asarray(features, dtype=np.float64)))
        z += self.bias
        return clamp_probability(1.0 / (1.0 + math.exp(-min(max(z, -60.0), 60.0))))


@dataclass
class FitResult:
    model: LogisticModel
    losses: list[float]
    steps: int
    converged: bool


def fit_logistic(
    features: np.ndarray,
    labels: np.ndarray,
    l2: float = 1e-4,
    grad_tol: float = 1e-6,
    max_steps: int = 10_000,
) -> FitResult:
    """L2-regularized logistic regression by gradient descent.

    Minimizes the mean negative log-likelihood plus ``l2 * ||w||^2`` (bias
    unregularized).  Features are standardized internally so the descent is
    well conditioned regardless of their scale, and the transform is folded
    back into the returned weights; the step adapts by doubling after clean
    descents and halving until the loss does not increase.  Stops when the
    gradient norm falls below ``grad_tol`` or after ``max_steps``.
    """
    raw = np.asarray(features, dtype=np.float64)
    if raw.ndim == 1:
        raw = raw[:, None]
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if raw.shape[0] != y.shape[0] or raw.shape[0] == 0:
        raise ValueError("features and labels disagree or are empty")
    if not (np.any(y == 0.0) and np.any(y == 1.0)):
        raise ValueError("need at least one sample of each class")

    mean = raw.mean(axis=0)
    scale = raw.std(axis=0)
    scale[scale == 0.0] = 1.0
    X = (raw - mean) / scale
    m, k = X.shape
    w = np.zeros(k)
    b = 0.0

    def loss_and_grad(w, b):
        z = X @ w + b
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z)) + l2 * float(np.dot(w, w))
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))
        residual = p - y
        grad_w = X.T @ residual / m + 2.0 * l2 * w
        grad_b = float(np.mean(residual))
        return loss, grad_w, grad_b

    step = 1.0
    loss, grad_w, grad_b = loss_and_grad(w, b)
    losses = [loss]
    converged = False
    for _ in range(max_steps):
        if math.sqrt(float(np.dot(grad_w, grad_w)) + grad_b**2) <= grad_tol:
            converged = True
            break
        while True:
            w_new = w - step * grad_w
            b_new = b - step * grad_b
            loss_new, grad_w_new, grad_b_new = loss_and_grad(w_new, b_new)
            if loss_new <= loss:
                break
            step *= 0.5
            if step < 1e-18:
                # flat to machine precision; treat as converged
                loss_new, grad_w_new, grad_b_new = loss, grad_w, grad_b
                w_new, b_new = w, b
                break
        w, b, loss, grad_w, grad_b = w_new, b_new, loss_new, grad_w_new, grad_b_new
        losses.append(loss)
        step *= 2.0
    if math.sqrt(float(np.dot(grad_w, grad_w)) + grad_b**2) <= grad_tol:
        converged = True
    # undo the standardization: w.(x - mean)/scale + b == (w/scale).x + (b - w.mean/scale)
    w_raw = w / scale
    b_raw = b - float(np.dot(w, mean / scale))
    return FitResult(LogisticModel(w_raw, b_raw), losses, len(losses) - 1, converged)


@dataclass(frozen=True)
class RegressionModel:
    """One logistic model per pairwise cost family."""

    spatial_head_body: LogisticModel
    temporal_same_kind: LogisticModel
    temporal_head_body: LogisticModel

    def family(self, name: str) -> LogisticModel:
        if name not in FAMILIES:
            raise KeyError(f"unknown cost family {name!r}")
        return getattr(self, name)


# ---------------------------------------------------------------------------
# costs


def probability_to_cost(p: float) -> float:
    """Complementary logit: log((1-p)/p) after clamping; zero at one half."""
    p = clamp_probability(p)
    return math.log((1.0 - p) / p)


class Correspondences:
    """Pixel-correspondence counts between detection pairs, keyed by id."""

    def __init__(self) -> None:
        self._rows: dict[tuple[int, int], tuple[int, int, float, float, float]] = {}

    def __len__(self) -> int:
        return len(self._rows)

    def add(
        self,
        frame_a: int,
        id_a: int,
        frame_b: int,
        id_b: int,
        co: float,
        dm_a: float,
        dm_b: float,
    ) -> None:
        if dm_a <= 0 or dm_b <= 0:
            raise ValueError("sampled-pixel counts must be positive")
        if co < 0 or co > min(dm_a, dm_b):
            raise ValueError("correspondence count outside [0, min(dm_a, dm_b)]")
        if id_a == id_b:
            raise ValueError("correspondence needs two distinct detections")
        if id_a < id_b:
            key, row = (id_a, id_b), (frame_a, frame_b, co, dm_a, dm_b)
        else:
            key, row = (id_b, id_a), (frame_b, frame_a, co, dm_b, dm_a)
        if key in self._rows:
            raise ValueError(f"duplicate correspondence for pair {key}")
        self._rows[key] = row

    def get(self, id_a: int, id_b: int) -> Optional[tuple[float, float, float]]:
        """(co, dm_a, dm_b) oriented to the argument order, or None."""
        key = (id_a, id_b) if id_a < id_b else (id_b, id_a)
        row = self._rows.get(key)
        if row is None:
            return None
        _, _, co, dm_lo, dm_hi = row
        if id_a < id_b:
            return (co, dm_lo, dm_hi)
        return (co, dm_hi, dm_lo)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("frame_a,det_id_a,frame_b,det_id_b,co,dm_a,dm_b\n")
            for (id_a, id_b), (fa, fb, co, dm_a, dm_b) in sorted(self._rows.items()):
                fh.write(f"{fa},{id_a},{fb},{id_b},{float(co)!r},{float(dm_a)!r},{float(dm_b)!r}\n")

    @classmethod
    def load(cls, path) -> "Correspondences":
        out = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("frame_a"):
                    continue
                parts = line.split(",")
                if len(parts) != 7:
                    raise ValueError(f"{path}: line {lineno}: expected 7 fields")
                try:
                    out.add(
                        int(parts[0]),
                        int(parts[1]),
                        int(parts[2]),
                        int(parts[3]),
                        float(parts[4]),
                        float(parts[5]),
                        float(parts[6]),
                    )
                except ValueError as exc:
                    raise ValueError(f"{path}: line {lineno}: {exc}") from exc
        return out


@dataclass(frozen=True)
class AffinityConfig:
    """Knobs of the cost construction."""

    temporal_window: int = 9
    same_detector_repulsion: float = 1e3
    std_box: StandardBox = StandardBox()

    def __post_init__(self) -> None:
        if self.temporal_window < 0:
            raise ValueError("temporal window must be >= 0")
        if self.same_detector_repulsion <= 0:
            raise ValueError("repulsion cost must be positive")


def iter_window_pairs(
    detections: Sequence[Detection], window: int
) -> Iterable[tuple[int, int]]:
    """Index pairs (i, j), i < j, at most ``window`` frames apart."""
    by_frame: dict[int, list[int]] = {}
    for i, det in enumerate(detections):
        by_frame.setdefault(det.frame, []).append(i)
    frames = sorted(by_frame)
    for fa in frames:
        bucket_a = by_frame[fa]
        for a_pos, i in enumerate(bucket_a):
            for j in bucket_a[a_pos + 1 :]:
                yield (i, j) if i < j else (j, i)
        for fb in range(fa + 1, fa + window + 1):
            for i in bucket_a:
                for j in by_frame.get(fb, ()):
                    yield (i, j) if i < j else (j, i)


@dataclass
class CostBuild:
    """A built tracking graph plus construction diagnostics."""

    graph: TrackingGraph
    missing_correspondences: int


def pair_probability(
    u: Detection,
    v: Detection,
    model: RegressionModel,
    priors: Priors,
    correspondences: Correspondences,
    config: AffinityConfig,
) -> tuple[Optional[float], bool]:
    """Association probability for one in-window pair.

    Returns ``(None, False)`` for same-frame same-kind pairs (those get the
    constant repulsion cost, not a learned probability); the flag reports a
    missing correspondence row on a cross-frame pair.
    """
    same_frame = u.frame == v.frame
    if same_frame and u.kind is v.kind:
        return None, False
    if same_frame:
        head, body = (u, v) if u.kind is DetectionKind.HEAD else (v, u)
        features = spatial_head_body_features(head, body, priors.spatial, config.std_box)
        return model.spatial_head_body.predict(features), False

    row = correspondences.get(u.id, v.id)
    missing = row is None
    if u.kind is v.kind:
        if missing:
            ratios: tuple[float, ...] = (0.0, 0.0, 0.0)
        else:
            ratios = temporal_features(u, v, row[0], row[1], row[2])
        return model.temporal_same_kind.predict(ratios), missing
    head, body = (u, v) if u.kind is DetectionKind.HEAD else (v, u)
    if missing:
        head_ratio = 0.0
    else:
        co, dm_u, dm_v = row
        dm_head = dm_u if u.kind is DetectionKind.HEAD else dm_v
        head_ratio = co / dm_head
    dw, dh = ratio_features(head, body, priors.ratio)
    return model.temporal_head_body.predict((head_ratio, dw, dh)), missing


def build_costs(
    detections: Sequence[Detection],
    model: RegressionModel,
    priors: Priors,
    correspondences: Correspondences,
    config: AffinityConfig,
) -> CostBuild:
    """Assemble the labeling cost graph for a set of detections.

    Unary costs come from the detection probabilities.  Same-frame same-kind
    pairs repel with a constant cost, same-frame head/body pairs use the
    spatial model, cross-frame pairs within the temporal window use the
    matching temporal model, and pairs farther apart stay disconnected.
    """
    if not detections:
        raise ValueError("need at least one detection")
    unary = [probability_to_cost(det.probability) for det in detections]
    edges: list[tuple[int, int, float]] = []
    missing_total = 0
    for i, j in iter_window_pairs(detections, config.temporal_window):
        u, v = detections[i], detections[j]
        if u.frame == v.frame and u.kind is v.kind:
            edges.append((i, j, config.same_detector_repulsion))
            continue
        p, missing = pair_probability(u, v, model, priors, correspondences, config)
        missing_total += int(missing)
        weight = probability_to_cost(p)
        if weight != 0.0:
            edges.append((i, j, weight))
    graph = TrackingGraph(detections, unary, edges, config.temporal_window)
    return CostBuild(graph, missing_total)


# ---------------------------------------------------------------------------
# training-sample extraction


def extract_training_samples(
    detections: Sequence[Detection],
    identities: Mapping[int, int],
    correspondences: Correspondences,
    priors: Priors,
    config: AffinityConfig,
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Labeled feature vectors per cost family from identity-annotated data.

    A pair is a positive sample when both detections carry the same person
    identity; detections without an identity (false positives) yield
    negatives.  Same-frame same-kind pairs are skipped: they never go
    through a learned model.
    """
    samples: dict[str, tuple[list[tuple[float, ...]], list[int]]] = {
        name: ([], []) for name in FAMILIES
    }
    for i, j in iter_window_pairs(detections, config.temporal_window):
        u, v = detections[i], detections[j]
        same_frame = u.frame == v.frame
        if same_frame and u.kind is v.kind:
            continue
        pu, pv = identities.get(u.id), identities.get(v.id)
        label = int(pu is not None and pu == pv)
        if same_frame:
            head, body = (u, v) if u.kind is DetectionKind.HEAD else (v, u)
            features = spatial_head_body_features(
                head, body, priors.spatial, config.std_box
            )
            family = SPATIAL_HEAD_BODY
        elif u.kind is v.kind:
            row = correspondences.get(u.id, v.id)
            features = (
                temporal_features(u, v, row[0], row[1], row[2])
                if row is not None
                else (0.0, 0.0, 0.0)
            )
            family = TEMPORAL_SAME_KIND
        else:
            head, body = (u, v) if u.kind is DetectionKind.HEAD else (v, u)
            row = correspondences.get(u.id, v.id)
            if row is None:
                head_ratio = 0.0
            else:
                co, dm_u, dm_v = row
                head_ratio = co / (dm_u if u.kind is DetectionKind.HEAD else dm_v)
            dw, dh = ratio_features(head, body, priors.ratio)
            features = (head_ratio, dw, dh)
            family = TEMPORAL_HEAD_BODY
        samples[family][0].append(tuple(features))
        samples[family][1].append(label)
    return {
        name: (np.asarray(feats, dtype=np.float64), np.asarray(labs, dtype=np.int64))
        for name, (feats, labs) in samples.items()
    }


def train_regression_model(
    samples: Mapping[str, tuple[np.ndarray, np.ndarray]]
) -> RegressionModel:
    """Fit all three cost-family models from labeled samples."""
    fitted: dict[str, LogisticModel] = {}
    for name in FAMILIES:
        if name not in samples:
            raise ValueError(f"missing samples for family {name!r}")
        X, y = samples[name]
        fitted[name] = fit_logistic(X, y).model
    return RegressionModel(**fitted)


# ---------------------------------------------------------------------------
# model and prior files


def save_model(model: RegressionModel, path) -> None:
    """Write a regression model as ``key value`` text lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for name in FAMILIES:
            family = model.family(name)
            fh.write(f"{name}.bias {float(family.bias)!r}\n")
            for i, weight in enumerate(family.weights):
                fh.write(f"{name}.w{i} {float(weight)!r}\n")


def load_model(path) -> RegressionModel:
    values: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}: line {lineno}: expected 'key value'")
            values[parts[0]] = float(parts[1])
    models: dict[str, LogisticModel] = {}
    for name in FAMILIES:
        bias_key = f"{name}.bias"
        if bias_key not in values:
            raise ValueError(f"{path}: missing {bias_key}")
        weights = []
        while f"{name}.w{len(weights)}" in values:
            weights.append(values[f"{name}.w{len(weights)}"])
        models[name] = LogisticModel(np.array(weights), values[bias_key])
    return RegressionModel(**models)


def save_priors(priors: Priors, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"head_position_x {float(priors.spatial.expected_position[0])!r}\n")
        fh.write(f"head_position_y {float(priors.spatial.expected_position[1])!r}\n")
        fh.write(f"width_ratio_mean {float(priors.ratio.width_ratio_mean)!r}\n")
        fh.write(f"height_ratio_mean {float(priors.ratio.height_ratio_mean)!r}\n")


def load_priors(path) -> Priors:
    values: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}: line {lineno}: expected 'key value'")
            values[parts[0]] = float(parts[1])
    try:
        return Priors(
            SpatialPrior((values["head_position_x"], values["head_position_y"])),
            RatioPrior(values["width_ratio_mean"], values["height_ratio_mean"]),
        )
    except KeyError as exc:
        raise ValueError(f"{path}: missing prior entry {exc}") from exc
