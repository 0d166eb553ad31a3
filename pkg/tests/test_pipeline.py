"""Ingestion, batching, stitching and the synthetic scenario generator."""

import numpy as np
import pytest

from fusetrack.affinity import Priors, RatioPrior, SpatialPrior, StandardBox
from fusetrack.graph import Detection, DetectionKind, Labeling
from fusetrack.metrics import evaluate_metrics, iou
from fusetrack.oracles import exact_partition_solver
from fusetrack.pipeline import (
    Batch,
    batch_sequence,
    extrapolate_body_box,
    load_detections,
    read_feature_samples,
    solve_batch,
    stitch,
    track,
    write_detections,
    write_feature_samples,
)
from fusetrack.solver import SolverConfig
from fusetrack.synth import (
    ScenarioParams,
    body_only,
    perfect_params,
    random_cost_instance,
    scenario_priors,
    scenario_training_samples,
    synthesize_scenario,
)
from fusetrack.affinity import train_regression_model


def default_priors():
    return Priors(SpatialPrior((12.5, 112.0)), RatioPrior(0.35, 0.16))


class TestLoadDetections:
    def test_well_formed_file(self, tmp_path):
        path = tmp_path / "dets.csv"
        path.write_text(
            "frame,id,x,y,w,h,score,kind\n"
            "0,1,10,20,30,60,1.5,body\n"
            "0,2,12,75,10,11,0.5,head\n"
            "1,3,11,20,30,60,-0.25,body\n"
        )
        dets = load_detections(path)
        assert len(dets) == 3
        assert dets[1].kind is DetectionKind.HEAD
        assert dets[2].frame == 1

    def test_score_calibration_midpoint(self, tmp_path):
        path = tmp_path / "dets.csv"
        path.write_text("0,1,0,0,10,10,2.0,body\n")
        dets = load_detections(path, score_scale=3.0, score_offset=2.0)
        assert dets[0].probability == pytest.approx(0.5)

    def test_nonpositive_width_reports_line(self, tmp_path):
        path = tmp_path / "dets.csv"
        path.write_text("0,1,0,0,10,10,0,body\n0,2,0,0,-3,10,0,body\n")
        with pytest.raises(ValueError, match="line 2"):
            load_detections(path)

    def test_bad_field_count_reports_line(self, tmp_path):
        path = tmp_path / "dets.csv"
        path.write_text("0,1,0,0,10,10,0\n")
        with pytest.raises(ValueError, match="line 1"):
            load_detections(path)

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "dets.csv"
        path.write_text("0,1,0,0,10,10,0,body\n1,1,0,0,10,10,0,body\n")
        with pytest.raises(ValueError, match="duplicate"):
            load_detections(path)

    def test_round_trip_through_writer(self, tmp_path):
        dets = [
            Detection(3, 1, (0.0, 2.0, 5.0, 6.0), DetectionKind.HEAD, 0.75),
            Detection(1, 0, (1.0, 2.0, 5.0, 6.0), DetectionKind.BODY, 0.25),
        ]
        path = tmp_path / "dets.csv"
        write_detections(dets, path)
        back = load_detections(path)
        assert [d.id for d in back] == [1, 3]
        assert back[0].probability == pytest.approx(0.25, abs=1e-12)


def spread_detections(per_frame, frames):
    dets = []
    for f in range(frames):
        for i in range(per_frame):
            dets.append(
                Detection(
                    f * per_frame + i, f, (0, 0, 10, 10), DetectionKind.BODY, 0.7
                )
            )
    return dets


class TestBatchSequence:
    def test_small_input_is_one_batch(self):
        dets = spread_detections(10, 10)
        batches = batch_sequence(dets, 1800, 9)
        assert len(batches) == 1
        assert not batches[0].oversized
        assert len(batches[0].detections) == 100

    def test_capacity_limited_batches_overlap(self):
        # ten detections per frame under a 25-node cap leave room for two
        # frames per batch; the requested 2-frame overlap shrinks to one so
        # every batch still advances
        dets = spread_detections(10, 6)
        batches = batch_sequence(dets, 25, 2)
        assert all(len(b.frames) == 2 for b in batches)
        assert [b.frames for b in batches] == [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]
        for first, second in zip(batches, batches[1:]):
            shared = set(first.frames) & set(second.frames)
            assert len(shared) == 1

    def test_every_detection_is_covered(self):
        dets = spread_detections(7, 11)
        batches = batch_sequence(dets, 21, 2)
        seen = {}
        for b in batches:
            for det in b.detections:
                seen.setdefault(det.id, []).append(b.index)
        assert set(seen) == {d.id for d in dets}
        for appearances in seen.values():
            assert len(appearances) in (1, 2)
            if len(appearances) == 2:
                assert appearances[1] == appearances[0] + 1

    def test_oversized_frame_flagged(self):
        dets = spread_detections(30, 1)
        batches = batch_sequence(dets, 25, 2)
        assert len(batches) == 1
        assert batches[0].oversized

    def test_window_overlap_when_capacity_allows(self):
        dets = spread_detections(2, 8)
        batches = batch_sequence(dets, 10, 3)
        assert batches[0].frames == (0, 1, 2, 3, 4)
        assert batches[1].frames[0] == 2  # full 3-frame overlap

    def test_empty_input(self):
        assert batch_sequence([], 100, 9) == []


class TestSolveBatch:
    def test_reaches_exact_optimum_on_small_instances(self):
        g = random_cost_instance(3, 7, frames=2, window=1, density=0.8)
        config = SolverConfig(max_labels=3)
        labeling = solve_batch(g, config)
        exact = exact_partition_solver(g, 3)
        gap = g.objective_of(labeling) - exact.objective
        assert gap >= -1e-9

    def test_deterministic(self):
        g = random_cost_instance(11, 9, frames=3, window=2, density=0.7)
        config = SolverConfig(max_labels=3)
        assert solve_batch(g, config) == solve_batch(g, config)


def make_batch(index, dets):
    frames = tuple(sorted({d.frame for d in dets}))
    ordered = tuple(sorted(dets, key=lambda d: (d.frame, d.id)))
    return Batch(index, frames, ordered)


class TestStitch:
    def body_at(self, i, frame, x=0.0):
        return Detection(i, frame, (x, 0.0, 10.0, 20.0), DetectionKind.BODY, 0.9)

    def test_unanimous_vote_chains_identity(self):
        b0 = make_batch(0, [self.body_at(0, 0), self.body_at(1, 1)])
        b1 = make_batch(1, [self.body_at(1, 1), self.body_at(2, 2)])
        lab = Labeling((0, 0), 1)
        tracks = stitch([b0, b1], [lab, lab], default_priors())
        assert len(tracks) == 1
        assert tracks[0].detection_ids == (0, 1, 2)

    def test_vote_tie_breaks_to_lower_label(self):
        shared = [self.body_at(1, 1, x=0.0), self.body_at(2, 1, x=100.0)]
        b0 = make_batch(0, shared)
        lab0 = Labeling((0, 0), 2)  # one predecessor cluster with both
        successors = shared + [self.body_at(3, 2, x=0.0), self.body_at(4, 2, x=100.0)]
        b1 = make_batch(1, successors)
        # detections ordered by (frame, id): 1, 2, 3, 4
        lab1 = Labeling((0, 1, 0, 1), 2)
        tracks = stitch([b0, b1], [lab0, lab1], default_priors())
        by_first_det = {min(t.detection_ids): t.person_id for t in tracks}
        # the predecessor's id flows to successor label 0 (contains det 1)
        assert by_first_det[1] < by_first_det[2]

    def test_no_detection_in_two_trajectories(self):
        b0 = make_batch(0, [self.body_at(0, 0), self.body_at(1, 1)])
        b1 = make_batch(1, [self.body_at(1, 1), self.body_at(2, 2)])
        lab0 = Labeling((0, 0), 1)
        lab1 = Labeling((0, 0), 1)
        tracks = stitch([b0, b1], [lab0, lab1], default_priors())
        seen = [i for t in tracks for i in t.detection_ids]
        assert len(seen) == len(set(seen))

    def test_unmatched_successor_gets_fresh_id(self):
        b0 = make_batch(0, [self.body_at(0, 0), self.body_at(1, 1)])
        b1 = make_batch(1, [self.body_at(1, 1), self.body_at(2, 2, x=500.0)])
        lab0 = Labeling((0, 0), 2)
        lab1 = Labeling((None, 0), 2)  # overlap detection rejected here
        tracks = stitch([b0, b1], [lab0, lab1], default_priors())
        assert len(tracks) == 2

    def test_head_only_frame_extrapolates_body(self):
        priors = default_priors()
        std = StandardBox()
        body = Detection(0, 0, (100.0, 50.0, 50.0, 120.0), DetectionKind.BODY, 0.9)
        # heads placed exactly at the prior geometry of that body
        def head_for(i, frame, bx=100.0, by=50.0):
            hw, hh = 0.35 * 50.0, 0.16 * 120.0
            cx = bx + 25.0
            cy = by + (112.0 / 120.0) * 120.0
            return Detection(i, frame, (cx - hw / 2, cy - hh / 2, hw, hh), DetectionKind.HEAD, 0.8)

        batch = make_batch(0, [body, head_for(1, 0), head_for(2, 1)])
        lab = Labeling((0, 0, 0), 1)
        tracks = stitch([batch], [lab], priors, std)
        assert len(tracks) == 1
        boxes = tracks[0].boxes
        assert boxes[0].extrapolated is False
        assert boxes[1].extrapolated is True
        assert iou(boxes[1].box, body.box) > 0.95

    def test_batch_labeling_length_checked(self):
        b0 = make_batch(0, [self.body_at(0, 0)])
        with pytest.raises(ValueError):
            stitch([b0], [Labeling((0, 0), 1)], default_priors())


class TestExtrapolation:
    def test_recovers_the_generating_body_box(self):
        priors = default_priors()
        std = StandardBox()
        body_box = (10.0, 20.0, 48.0, 118.0)
        hw = priors.ratio.width_ratio_mean * body_box[2]
        hh = priors.ratio.height_ratio_mean * body_box[3]
        cx = body_box[0] + body_box[2] / 2
        cy = body_box[1] + (112.0 / 120.0) * body_box[3]
        head_box = (cx - hw / 2, cy - hh / 2, hw, hh)
        recovered = extrapolate_body_box(head_box, priors, std)
        assert recovered == pytest.approx(body_box, abs=1e-9)


class TestScenario:
    def test_deterministic_artifacts(self, tmp_path):
        a = synthesize_scenario(99, ScenarioParams(persons=3, frames=12))
        b = synthesize_scenario(99, ScenarioParams(persons=3, frames=12))
        pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
        write_detections(a.detections, pa)
        write_detections(b.detections, pb)
        assert pa.read_bytes() == pb.read_bytes()
        ca, cb = tmp_path / "ca.csv", tmp_path / "cb.csv"
        a.correspondences.save(ca)
        b.correspondences.save(cb)
        assert ca.read_bytes() == cb.read_bytes()

    def test_occlusion_bookkeeping(self):
        scn = synthesize_scenario(5, ScenarioParams())
        assert scn.stats.occluded_person_frames > 0
        assert scn.stats.body_missing_frames > 0
        assert scn.stats.body_missing_head_present > 0
        # the recovery opportunity exists: some frames lack the body but
        # still carry the head detection
        assert scn.stats.body_missing_head_present <= scn.stats.body_missing_frames

    def test_perfect_params_produce_complete_detections(self):
        params = perfect_params(persons=3, frames=10)
        scn = synthesize_scenario(1, params)
        assert scn.stats.body_missing_frames == 0
        assert scn.stats.false_positive_detections == 0
        assert len(scn.detections) == 3 * 10 * 2

    def test_identities_cover_true_detections_only(self):
        scn = synthesize_scenario(2, ScenarioParams())
        labeled = sum(1 for d in scn.detections if d.id in scn.identities)
        assert labeled + scn.stats.false_positive_detections == len(scn.detections)

    def test_cross_person_correspondences_are_low(self):
        scn = synthesize_scenario(3, ScenarioParams(persons=3, frames=10))
        for (id_a, id_b), (fa, fb, co, dm_a, dm_b) in scn.correspondences._rows.items():
            pa, pb = scn.identities.get(id_a), scn.identities.get(id_b)
            if pa is None or pa != pb:
                assert co <= 0.3 * min(dm_a, dm_b)


class TestEndToEnd:
    def test_tiny_perfect_scenario_tracks_exactly(self):
        params = perfect_params(persons=2, frames=10)
        train_scn = synthesize_scenario(21, params)
        priors = scenario_priors(train_scn)
        model = train_regression_model(scenario_training_samples(train_scn, priors))
        eval_scn = synthesize_scenario(22, params)
        result = track(eval_scn.detections, eval_scn.correspondences, model, priors)
        metrics = evaluate_metrics(eval_scn.ground_truth, result.trajectories)
        assert metrics.mota == 1.0
        assert metrics.false_positives == 0 and metrics.false_negatives == 0

    def test_body_only_filter(self):
        scn = synthesize_scenario(4, ScenarioParams(persons=2, frames=6))
        bodies = body_only(scn.detections)
        assert bodies and all(d.kind is DetectionKind.BODY for d in bodies)


class TestFeatureFiles:
    def test_round_trip(self, tmp_path):
        samples = {
            "spatial_head_body": (
                np.array([[1.0, 2.0], [3.0, 4.0]]),
                np.array([1, 0]),
            ),
            "temporal_same_kind": (np.array([[0.1, 0.2, 0.3]]), np.array([1])),
            "temporal_head_body": (np.array([[0.9, 0.0, 0.1]]), np.array([0])),
        }
        path = tmp_path / "features.csv"
        write_feature_samples(samples, path)
        back = read_feature_samples(path)
        for family, (X, y) in samples.items():
            np.testing.assert_allclose(back[family][0], X)
            np.testing.assert_array_equal(back[family][1], y)

    def test_unknown_family_rejected(self, tmp_path):
        path = tmp_path / "features.csv"
        path.write_text("mystery,1,0.5\n")
        with pytest.raises(ValueError, match="unknown family"):
            read_feature_samples(path)
