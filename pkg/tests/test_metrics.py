"""CLEAR-MOT style evaluation and trajectory files."""

import pytest

from fusetrack.metrics import (
    Metrics,
    Trajectory,
    TrajectoryBox,
    evaluate_metrics,
    iou,
    read_trajectories,
    write_trajectories,
)


def track_from(person_id, boxes, flag=False):
    return Trajectory(
        person_id,
        {frame: TrajectoryBox(box, flag) for frame, box in boxes.items()},
    )


def unit_track(person_id, frames, x=0.0, y=0.0):
    return track_from(person_id, {f: (x, y, 10.0, 20.0) for f in frames})


class TestIou:
    def test_disjoint_boxes(self):
        assert iou((0, 0, 10, 10), (20, 20, 10, 10)) == 0.0

    def test_identical_boxes(self):
        assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0

    def test_half_overlap(self):
        assert iou((0, 0, 10, 10), (5, 0, 10, 10)) == pytest.approx(50 / 150)


class TestEvaluateMetrics:
    def test_perfect_tracking(self):
        gt = [unit_track(1, range(10)), unit_track(2, range(10), y=100.0)]
        hyp = [unit_track(5, range(10)), unit_track(6, range(10), y=100.0)]
        m = evaluate_metrics(gt, hyp)
        assert m == Metrics(1.0, 0, 0, 0, 2, 0, 20)

    def test_half_covered_track(self):
        gt = [unit_track(1, range(10))]
        hyp = [unit_track(9, range(5))]
        m = evaluate_metrics(gt, hyp)
        assert m.false_negatives == 5
        assert m.false_positives == 0
        assert m.mota == pytest.approx(0.5)
        assert m.mostly_tracked == 0 and m.mostly_lost == 0

    def test_identity_swap_counts_once_per_reassigned_track(self):
        gt = [unit_track(1, range(10)), unit_track(2, range(10), y=100.0)]
        # hypotheses follow the right boxes but swap identities at frame 5
        h1 = {f: (0.0, 0.0 if f < 5 else 100.0, 10.0, 20.0) for f in range(10)}
        h2 = {f: (0.0, 100.0 if f < 5 else 0.0, 10.0, 20.0) for f in range(10)}
        m = evaluate_metrics(gt, [track_from(7, h1), track_from(8, h2)])
        assert m.id_switches == 2
        assert m.false_positives == 0 and m.false_negatives == 0
        assert m.mota == pytest.approx(1.0 - 2 / 20)

    def test_spurious_boxes_are_false_positives(self):
        gt = [unit_track(1, range(4))]
        hyp = [unit_track(2, range(4)), unit_track(3, range(4), x=500.0)]
        m = evaluate_metrics(gt, hyp)
        assert m.false_positives == 4
        assert m.mota == pytest.approx(0.0)

    def test_mota_formula_identity(self):
        gt = [unit_track(1, range(8))]
        hyp = [unit_track(2, range(3)), unit_track(3, range(5, 8), x=999.0)]
        m = evaluate_metrics(gt, hyp)
        assert m.mota == pytest.approx(
            1.0
            - (m.false_positives + m.false_negatives + m.id_switches)
            / m.ground_truth_count
        )
        assert m.mota <= 1.0

    def test_mostly_tracked_and_lost_thresholds(self):
        gt = [unit_track(1, range(10)), unit_track(2, range(10), y=100.0)]
        hyp = [unit_track(5, range(8)), unit_track(6, range(2), y=100.0)]
        m = evaluate_metrics(gt, hyp)
        assert m.mostly_tracked == 1  # 8/10 coverage
        assert m.mostly_lost == 1  # 2/10 coverage

    def test_empty_ground_truth_scores_one(self):
        m = evaluate_metrics([], [unit_track(1, range(3))])
        assert m.mota == 1.0
        assert m.false_positives == 3

    def test_match_persistence_prevents_flapping(self):
        # two equally good hypotheses on one target: the first match sticks
        gt = [unit_track(1, range(6))]
        hyp = [unit_track(2, range(6)), unit_track(3, range(6), x=1.0)]
        m = evaluate_metrics(gt, hyp)
        assert m.id_switches == 0
        assert m.false_positives == 6

    def test_iou_threshold_validated(self):
        with pytest.raises(ValueError):
            evaluate_metrics([], [], iou_threshold=1.5)


class TestTrajectoryFiles:
    def test_round_trip(self, tmp_path):
        tracks = [
            track_from(1, {0: (0.0, 0.0, 10.0, 20.0), 1: (1.0, 0.0, 10.0, 20.0)}),
            track_from(2, {0: (5.5, 2.25, 8.0, 16.0)}, flag=True),
        ]
        path = tmp_path / "trajectories.csv"
        write_trajectories(tracks, path)
        back = read_trajectories(path)
        assert len(back) == 2
        assert back[0].boxes[1].box == (1.0, 0.0, 10.0, 20.0)
        assert back[1].boxes[0].extrapolated is True

    def test_duplicate_frame_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(
            "frame,person_id,x,y,w,h,extrapolated\n1,1,0,0,1,1,0\n1,1,2,2,1,1,0\n"
        )
        with pytest.raises(ValueError, match="duplicate"):
            read_trajectories(path)

    def test_malformed_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("frame,person_id,x,y,w,h,extrapolated\n1,1,zero,0,1,1,0\n")
        with pytest.raises(ValueError, match="line 2"):
            read_trajectories(path)
