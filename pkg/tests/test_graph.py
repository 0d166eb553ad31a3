"""Cost graph storage, objective/gradient/quadratic-form evaluation."""

import math

import numpy as np
import pytest

from fusetrack.graph import (
    CostGraph,
    Detection,
    DetectionKind,
    Labeling,
    TrackingGraph,
    clamp_probability,
    feasibility_violation,
    labeling_to_point,
    point_to_labeling,
    read_instance,
    write_instance,
)

from conftest import (
    dense_gradient,
    dense_objective,
    dense_q,
    random_feasible_point,
    random_graph,
    random_labeling,
)


class TestObjective:
    def test_two_node_hand_sum(self):
        # both nodes share the single label: -1 - 2 - 3
        g = CostGraph([-1.0, -2.0], [(0, 1, -3.0)])
        point = Labeling((0, 0), 1).to_point()
        assert g.objective(point) == -6.0
        assert g.objective_of(Labeling((0, 0), 1)) == -6.0

    def test_zero_point_costs_nothing(self):
        g = CostGraph([-1.0, -2.0], [(0, 1, -3.0)])
        assert g.objective(np.zeros(4)) == 0.0

    def test_sparse_matches_dense_oracle(self, rng):
        for _ in range(10):
            g = random_graph(rng, 5)
            x = random_feasible_point(rng, 5, 2)
            assert g.objective(x) == pytest.approx(dense_objective(g, x), abs=1e-12)

    def test_dimension_mismatch_raises(self):
        g = CostGraph([-1.0, -2.0], [(0, 1, -3.0)])
        with pytest.raises(ValueError):
            g.objective(np.zeros(3))

    def test_label_permutation_invariance_is_exact(self, rng):
        g = random_graph(rng, 6)
        n_labels = 3
        for _ in range(20):
            x = random_feasible_point(rng, 6, n_labels)
            perm = rng.permutation(n_labels)
            permuted = x.reshape(6, n_labels)[:, perm].reshape(-1)
            assert g.objective(permuted) == g.objective(x)

    def test_labeling_permutation_invariance_is_exact(self, rng):
        g = random_graph(rng, 8)
        for _ in range(20):
            lab = random_labeling(rng, 8, 4)
            perm = rng.permutation(4)
            relabeled = Labeling(
                tuple(None if a is None else int(perm[a]) for a in lab.assignment), 4
            )
            assert g.objective_of(relabeled) == g.objective_of(lab)

    def test_regularizer_vanishes_exactly_on_binary_points(self, rng):
        g = random_graph(rng, 7)
        for _ in range(25):
            x = random_labeling(rng, 7, 3).to_point()
            for lam in (0.5, 1.0, 7.0):
                assert g.objective(x, lam) == g.objective(x, 0.0)


class TestGradient:
    def test_zero_point_gradient_is_unary(self):
        g = CostGraph([-1.0, -2.0], [(0, 1, -3.0)])
        np.testing.assert_array_equal(
            g.gradient(np.zeros(6)), np.repeat([-1.0, -2.0], 3)
        )

    def test_zero_point_with_regularizer_shifts_by_lambda(self):
        g = CostGraph([-1.0, -2.0], [(0, 1, -3.0)])
        np.testing.assert_array_equal(
            g.gradient(np.zeros(6), 2.0), np.repeat([-3.0, -4.0], 3)
        )

    def test_matches_dense_oracle(self, rng):
        g = random_graph(rng, 6)
        x = random_feasible_point(rng, 6, 2)
        np.testing.assert_allclose(
            g.gradient(x, 0.7), dense_gradient(g, x, 0.7), atol=1e-12
        )

    def test_matches_central_finite_differences(self, rng):
        g = random_graph(rng, 5)
        h = 1e-6
        for lam in (0.0, 1.3):
            x = random_feasible_point(rng, 5, 2)
            grad = g.gradient(x, lam)
            for i in range(x.size):
                e = np.zeros_like(x)
                e[i] = h
                fd = (g.objective(x + e, lam) - g.objective(x - e, lam)) / (2 * h)
                assert grad[i] == pytest.approx(fd, abs=1e-4)


class TestQuadraticForm:
    def test_single_pair_counted_twice(self):
        g = CostGraph([0.0, 0.0], [(0, 1, -3.0)])
        assert g.quadratic_form(np.ones(2), 0.0) == -6.0

    def test_regularizer_adds_diagonal(self):
        g = CostGraph([0.0, 0.0], [(0, 1, -3.0)])
        assert g.quadratic_form(np.ones(2), 1.0) == -2.0

    def test_matches_dense_oracle(self, rng):
        g = random_graph(rng, 6)
        for lam in (0.0, 0.9):
            d = rng.normal(size=6 * 2)
            Q = dense_q(g, 2) + 2.0 * lam * np.eye(12)
            assert g.quadratic_form(d, lam) == pytest.approx(float(d @ Q @ d), abs=1e-12)


class TestStorage:
    def test_upper_triangle_only_and_label_independent(self):
        g = CostGraph([0.0] * 4, [(2, 0, 1.5), (1, 3, -2.0)])
        assert g.nnz == 2
        assert list(g.edge_u) == [0, 1] and list(g.edge_v) == [2, 3]
        # nothing stored scales with a label count
        assert g.adjacency.nnz == 2 * g.nnz
        assert g.unary.shape == (4,)

    def test_zero_weight_edges_are_dropped(self):
        g = CostGraph([0.0, 0.0, 0.0], [(0, 1, 0.0), (1, 2, 2.0)])
        assert g.nnz == 1

    def test_self_edge_rejected(self):
        with pytest.raises(ValueError):
            CostGraph([0.0, 0.0], [(1, 1, 1.0)])

    def test_duplicate_edge_rejected(self):
        with pytest.raises(ValueError):
            CostGraph([0.0, 0.0], [(0, 1, 1.0), (1, 0, 2.0)])

    def test_neighbors_scan(self):
        g = CostGraph([0.0] * 3, [(0, 1, 2.0), (0, 2, -1.0)])
        idx, w = g.neighbors(0)
        assert sorted(zip(idx.tolist(), w.tolist())) == [(1, 2.0), (2, -1.0)]

    def test_max_absolute_row_sum(self):
        g = CostGraph([0.0] * 3, [(0, 1, -3.0), (0, 2, 1.0)])
        assert g.max_absolute_row_sum() == 4.0
        assert CostGraph([1.0], []).max_absolute_row_sum() == 0.0


class TestTrackingGraph:
    def _dets(self, frames):
        return [
            Detection(i, f, (0.0, 0.0, 10.0, 20.0), DetectionKind.BODY, 0.8)
            for i, f in enumerate(frames)
        ]

    def test_window_violation_rejected(self):
        dets = self._dets([0, 12])
        with pytest.raises(ValueError, match="window"):
            TrackingGraph(dets, [0.0, 0.0], [(0, 1, 1.0)], temporal_window=9)

    def test_within_window_accepted(self):
        dets = self._dets([0, 9])
        g = TrackingGraph(dets, [0.0, 0.0], [(0, 1, 1.0)], temporal_window=9)
        assert g.nnz == 1

    def test_duplicate_ids_rejected(self):
        dets = [
            Detection(1, 0, (0, 0, 1, 1), DetectionKind.BODY, 0.5),
            Detection(1, 0, (0, 0, 1, 1), DetectionKind.HEAD, 0.5),
        ]
        with pytest.raises(ValueError, match="unique"):
            TrackingGraph(dets, [0.0, 0.0], [], temporal_window=9)

    def test_detection_validation(self):
        with pytest.raises(ValueError):
            Detection(0, -1, (0, 0, 1, 1), DetectionKind.BODY, 0.5)
        with pytest.raises(ValueError):
            Detection(0, 0, (0, 0, 0.0, 1), DetectionKind.BODY, 0.5)

    def test_probability_clamped(self):
        det = Detection(0, 0, (0, 0, 1, 1), DetectionKind.BODY, 1.0)
        assert det.probability == 1.0 - 1e-6
        assert clamp_probability(0.0) == 1e-6


class TestLabelingConversions:
    def test_example_block_layout(self):
        # first node gets the middle of three labels, second is rejected
        lab = Labeling((1, None), 3)
        np.testing.assert_array_equal(lab.to_point(), [0, 1, 0, 0, 0, 0])

    def test_round_trip_identity(self, rng):
        for _ in range(20):
            lab = random_labeling(rng, 6, 3)
            assert Labeling.from_point(lab.to_point(), 3) == lab

    def test_two_ones_in_a_block_rejected(self):
        with pytest.raises(ValueError, match="more than one"):
            Labeling.from_point(np.array([1.0, 1.0]), 2)

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError, match="binary"):
            point_to_labeling(np.array([0.5, 0.0]), 2)

    def test_module_level_helpers(self):
        lab = Labeling((0, None), 2)
        assert point_to_labeling(labeling_to_point(lab), 2) == lab

    def test_clusters_and_used_labels(self):
        lab = Labeling((2, None, 2, 0), 3)
        assert lab.used_labels() == (0, 2)
        assert lab.clusters() == {0: (3,), 2: (0, 2)}


class TestFeasibility:
    def test_violations_measured(self):
        assert feasibility_violation(np.array([0.5, 0.5]), 1) == 0.0
        assert feasibility_violation(np.array([0.7, 0.7]), 1) == pytest.approx(0.4)
        assert feasibility_violation(np.array([-0.2, 0.0]), 1) == pytest.approx(0.2)
        assert feasibility_violation(np.array([1.1, 0.0]), 1) == pytest.approx(0.1)


class TestInstanceFormat:
    def test_round_trip(self, tmp_path, rng):
        g = random_graph(rng, 6)
        path = tmp_path / "instance.txt"
        write_instance(g, path)
        back = read_instance(path)
        np.testing.assert_allclose(back.unary, g.unary)
        np.testing.assert_array_equal(back.edge_u, g.edge_u)
        np.testing.assert_array_equal(back.edge_v, g.edge_v)
        np.testing.assert_allclose(back.edge_w, g.edge_w)

    def test_tracking_graph_keeps_frames_and_window(self, tmp_path):
        dets = [
            Detection(10, 0, (0, 0, 1, 1), DetectionKind.BODY, 0.6),
            Detection(11, 4, (0, 0, 1, 1), DetectionKind.BODY, 0.4),
        ]
        g = TrackingGraph(dets, [-0.5, 0.5], [(0, 1, -1.25)], temporal_window=5)
        path = tmp_path / "instance.txt"
        write_instance(g, path)
        back = read_instance(path)
        assert back.temporal_window == 5
        assert [d.id for d in back.detections] == [10, 11]
        assert [d.frame for d in back.detections] == [0, 4]
        np.testing.assert_allclose(back.unary, g.unary)

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("node 0 0 1.0\nedge 0 zero 1\n")
        with pytest.raises(ValueError, match="line 2"):
            read_instance(path)
