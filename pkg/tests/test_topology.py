import json
import math

import numpy as np
import pytest

from lanetopo.geometry import DetectionRange, normalize_points
from lanetopo.scenesim import generate_scene
from lanetopo.structures import LaneCenterline, TrafficElement
from lanetopo.topology import (
    MlpParams,
    apply_threshold,
    filter_by_prior,
    geometric_override,
    infer_lane_graph,
    mlp_score,
    pairwise_confidences,
)


def reference_score(params: MlpParams, x) -> float:
    """Layer-by-layer loops over plain Python floats."""
    h = [float(v) for v in x]
    n_layers = len(params.weights)
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = [sum(wij * hj for wij, hj in zip(row, h)) + bi for row, bi in zip(w.tolist(), b.tolist())]
        if k < n_layers - 1:
            h = [max(v, 0.0) for v in h]
    return 1.0 / (1.0 + math.exp(-h[0]))


def straight_lane(start, end, conf=1.0, feature=None):
    return LaneCenterline(np.linspace(start, end, 11), conf, "normal", feature)


class Inst:
    def __init__(self, confidence):
        self.confidence = confidence


class TestGating:
    def test_example(self):
        kept, idx = filter_by_prior([Inst(0.9), Inst(0.2), Inst(0.6)], 0.3)
        assert idx.tolist() == [0, 2]
        assert [k.confidence for k in kept] == [0.9, 0.6]

    def test_tau_zero_and_one(self):
        items = [Inst(0.0), Inst(0.4), Inst(1.0)]
        assert filter_by_prior(items, 0.0)[1].tolist() == [1, 2]
        assert filter_by_prior(items, 1.0)[1].tolist() == []

    def test_tau_range(self):
        with pytest.raises(ValueError):
            filter_by_prior([], 1.5)


class TestMlp:
    def test_zero_params(self):
        p = MlpParams.zeros(5, [4, 4])
        assert mlp_score(p, np.arange(5.0)) == 0.5

    def test_single_layer(self):
        p = MlpParams([[[1.0]]], [[0.0]])
        assert mlp_score(p, [0.0]) == 0.5
        assert mlp_score(p, [2.0]) == pytest.approx(1 / (1 + math.exp(-2)))

    def test_against_reference(self):
        rng = np.random.default_rng(0)
        for seed in range(50):
            p = MlpParams.random(12, [8, 6], seed)
            x = rng.normal(size=12)
            assert abs(mlp_score(p, x) - reference_score(p, x)) <= 1e-9

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            mlp_score(MlpParams.zeros(4), np.zeros(3))

    def test_layer_shapes_checked(self):
        with pytest.raises(ValueError):
            MlpParams([np.zeros((3, 4)), np.zeros((1, 2))], [np.zeros(3), np.zeros(1)])
        with pytest.raises(ValueError):
            MlpParams([np.zeros((2, 4))], [np.zeros(2)])

    def test_json_round_trip(self, tmp_path):
        p = MlpParams.random(6, [3], seed=4)
        path = tmp_path / "mlp.json"
        p.save(path)
        doc = json.loads(path.read_text())
        assert list(doc) == ["layers"]
        assert set(doc["layers"][0]) == {"weights", "bias"}
        q = MlpParams.load(path)
        for a, b in zip(p.weights + p.biases, q.weights + q.biases):
            assert np.array_equal(a, b)

    def test_extreme_logits_stay_finite(self):
        p = MlpParams([[[1.0]]], [[0.0]])
        assert mlp_score(p, [1000.0]) == 1.0
        assert mlp_score(p, [-1000.0]) == 0.0


class TestPairwise:
    def test_empty(self):
        p = MlpParams.zeros(4)
        assert pairwise_confidences(np.zeros((0, 2)), np.zeros((3, 2)), p).shape == (0, 3)
        assert pairwise_confidences(np.zeros((2, 2)), np.zeros((0, 2)), p).shape == (2, 0)

    def test_per_pair_oracle(self):
        rng = np.random.default_rng(1)
        p = MlpParams.random(7, [5, 5], seed=2)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(2, 3))
        conf = pairwise_confidences(a, b, p)
        assert conf.shape == (3, 2)
        for i in range(3):
            for j in range(2):
                expected = reference_score(p, np.concatenate([a[i], b[j]]))
                assert abs(conf[i, j] - expected) <= 1e-9

    def test_source_first(self):
        # weight only the first half: reversing the order changes the score
        p = MlpParams([[[1.0, 0.0]]], [[0.0]])
        conf = pairwise_confidences([[2.0], [-2.0]], [[2.0], [-2.0]], p)
        assert conf[0, 1] > 0.5 > conf[1, 0]

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            pairwise_confidences(np.zeros((1, 2)), np.zeros((1, 2)), MlpParams.zeros(5))


class TestThreshold:
    def test_strict(self):
        assert apply_threshold([[0.51, 0.5, 0.5 + 1e-12, 0.0]]).tolist() == [[True, False, True, False]]


class TestOverride:
    def lanes_with_gap(self, gap):
        return [straight_lane([0, 0, 0], [5, 0, 0]), straight_lane([5 + gap, 0, 0], [15, 0, 0])]

    def test_forced_below_limit(self):
        out = geometric_override(np.zeros((2, 2), bool), self.lanes_with_gap(2.9))
        assert out.tolist() == [[False, True], [False, False]]

    def test_not_forced_at_limit(self):
        out = geometric_override(np.zeros((2, 2), bool), self.lanes_with_gap(3.0))
        assert not out.any()

    def test_monotone_and_no_self_loops(self):
        lanes = self.lanes_with_gap(10.0)
        edges = np.array([[False, True], [True, False]])
        assert np.array_equal(geometric_override(edges, lanes), edges)
        assert not geometric_override(np.ones((2, 2), bool), lanes).diagonal().any()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            geometric_override(np.zeros((3, 3), bool), self.lanes_with_gap(1.0))


class TestInferLaneGraph:
    def test_nothing_gated(self):
        lanes = [straight_lane([0, 0, 0], [5, 0, 0], conf=0.1, feature=np.zeros(2))]
        tes = [TrafficElement([0, 0, 10, 10], "x", 0.2, np.zeros(2))]
        g = infer_lane_graph(lanes, tes, MlpParams.zeros(16), MlpParams.zeros(4))
        assert g.lane_lane.shape == (0, 0) and g.lane_te.shape == (0, 0)

    def test_single_lane_zero_mlp(self):
        lanes = [straight_lane([0, 0, 0], [1, 0, 0], feature=np.zeros(2))]
        tes = [TrafficElement([0, 0, 10, 10], "x", 1.0, np.zeros(2))]
        g = infer_lane_graph(lanes, tes, MlpParams.zeros(16), MlpParams.zeros(4))
        assert g.lane_lane.confidences.tolist() == [[0.5]]
        assert not g.lane_lane.edges.any()
        assert not g.lane_te.edges.any()

    def test_chain_override_recovers_successors(self):
        frame = generate_scene(11, 4, 0, "chain", feature_dim=4)
        g = infer_lane_graph(frame.lanes, [], MlpParams.zeros(20, [4, 4]), MlpParams.zeros(8))
        assert np.array_equal(g.lane_lane.edges, frame.lane_lane > 0.5)
        assert g.lane_lane.edges.sum() == 3
        assert np.array_equal(g.lane_lane.forced, g.lane_lane.edges)
        # override disabled: nothing survives the 0.5 threshold
        g_off = infer_lane_graph(frame.lanes, [], MlpParams.zeros(20), MlpParams.zeros(8), gap_limit=None)
        assert not g_off.lane_lane.edges.any()

    def test_endpoint_features_are_normalized(self):
        lane = straight_lane([-10, 0, 0], [10, 0, 0], feature=np.array([0.25]))
        # weights pick out the start x of the source lane (index 1 of 14)
        w = np.zeros((1, 14))
        w[0, 1] = 1.0
        g = infer_lane_graph([lane], [], MlpParams([w], [[0.0]]), MlpParams.zeros(2))
        start_u = normalize_points(lane.points[:1], DetectionRange())[0, 0]
        assert g.lane_lane.confidences[0, 0] == pytest.approx(1 / (1 + math.exp(-start_u)))

    def test_shapes_and_index_maps(self):
        frame = generate_scene(2, 6, 3, "grid", feature_dim=3)
        frame.lanes[1].confidence = 0.1
        frame.traffic_elements[0].confidence = 0.2
        lane_p, te_p = MlpParams.random(18, [3, 3], 0), MlpParams.random(6, [3, 3], 1)
        g = infer_lane_graph(frame.lanes, frame.traffic_elements, lane_p, te_p, tau=0.3)
        assert g.lane_index.tolist() == [0, 2, 3, 4, 5]
        assert g.te_index.tolist() == [1, 2]
        assert g.lane_lane.shape == (5, 5) and g.lane_te.shape == (5, 2)
        ll, lt = g.full_scores(6, 3)
        assert not (ll[1] > 0.5).any() and not (lt[:, 0] > 0.5).any()
        assert np.array_equal(ll[np.ix_(g.lane_index, g.lane_index)] > 0.5, g.lane_lane.edges)
        # every edge is backed by a confident score or the geometric rule
        m = g.lane_lane
        assert np.all(~m.edges | (m.confidences > 0.5) | m.forced)

    def test_missing_features(self):
        lanes = [straight_lane([0, 0, 0], [1, 0, 0])]
        with pytest.raises(ValueError, match="feature"):
            infer_lane_graph(lanes, [], MlpParams.zeros(14), MlpParams.zeros(2))

    def test_deterministic(self):
        frame = generate_scene(4, 8, 3, "intersection", feature_dim=5)
        args = (frame.lanes, frame.traffic_elements, MlpParams.random(22, [5, 5], 3), MlpParams.random(10, [5], 4))
        a, b = infer_lane_graph(*args), infer_lane_graph(*args)
        assert a.lane_lane.confidences.tobytes() == b.lane_lane.confidences.tobytes()
        assert a.lane_te.confidences.tobytes() == b.lane_te.confidences.tobytes()
