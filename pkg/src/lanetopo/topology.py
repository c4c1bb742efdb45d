"""Pairwise relationship head for lane-lane and lane-traffic-element topology.

Instances are gated by detection confidence, every (source, target) pair of
query features is concatenated and scored by an MLP with a sigmoid output,
and scores above 0.5 become edges. For lane pairs an additional geometric
rule adds an edge whenever the source lane ends close to where the target
lane starts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .geometry import DetectionRange, normalize_points
from .query_kernels import augment_with_endpoints
from .structures import LaneCenterline, TrafficElement

EDGE_THRESHOLD = 0.5
DEFAULT_TAU = 0.3
DEFAULT_GAP_LIMIT = 3.0


@dataclass
class MlpParams:
    """Dense layers ``y = W x + b`` with ReLU between them.

    ``weights[k]`` has shape (out, in); the last layer has out = 1.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("MLP needs at least one layer and one bias per layer")
        self.weights = [np.atleast_2d(np.asarray(w, dtype=float)) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float).reshape(-1) for b in self.biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {k}: weight rows {w.shape[0]} != bias size {b.shape[0]}")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(
                    f"layer {k}: input width {w.shape[1]} != previous output "
                    f"{self.weights[k - 1].shape[0]}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k}: non-finite parameters")
        if self.weights[-1].shape[0] != 1:
            raise ValueError("final layer must have output width 1")

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[1]

    @classmethod
    def random(cls, input_width: int, hidden: Sequence[int], seed: int = 0) -> "MlpParams":
        rng = np.random.default_rng(seed)
        widths = [input_width, *hidden, 1]
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, input_width: int, hidden: Sequence[int] = ()) -> "MlpParams":
        widths = [input_width, *hidden, 1]
        return cls(
            [np.zeros((o, i)) for i, o in zip(widths[:-1], widths[1:])],
            [np.zeros(o) for o in widths[1:]],
        )

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"weights": w.tolist(), "bias": b.tolist()}
                for w, b in zip(self.weights, self.biases)
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpParams":
        try:
            layers = d["layers"]
            return cls([layer["weights"] for layer in layers], [layer["bias"] for layer in layers])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed MLP document: {exc}") from exc

    @classmethod
    def load(cls, path) -> "MlpParams":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mlp_logits(params: MlpParams, x) -> np.ndarray:
    """Batched forward pass, (n, in) -> (n,) pre-sigmoid logits."""
    h = np.asarray(x, dtype=float)
    if h.ndim != 2 or h.shape[1] != params.input_width:
        raise ValueError(
            f"input width {h.shape[-1] if h.ndim else 0} does not match MLP input "
            f"width {params.input_width}"
        )
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if k < last:
            h = np.maximum(h, 0.0)
    return h[:, 0]


def mlp_score(params: MlpParams, x) -> float:
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return float(sigmoid(mlp_logits(params, x))[0])


def filter_by_prior(instances: Sequence, tau: float = DEFAULT_TAU):
    """Keep instances with confidence strictly above ``tau``.

    Returns the kept instances and, for each of them, its original index.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    index = [k for k, inst in enumerate(instances) if inst.confidence > tau]
    return [instances[k] for k in index], np.asarray(index, dtype=int)


def pairwise_confidences(feats_a, feats_b, params: MlpParams) -> np.ndarray:
    """Score every (a_i, b_j) pair; features are concatenated source first."""
    A = np.asarray(feats_a, dtype=float)
    B = np.asarray(feats_b, dtype=float)
    L, M = len(A), len(B)
    if L == 0 or M == 0:
        return np.zeros((L, M))
    A = A.reshape(L, -1)
    B = B.reshape(M, -1)
    if A.shape[1] + B.shape[1] != params.input_width:
        raise ValueError(
            f"pair width {A.shape[1]} + {B.shape[1]} does not match MLP input "
            f"width {params.input_width}"
        )
    pairs = np.concatenate(
        [np.repeat(A, M, axis=0), np.tile(B, (L, 1))], axis=1
    )
    return sigmoid(mlp_logits(params, pairs)).reshape(L, M)


def apply_threshold(confidences) -> np.ndarray:
    return np.asarray(confidences, dtype=float) > EDGE_THRESHOLD


def successor_gaps(lanes: Sequence[LaneCenterline]) -> np.ndarray:
    """Matrix of end(i) -> start(j) distances."""
    if not lanes:
        return np.zeros((0, 0))
    ends = np.stack([lane.points[-1] for lane in lanes])
    starts = np.stack([lane.points[0] for lane in lanes])
    return np.linalg.norm(ends[:, None, :] - starts[None, :, :], axis=-1)


def geometric_override(edges, lanes: Sequence[LaneCenterline], gap_limit: float = DEFAULT_GAP_LIMIT):
    """OR in an edge wherever a lane ends within ``gap_limit`` of another's start.

    The diagonal is always cleared.
    """
    edges = np.asarray(edges, dtype=bool)
    n = len(lanes)
    if edges.shape != (n, n):
        raise ValueError(f"edge matrix shape {edges.shape} does not match {n} lanes")
    out = edges | (successor_gaps(lanes) < gap_limit)
    np.fill_diagonal(out, False)
    return out


@dataclass
class TopologyMatrix:
    confidences: np.ndarray
    edges: np.ndarray
    forced: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.confidences.shape

    @property
    def scores(self) -> np.ndarray:
        """Single score matrix whose > 0.5 entries are exactly ``edges``.

        Rule-forced edges report 1.0; suppressed entries are capped at 0.5.
        """
        s = np.where(self.forced, 1.0, self.confidences)
        return np.where(self.edges, s, np.minimum(s, EDGE_THRESHOLD))


class LaneGraph(NamedTuple):
    lane_lane: TopologyMatrix
    lane_te: TopologyMatrix
    lane_index: np.ndarray
    te_index: np.ndarray

    def full_scores(self, n_lanes: int, n_tes: int) -> tuple[np.ndarray, np.ndarray]:
        """Scatter the gated matrices back onto the original instance indices."""
        ll = np.zeros((n_lanes, n_lanes))
        lt = np.zeros((n_lanes, n_tes))
        li, ti = self.lane_index, self.te_index
        ll[np.ix_(li, li)] = self.lane_lane.scores
        lt[np.ix_(li, ti)] = self.lane_te.scores
        return ll, lt


def lane_pair_features(lanes: Sequence[LaneCenterline], det_range: DetectionRange) -> np.ndarray:
    rows = []
    for lane in lanes:
        if lane.feature is None:
            raise ValueError("topology inference requires a feature vector on every lane")
        ends = normalize_points(lane.points[[0, -1]], det_range)
        rows.append(augment_with_endpoints(lane.feature, ends[0], ends[1]))
    return np.asarray(rows)


def _features(instances, kind: str) -> np.ndarray:
    if any(inst.feature is None for inst in instances):
        raise ValueError(f"topology inference requires a feature vector on every {kind}")
    return np.asarray([inst.feature for inst in instances])


def infer_lane_graph(
    lanes: Sequence[LaneCenterline],
    traffic_elements: Sequence[TrafficElement],
    lane_params: MlpParams,
    te_params: MlpParams,
    tau: float = DEFAULT_TAU,
    gap_limit: float | None = DEFAULT_GAP_LIMIT,
    det_range: DetectionRange = DetectionRange(),
) -> LaneGraph:
    """Predict both topology matrices over the instances surviving ``tau``.

    Lane-lane pairs see endpoint-augmented lane features and receive the
    geometric override (disabled with ``gap_limit=None``). Lane-TE pairs use
    the raw lane and TE features.
    """
    kept_lanes, lane_index = filter_by_prior(lanes, tau)
    kept_tes, te_index = filter_by_prior(traffic_elements, tau)
    L, T = len(kept_lanes), len(kept_tes)

    if L:
        ll_feats = lane_pair_features(kept_lanes, det_range)
        ll_conf = pairwise_confidences(ll_feats, ll_feats, lane_params)
    else:
        ll_conf = np.zeros((0, 0))
    ll_edges = apply_threshold(ll_conf)
    np.fill_diagonal(ll_edges, False)
    if gap_limit is not None:
        ll_final = geometric_override(ll_edges, kept_lanes, gap_limit)
    else:
        ll_final = ll_edges
    lane_lane = TopologyMatrix(ll_conf, ll_final, ll_final & ~ll_edges)

    if L and T:
        lt_conf = pairwise_confidences(
            _features(kept_lanes, "lane"), _features(kept_tes, "traffic element"), te_params
        )
    else:
        lt_conf = np.zeros((L, T))
    lt_edges = apply_threshold(lt_conf)
    lane_te = TopologyMatrix(lt_conf, lt_edges, np.zeros_like(lt_edges))

    return LaneGraph(lane_lane, lane_te, lane_index, te_index)
