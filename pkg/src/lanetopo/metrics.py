"""Detection and topology metrics and their combination into OLS.

DET_l and DET_t are average precisions under Frechet / IoU matching, TOP_ll
and TOP_lt are edge-level average precisions over matched vertices, and
OLS averages the four after passing the topology scores through ``f``.
All APs are computed over matches pooled across the whole dataset.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import pairwise_frechet
from .structures import LaneClass, SceneFrame

DEFAULT_FRECHET_THRESHOLDS = (1.0, 2.0, 3.0)
DEFAULT_IOU_THRESHOLD = 0.75
DEFAULT_TOP_LANE_THRESHOLD = 1.5
DEFAULT_TOP_IOU_THRESHOLD = 0.75


@dataclass
class MatchResult:
    """Predictions in descending confidence order with their matched GT index.

    ``gt_index`` is -1 for unmatched predictions.
    """

    confidences: np.ndarray
    gt_index: np.ndarray
    num_gt: int
    threshold: float = math.nan

    @property
    def matched(self) -> np.ndarray:
        return self.gt_index >= 0

    @property
    def num_tp(self) -> int:
        return int(self.matched.sum())

    @classmethod
    def empty(cls, num_gt: int = 0, threshold: float = math.nan) -> "MatchResult":
        return cls(np.zeros(0), np.zeros(0, dtype=int), num_gt, threshold)

    @classmethod
    def pool(cls, results: Sequence["MatchResult"]) -> "MatchResult":
        """Concatenate per-frame results; GT indices are offset to stay unique."""
        if not results:
            return cls.empty()
        conf, idx, offset = [], [], 0
        for r in results:
            conf.append(r.confidences)
            idx.append(np.where(r.gt_index >= 0, r.gt_index + offset, -1))
            offset += r.num_gt
        return cls(np.concatenate(conf), np.concatenate(idx), offset, results[0].threshold)


def _rank(confidences) -> np.ndarray:
    return np.argsort(-np.asarray(confidences, dtype=float), kind="stable")


def greedy_match(confidences, distances, threshold: float) -> MatchResult:
    """Match a (P, G) distance matrix greedily in descending confidence order.

    Each prediction takes the nearest still-unmatched GT with distance
    <= ``threshold``; equal distances go to the lowest GT index.
    """
    confidences = np.asarray(confidences, dtype=float)
    distances = np.asarray(distances, dtype=float)
    if distances.ndim != 2 or distances.shape[0] != len(confidences):
        raise ValueError(f"distance matrix shape {distances.shape} does not match {len(confidences)} predictions")
    P, G = distances.shape
    order = _rank(confidences)
    taken = np.zeros(G, dtype=bool)
    gt_index = np.full(P, -1, dtype=int)
    for slot, p in enumerate(order):
        d = np.where(taken | (distances[p] > threshold), np.inf, distances[p])
        if G and np.isfinite(d).any():
            g = int(np.argmin(d))  # argmin returns the first, i.e. lowest, index
            taken[g] = True
            gt_index[slot] = g
    return MatchResult(confidences[order], gt_index, G, threshold)


def match_instances(
    preds: Sequence, gts: Sequence, distance_fn: Callable, threshold: float
) -> MatchResult:
    """Greedy matching of objects carrying ``.confidence`` under ``distance_fn``."""
    dist = np.array([[distance_fn(p, g) for g in gts] for p in preds], dtype=float)
    return greedy_match([p.confidence for p in preds], dist.reshape(len(preds), len(gts)), threshold)


def average_precision(match: MatchResult) -> float:
    """All-point interpolated AP (area under the precision envelope)."""
    n_pred = len(match.confidences)
    if match.num_gt == 0:
        return 1.0 if n_pred == 0 else 0.0
    if n_pred == 0:
        return 0.0
    order = _rank(match.confidences)
    tp = match.matched[order].astype(float)
    cum_tp = np.cumsum(tp)
    precision = cum_tp / np.arange(1, n_pred + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    # recall rises by 1/num_gt at each true positive; dividing once keeps a perfect ranking at exactly 1.0
    return math.fsum(envelope[tp > 0]) / match.num_gt


def box_iou(a, b) -> np.ndarray:
    """IoU matrix between (P, 4) and (G, 4) boxes given as x1, y1, x2, y2."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    lo = np.maximum(a[:, None, :2], b[None, :, :2])
    hi = np.minimum(a[:, None, 2:], b[None, :, 2:])
    inter = np.prod(np.clip(hi - lo, 0.0, None), axis=-1)
    area_a = np.prod(a[:, 2:] - a[:, :2], axis=-1)
    area_b = np.prod(b[:, 2:] - b[:, :2], axis=-1)
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def _lane_stack(lanes) -> np.ndarray:
    if not lanes:
        return np.zeros((0, 0, 3))
    return np.stack([lane.points for lane in lanes])


def _mean_ap(matches: dict) -> float:
    # averaged over keys that have ground truth; with none anywhere, any prediction is a miss
    with_gt = [average_precision(m) for m in matches.values() if m.num_gt > 0]
    if with_gt:
        return float(np.mean(with_gt))
    return 1.0 if all(len(m.confidences) == 0 for m in matches.values()) else 0.0


# --- per-frame matching --------------------------------------------------------


def _lane_matches(pred, gt, thresholds) -> dict:
    """{(lane_class, threshold): MatchResult} for one frame."""
    out = {}
    for cls in LaneClass:
        p = [lane for lane in pred if lane.lane_class == cls]
        g = [lane for lane in gt if lane.lane_class == cls]
        dist = pairwise_frechet(_lane_stack(p), _lane_stack(g))
        conf = [lane.confidence for lane in p]
        for t in thresholds:
            out[cls.value, t] = greedy_match(conf, dist, t)
    return out


def _te_matches(pred, gt, iou_threshold) -> dict:
    """{category: MatchResult} for one frame."""
    out = {}
    for cat in sorted({te.category for te in gt} | {te.category for te in pred}):
        p = [te for te in pred if te.category == cat]
        g = [te for te in gt if te.category == cat]
        iou = box_iou([te.bbox for te in p], [te.bbox for te in g])
        out[cat] = greedy_match([te.confidence for te in p], 1.0 - iou, 1.0 - iou_threshold)
    return out


def _vertex_map(match: MatchResult, pred_confidences) -> np.ndarray:
    """pred index -> GT index (or -1) from a match built on the same predictions."""
    order = _rank(pred_confidences)
    mapping = np.full(len(order), -1, dtype=int)
    mapping[order] = match.gt_index
    return mapping


def top_score_match(pred_scores, gt_edges, row_map, col_map) -> MatchResult:
    """Edge-level match for one frame.

    Predicted edges (score > 0.5) are ranked by score; an edge is a true
    positive iff both of its vertices are matched and the GT has the edge
    between their counterparts. Every GT edge counts towards recall, so GT
    edges on unmatched vertices are unrecoverable misses.
    """
    pred_scores = np.asarray(pred_scores, dtype=float)
    gt_edges = np.asarray(gt_edges, dtype=bool)
    rows, cols = np.nonzero(pred_scores > 0.5)
    conf = pred_scores[rows, cols]
    gi, gj = row_map[rows], col_map[cols]
    hit = (gi >= 0) & (gj >= 0)
    hit[hit] = gt_edges[gi[hit], gj[hit]]
    # GT edges are numbered in row-major order so pooling keeps them distinct
    edge_id = np.full(gt_edges.shape, -1, dtype=int)
    edge_id[gt_edges] = np.arange(int(gt_edges.sum()))
    gt_index = np.full(len(rows), -1, dtype=int)
    gt_index[hit] = edge_id[gi[hit], gj[hit]]
    order = _rank(conf)
    return MatchResult(conf[order], gt_index[order], int(gt_edges.sum()), 0.5)


def top_score(pred_scores, gt_edges, row_map, col_map) -> float:
    """Single-frame TOP value; see :func:`top_score_match`."""
    return average_precision(top_score_match(pred_scores, gt_edges, row_map, col_map))


# --- scaling and OLS -----------------------------------------------------------


def _check_unit(x: float, name: str) -> float:
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {x}")
    return x


def f_scale(x: float) -> float:
    """Square-root scaling applied to the topology scores in OLS."""
    return math.sqrt(_check_unit(x, "f_scale input"))


def _identity(x: float) -> float:
    return _check_unit(x, "f_scale input")


SCALINGS: dict[str, Callable[[float], float]] = {"sqrt": f_scale, "identity": _identity}


def ols(det_l: float, det_t: float, top_ll: float, top_lt: float, scale: Callable = f_scale) -> float:
    """0.25 * (DET_l + DET_t + f(TOP_ll) + f(TOP_lt))."""
    det_l = _check_unit(det_l, "det_l")
    det_t = _check_unit(det_t, "det_t")
    top_ll = _check_unit(top_ll, "top_ll")
    top_lt = _check_unit(top_lt, "top_lt")
    return 0.25 * (det_l + det_t + scale(top_ll) + scale(top_lt))


# --- dataset-level metrics -----------------------------------------------------


def det_l(pred_lanes, gt_lanes, frechet_thresholds=DEFAULT_FRECHET_THRESHOLDS) -> float:
    """Lane detection score for a single frame's lanes."""
    return _det_l_from(_lane_matches(pred_lanes, gt_lanes, frechet_thresholds), frechet_thresholds)[0]


def _det_l_from(matches: dict, thresholds) -> tuple[float, dict]:
    per_class = {}
    per_threshold = {}
    for t in thresholds:
        per_threshold[t] = _mean_ap({c: m for (c, tt), m in matches.items() if tt == t})
    for cls in LaneClass:
        ms = [matches[cls.value, t] for t in thresholds]
        if any(m.num_gt for m in ms):
            per_class[cls.value] = float(np.mean([average_precision(m) for m in ms]))
    return float(np.mean(list(per_threshold.values()))), {
        "per_threshold": {repr(float(t)): v for t, v in per_threshold.items()},
        "per_class": per_class,
    }


def det_t(pred_tes, gt_tes, iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> float:
    """Traffic element detection score for a single frame."""
    return _mean_ap(_te_matches(pred_tes, gt_tes, iou_threshold))


@dataclass
class EvalConfig:
    frechet_thresholds: tuple = DEFAULT_FRECHET_THRESHOLDS
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    top_lane_threshold: float = DEFAULT_TOP_LANE_THRESHOLD
    top_iou_threshold: float = DEFAULT_TOP_IOU_THRESHOLD
    f_scale: str = "sqrt"
    workers: int | None = None


@dataclass
class EvalReport:
    det_l: float
    det_t: float
    top_ll: float
    top_lt: float
    ols: float
    breakdowns: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "det_l": self.det_l,
            "det_t": self.det_t,
            "top_ll": self.top_ll,
            "top_lt": self.top_lt,
            "ols": self.ols,
            "breakdowns": self.breakdowns,
        }


@dataclass
class _FrameMatches:
    lanes: dict
    tes: dict
    top_ll: MatchResult
    top_lt: MatchResult


def _match_frame(pred: SceneFrame, gt: SceneFrame, cfg: EvalConfig) -> _FrameMatches:
    lanes = _lane_matches(pred.lanes, gt.lanes, cfg.frechet_thresholds)
    tes = _te_matches(pred.traffic_elements, gt.traffic_elements, cfg.iou_threshold)

    # topology vertices are matched without regard to class or category
    lane_conf = [lane.confidence for lane in pred.lanes]
    lane_match = greedy_match(
        lane_conf,
        pairwise_frechet(_lane_stack(pred.lanes), _lane_stack(gt.lanes)),
        cfg.top_lane_threshold,
    )
    lane_map = _vertex_map(lane_match, lane_conf)
    te_conf = [te.confidence for te in pred.traffic_elements]
    iou = box_iou([te.bbox for te in pred.traffic_elements], [te.bbox for te in gt.traffic_elements])
    te_match = greedy_match(te_conf, 1.0 - iou, 1.0 - cfg.top_iou_threshold)
    te_map = _vertex_map(te_match, te_conf)

    return _FrameMatches(
        lanes,
        tes,
        top_score_match(pred.lane_lane, gt.lane_lane_edges, lane_map, lane_map),
        top_score_match(pred.lane_te, gt.lane_te_edges, lane_map, te_map),
    )


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get("LANETOPO_THREADS", "1") or 1)
    return max(1, int(workers))


def align_frames(pred_frames: Sequence[SceneFrame], gt_frames: Sequence[SceneFrame]):
    """Pair predictions with ground truth by frame id, in GT order."""
    preds = {f.frame_id: f for f in pred_frames}
    gts = {f.frame_id: f for f in gt_frames}
    missing_pred = [fid for fid in gts if fid not in preds]
    missing_gt = [fid for fid in preds if fid not in gts]
    if missing_pred or missing_gt:
        raise ValueError(
            f"frame ids do not align: missing in predictions {missing_pred}, "
            f"missing in ground truth {missing_gt}"
        )
    return [(preds[f.frame_id], f) for f in gt_frames]


def evaluate(pred_frames, gt_frames, config: EvalConfig | None = None) -> EvalReport:
    """Dataset-level evaluation; per-frame matching may run in worker threads.

    Matches are reduced in frame order so the report does not depend on the
    number of workers.
    """
    cfg = config or EvalConfig()
    pairs = align_frames(pred_frames, gt_frames)
    workers = resolve_workers(cfg.workers)

    def run(pair):
        return _match_frame(pair[0], pair[1], cfg)

    if workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_frame = list(pool.map(run, pairs))
    else:
        per_frame = [run(p) for p in pairs]

    lane_keys = [(c.value, t) for c in LaneClass for t in cfg.frechet_thresholds]
    lanes = {k: MatchResult.pool([fm.lanes[k] for fm in per_frame]) for k in lane_keys}
    cats = sorted({c for fm in per_frame for c in fm.tes})
    tes = {
        c: MatchResult.pool([fm.tes[c] for fm in per_frame if c in fm.tes]) for c in cats
    }
    top_ll_m = MatchResult.pool([fm.top_ll for fm in per_frame])
    top_lt_m = MatchResult.pool([fm.top_lt for fm in per_frame])

    dl, dl_breakdown = _det_l_from(lanes, cfg.frechet_thresholds)
    dt = _mean_ap(tes)
    tll = average_precision(top_ll_m)
    tlt = average_precision(top_lt_m)
    scale = SCALINGS[cfg.f_scale]
    breakdowns = {
        "det_l": dl_breakdown,
        "det_t": {
            "per_category": {c: average_precision(m) for c, m in tes.items() if m.num_gt > 0}
        },
        "top_ll": {"num_gt_edges": top_ll_m.num_gt, "num_pred_edges": len(top_ll_m.confidences), "num_tp": top_ll_m.num_tp},
        "top_lt": {"num_gt_edges": top_lt_m.num_gt, "num_pred_edges": len(top_lt_m.confidences), "num_tp": top_lt_m.num_tp},
        "f_scale": {"name": cfg.f_scale, "top_ll": scale(tll), "top_lt": scale(tlt)},
        "num_frames": len(pairs),
    }
    return EvalReport(dl, dt, tll, tlt, ols(dl, dt, tll, tlt, scale), breakdowns)
