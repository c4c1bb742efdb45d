"""Synthetic lane graphs, prediction perturbation, and brute-force oracles.

Generated ground truth links lane ``i`` to lane ``j`` exactly when ``i``
ends within 0.1 m of the start of ``j``. Lane layouts are built so that all
other end-to-start distances are at least 3 m.
"""

from __future__ import annotations

import copy
import math
import zlib
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .geometry import NUM_POINTS, DetectionRange, bezier_to_polyline, resample_polyline
from .structures import LaneCenterline, LaneClass, SceneFrame, TrafficElement

LAYOUTS = ("grid", "chain", "intersection")
DEFAULT_CATEGORIES = ("traffic_light", "stop_sign", "yield_sign", "speed_limit", "lane_arrow")
CONNECT_TOL = 0.1
IMAGE_SIZE = (2048, 1550)

# chain layout
_ROW_CAP = 12
_MAX_ROWS = 8
# intersection layout
_BOX_HALF = 10.0
_LANE_OFFSET = 2.0
_SEGMENT = 5.5
# traffic element slots on the front image
_SLOT_COLS, _SLOT_ROWS = 16, 4
_SLOT_W, _SLOT_H, _SLOT_TOP = 128.0, 150.0, 100.0

ORACLE_MAX = 8


class _Surface:
    """Smooth height field with |z| <= 0.5 m."""

    def __init__(self, rng: np.random.Generator):
        self.a, self.b = rng.uniform(0.05, 0.25, size=2)
        self.kx, self.ky = rng.uniform(0.02, 0.1, size=2)
        self.px, self.py = rng.uniform(0, 2 * np.pi, size=2)

    def __call__(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        z = self.a * np.sin(self.kx * xy[..., 0] + self.px) + self.b * np.cos(
            self.ky * xy[..., 1] + self.py
        )
        return np.concatenate([xy, z[..., None]], axis=-1)


def _lane_from_xy(xy: np.ndarray, surface: _Surface) -> np.ndarray:
    return resample_polyline(surface(xy), NUM_POINTS)


def _straight(p0, p1, samples: int = 21) -> np.ndarray:
    t = np.linspace(0.0, 1.0, samples)[:, None]
    xy = (1 - t) * np.asarray(p0, float) + t * np.asarray(p1, float)
    xy[0], xy[-1] = p0, p1
    return xy


def _chain_lanes(n, rng, surface, det_range):
    if n > _ROW_CAP * _MAX_ROWS:
        raise ValueError(f"chain layout supports at most {_ROW_CAP * _MAX_ROWS} lanes")
    rows = math.ceil(n / _ROW_CAP)
    sizes = [n // rows + (r < n % rows) for r in range(rows)]
    x0, x1 = det_range.x_min + 5.0, det_range.x_max - 5.0
    ys = [0.0] if rows == 1 else np.linspace(det_range.y_min + 5.0, det_range.y_max - 5.0, rows)
    lanes = []
    for y0, k in zip(ys, sizes):
        amp, freq, phase = rng.uniform(0, 0.3), rng.uniform(0.02, 0.08), rng.uniform(0, 2 * np.pi)
        base = np.linspace(x0, x1, k + 1)
        step = (x1 - x0) / k
        breaks = base + np.concatenate([[0.0], rng.uniform(-0.2, 0.2, k - 1) * step, [0.0]])
        for a, b in zip(breaks[:-1], breaks[1:]):
            xs = np.linspace(a, b, 41)
            xs[0], xs[-1] = a, b
            xy = np.stack([xs, y0 + amp * np.sin(freq * xs + phase)], axis=1)
            lanes.append((_lane_from_xy(xy, surface), LaneClass.NORMAL))
    return lanes


def _grid_lanes(n, rng, surface, det_range):
    k = 2
    while 2 * k * (k - 1) < n:
        k += 1
    if k > 12:
        raise ValueError("grid layout supports at most 264 lanes")
    xs = np.linspace(det_range.x_min + 5.0, det_range.x_max - 5.0, k)
    ys = np.linspace(det_range.y_min + 5.0, det_range.y_max - 5.0, k)
    lanes = []
    for j in range(k):
        for i in range(k):
            node = (xs[i], ys[j])
            if i + 1 < k:
                lanes.append((_lane_from_xy(_straight(node, (xs[i + 1], ys[j])), surface), LaneClass.NORMAL))
            if j + 1 < k:
                lanes.append((_lane_from_xy(_straight(node, (xs[i], ys[j + 1])), surface), LaneClass.NORMAL))
    return lanes[:n]


def _intersection_lanes(n, rng, surface, det_range):
    arms = []  # (outward direction, reach)
    for d in ((1, 0), (0, 1), (-1, 0), (0, -1)):
        d = np.array(d, dtype=float)
        reach = (det_range.x_max if d[0] > 0 else -det_range.x_min if d[0] < 0
                 else det_range.y_max if d[1] > 0 else -det_range.y_min) - 2.0
        arms.append((d, reach))

    def right_of(u):
        return np.array([u[1], -u[0]])

    def arm_points(d, reach, inbound):
        u = -d if inbound else d
        off = right_of(u) * _LANE_OFFSET
        n_seg = max(1, int((reach - _BOX_HALF) // _SEGMENT))
        radii = np.linspace(_BOX_HALF, reach, n_seg + 1)
        pts = [d * r + off for r in radii]  # from the box outward
        segs = [(pts[s + 1], pts[s]) if inbound else (pts[s], pts[s + 1]) for s in range(n_seg)]
        return segs  # nearest the box first

    inbound = [arm_points(d, r, True) for d, r in arms]
    outbound = [arm_points(d, r, False) for d, r in arms]

    def connector(a, b):
        p0 = inbound[a][0][1]
        p4 = outbound[b][0][0]
        u_in, u_out = -arms[a][0], arms[b][0]
        reach = 0.5 * _BOX_HALF
        p1 = p0 + u_in * reach
        p3 = p4 - u_out * reach
        ctrl = np.stack([p0, p1, 0.5 * (p1 + p3), p3, p4])
        xy = bezier_to_polyline(np.column_stack([ctrl, np.zeros(5)]), 41)[:, :2]
        xy[0], xy[-1] = p0, p4
        return xy

    pool = []
    for a in range(4):
        pool.append((inbound[a][0], LaneClass.NORMAL))
        for s in (2, 1, 3):  # straight, left, right
            pool.append((connector(a, (a + s) % 4), LaneClass.INTERSECTION_VIRTUAL))
        pool.append((outbound[a][0], LaneClass.NORMAL))
    depth = max(len(segs) for segs in inbound)
    for level in range(1, depth):
        for a in range(4):
            for segs in (inbound[a], outbound[a]):
                if level < len(segs):
                    pool.append((segs[level], LaneClass.NORMAL))
    if n > len(pool):
        raise ValueError(f"intersection layout supports at most {len(pool)} lanes")

    out = []
    for item, cls in pool[:n]:
        xy = _straight(*item) if isinstance(item, tuple) else item
        out.append((_lane_from_xy(xy, surface), cls))
    return out


_BUILDERS = {"chain": _chain_lanes, "grid": _grid_lanes, "intersection": _intersection_lanes}


def _random_box(rng, slot: int | None = None) -> np.ndarray:
    if slot is None:
        x1 = rng.uniform(0, IMAGE_SIZE[0] - 120)
        y1 = rng.uniform(0, IMAGE_SIZE[1] / 2)
    else:
        col, row = slot % _SLOT_COLS, slot // _SLOT_COLS
        x1 = col * _SLOT_W + rng.uniform(0, 20)
        y1 = _SLOT_TOP + row * _SLOT_H + rng.uniform(0, 20)
    w, h = rng.uniform(30, 100), rng.uniform(30, 120)
    return np.array([x1, y1, x1 + w, y1 + h])


def connectivity(lanes, tol: float = CONNECT_TOL) -> np.ndarray:
    """GT successor relation: end(i) within ``tol`` of start(j), no self loops."""
    if not lanes:
        return np.zeros((0, 0))
    ends = np.stack([lane.points[-1] for lane in lanes])
    starts = np.stack([lane.points[0] for lane in lanes])
    adj = np.linalg.norm(ends[:, None] - starts[None], axis=-1) < tol
    np.fill_diagonal(adj, False)
    return adj.astype(float)


def generate_scene(
    seed: int,
    n_lanes: int,
    n_tes: int,
    layout: str = "chain",
    *,
    frame_id: str | None = None,
    feature_dim: int = 0,
    categories=DEFAULT_CATEGORIES,
    det_range: DetectionRange = DetectionRange(),
) -> SceneFrame:
    """Build a ground-truth frame; a pure function of its arguments."""
    if layout not in _BUILDERS:
        raise ValueError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    if n_lanes < 0 or n_tes < 0:
        raise ValueError("instance counts must be non-negative")
    if n_tes > _SLOT_COLS * _SLOT_ROWS:
        raise ValueError(f"at most {_SLOT_COLS * _SLOT_ROWS} traffic elements per frame")
    rng = np.random.default_rng(seed)
    surface = _Surface(rng)
    geoms = _BUILDERS[layout](n_lanes, rng, surface, det_range) if n_lanes else []

    lanes = [
        LaneCenterline(
            pts,
            1.0,
            cls,
            rng.standard_normal(feature_dim) if feature_dim else None,
        )
        for pts, cls in geoms
    ]
    slots = rng.permutation(_SLOT_COLS * _SLOT_ROWS)[:n_tes]
    tes = [
        TrafficElement(
            _random_box(rng, int(s)),
            categories[int(rng.integers(len(categories)))],
            1.0,
            rng.standard_normal(feature_dim) if feature_dim else None,
        )
        for s in slots
    ]
    lane_te = np.zeros((len(lanes), len(tes)))
    if lanes:
        for t in range(len(tes)):
            k = int(rng.integers(1, 3))
            lane_te[rng.choice(len(lanes), size=min(k, len(lanes)), replace=False), t] = 1.0
    return SceneFrame(
        frame_id if frame_id is not None else f"scene-{seed:06d}",
        lanes,
        tes,
        connectivity(lanes),
        lane_te,
    )


@dataclass(frozen=True)
class PerturbationConfig:
    point_noise_sigma: float = 0.0
    confidence_noise_sigma: float = 0.0
    drop_rate: float = 0.0
    spurious_rate: float = 0.0
    edge_flip_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("drop_rate", "spurious_rate", "edge_flip_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        for name in ("point_noise_sigma", "confidence_noise_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def is_identity(self) -> bool:
        return not (
            self.point_noise_sigma or self.confidence_noise_sigma or self.drop_rate
            or self.spurious_rate or self.edge_flip_rate
        )


def _spurious_lane(rng, det_range, feature_dim) -> LaneCenterline:
    lo, hi = det_range.lower + 5.0, det_range.upper - 5.0
    p0 = rng.uniform(lo[:2], hi[:2])
    heading = rng.uniform(0, 2 * np.pi)
    p1 = np.clip(p0 + rng.uniform(5, 15) * np.array([np.cos(heading), np.sin(heading)]), lo[:2], hi[:2])
    if np.allclose(p0, p1):
        p1 = p0 + np.array([5.0, 0.0])
    xy = _straight(p0, p1)
    pts = resample_polyline(np.column_stack([xy, np.full(len(xy), rng.uniform(-0.5, 0.5))]))
    return LaneCenterline(
        pts,
        rng.uniform(0.0, 0.5),
        LaneClass.INTERSECTION_VIRTUAL if rng.random() < 0.5 else LaneClass.NORMAL,
        rng.standard_normal(feature_dim) if feature_dim else None,
    )


def _noisy_confidence(rng, value, sigma):
    return float(np.clip(value + rng.normal(0.0, sigma), 0.0, 1.0)) if sigma else value


def _flip(rng, m: np.ndarray, rate: float, keep_diagonal: bool) -> np.ndarray:
    if not rate or m.size == 0:
        return m
    mask = rng.random(m.shape) < rate
    if keep_diagonal:
        np.fill_diagonal(mask, False)
    return np.where(mask, 1.0 - m, m)


def perturb_scene(
    frame: SceneFrame,
    config: PerturbationConfig,
    *,
    categories=DEFAULT_CATEGORIES,
    det_range: DetectionRange = DetectionRange(),
) -> SceneFrame:
    """Turn a GT frame into a plausible prediction, deterministically per seed."""
    if config.is_identity:
        return copy.deepcopy(frame)
    rng = np.random.default_rng([config.seed, zlib.crc32(frame.frame_id.encode("utf-8"))])
    c = config

    keep_l = np.flatnonzero(rng.random(len(frame.lanes)) >= c.drop_rate)
    keep_t = np.flatnonzero(rng.random(len(frame.traffic_elements)) >= c.drop_rate)

    lanes = []
    for k in keep_l:
        lane = frame.lanes[k]
        pts = lane.points + rng.normal(0.0, c.point_noise_sigma, lane.points.shape) if c.point_noise_sigma else lane.points.copy()
        lanes.append(LaneCenterline(
            pts,
            _noisy_confidence(rng, lane.confidence, c.confidence_noise_sigma),
            lane.lane_class,
            None if lane.feature is None else lane.feature.copy(),
        ))
    tes = [
        TrafficElement(
            te.bbox.copy(),
            te.category,
            _noisy_confidence(rng, te.confidence, c.confidence_noise_sigma),
            None if te.feature is None else te.feature.copy(),
        )
        for te in (frame.traffic_elements[k] for k in keep_t)
    ]

    lane_lane = _flip(rng, frame.lane_lane[np.ix_(keep_l, keep_l)], c.edge_flip_rate, True)
    lane_te = _flip(rng, frame.lane_te[np.ix_(keep_l, keep_t)], c.edge_flip_rate, False)
    if c.confidence_noise_sigma:
        lane_lane = np.clip(lane_lane + rng.normal(0.0, c.confidence_noise_sigma, lane_lane.shape), 0.0, 1.0)
        np.fill_diagonal(lane_lane, 0.0)
        lane_te = np.clip(lane_te + rng.normal(0.0, c.confidence_noise_sigma, lane_te.shape), 0.0, 1.0)

    if c.spurious_rate:
        lane_dim = next((len(l.feature) for l in frame.lanes if l.feature is not None), 0)
        te_dim = next((len(t.feature) for t in frame.traffic_elements if t.feature is not None), 0)
        n_sp_l = int(rng.binomial(len(frame.lanes), c.spurious_rate))
        n_sp_t = int(rng.binomial(len(frame.traffic_elements), c.spurious_rate))
        lanes += [_spurious_lane(rng, det_range, lane_dim) for _ in range(n_sp_l)]
        tes += [
            TrafficElement(
                _random_box(rng),
                categories[int(rng.integers(len(categories)))],
                rng.uniform(0.0, 0.5),
                rng.standard_normal(te_dim) if te_dim else None,
            )
            for _ in range(n_sp_t)
        ]
        lane_lane = np.pad(lane_lane, ((0, n_sp_l), (0, n_sp_l)))
        lane_te = np.pad(lane_te, ((0, n_sp_l), (0, n_sp_t)))

    return SceneFrame(frame.frame_id, lanes, tes, lane_lane, lane_te)


def generate_dataset(
    n_frames: int,
    seed: int,
    n_lanes: int,
    n_tes: int,
    layout: str = "chain",
    **kwargs,
) -> list[SceneFrame]:
    """Frames with ids ``frame-000000``... and independent per-frame seeds."""
    seeds = np.random.SeedSequence(seed).generate_state(max(n_frames, 1))[:n_frames]
    return [
        generate_scene(int(s), n_lanes, n_tes, layout, frame_id=f"frame-{k:06d}", **kwargs)
        for k, s in enumerate(seeds)
    ]


# --- reference oracles ------------------------------------------------------------
# Deliberately naive and independent of the production kernels. Small inputs only.


def _dist(p, q) -> float:
    dx, dy, dz = p[0] - q[0], p[1] - q[1], p[2] - q[2]
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def oracle_frechet(a, b) -> float:
    """Discrete Frechet distance by memoized recursion over couplings."""
    a = [tuple(float(v) for v in p) for p in a]
    b = [tuple(float(v) for v in p) for p in b]
    if not a or not b:
        raise ValueError("oracle_frechet needs non-empty inputs")
    if len(a) > ORACLE_MAX or len(b) > ORACLE_MAX:
        raise ValueError(f"oracle_frechet is limited to {ORACLE_MAX} points per line")

    @lru_cache(maxsize=None)
    def c(i: int, j: int) -> float:
        d = _dist(a[i], b[j])
        if i == 0 and j == 0:
            return d
        if i == 0:
            return max(c(0, j - 1), d)
        if j == 0:
            return max(c(i - 1, 0), d)
        return max(min(c(i - 1, j), c(i - 1, j - 1), c(i, j - 1)), d)

    return c(len(a) - 1, len(b) - 1)


def oracle_ap(match) -> float:
    """AP from exact rational precision/recall points.

    Each true positive contributes 1/num_gt recall times the best precision
    attained at any recall level at least as high as its own.
    """
    conf = [float(v) for v in match.confidences]
    hits = [int(g) >= 0 for g in match.gt_index]
    if len(conf) > ORACLE_MAX:
        raise ValueError(f"oracle_ap is limited to {ORACLE_MAX} predictions")
    if match.num_gt == 0:
        return 1.0 if not conf else 0.0
    ranked = sorted(range(len(conf)), key=lambda k: -conf[k])
    points = []
    tp = 0
    for rank, k in enumerate(ranked, start=1):
        tp += hits[k]
        points.append((Fraction(tp, match.num_gt), Fraction(tp, rank), hits[k]))
    total = Fraction(0)
    for recall, _, is_tp in points:
        if is_tp:
            best = max(p for r, p, _ in points if r >= recall)
            total += Fraction(1, match.num_gt) * best
    return float(total)
