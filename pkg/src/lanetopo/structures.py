"""Scene containers shared by topology inference, evaluation and the generator."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .geometry import NUM_POINTS, as_polyline


class LaneClass(str, enum.Enum):
    NORMAL = "normal"
    INTERSECTION_VIRTUAL = "intersection_virtual"


def _check_confidence(value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"confidence must be in [0, 1], got {value}")
    return value


def _as_feature(feature):
    if feature is None:
        return None
    arr = np.asarray(feature, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature values must be finite")
    return arr


@dataclass
class LaneCenterline:
    points: np.ndarray
    confidence: float = 1.0
    lane_class: LaneClass = LaneClass.NORMAL
    feature: np.ndarray | None = None

    def __post_init__(self):
        self.points = as_polyline(self.points)
        if len(self.points) != NUM_POINTS:
            raise ValueError(f"lane must have exactly {NUM_POINTS} points")
        self.confidence = _check_confidence(self.confidence)
        self.lane_class = LaneClass(self.lane_class)
        self.feature = _as_feature(self.feature)

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]


@dataclass
class TrafficElement:
    bbox: np.ndarray
    category: str
    confidence: float = 1.0
    feature: np.ndarray | None = None

    def __post_init__(self):
        self.bbox = np.asarray(self.bbox, dtype=float).reshape(-1)
        if self.bbox.shape != (4,) or not np.all(np.isfinite(self.bbox)):
            raise ValueError("bbox must be four finite numbers (x1, y1, x2, y2)")
        x1, y1, x2, y2 = self.bbox
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"bbox must satisfy x1<x2 and y1<y2, got {self.bbox.tolist()}")
        self.category = str(self.category)
        self.confidence = _check_confidence(self.confidence)
        self.feature = _as_feature(self.feature)


@dataclass
class SceneFrame:
    """One frame: lanes, traffic elements and both relationship matrices.

    Matrix entries are scores in [0, 1]; an entry above 0.5 is an edge.
    Ground truth simply uses 1.0 / 0.0.
    """

    frame_id: str
    lanes: list[LaneCenterline] = field(default_factory=list)
    traffic_elements: list[TrafficElement] = field(default_factory=list)
    lane_lane: np.ndarray | None = None
    lane_te: np.ndarray | None = None

    def __post_init__(self):
        n_l, n_t = len(self.lanes), len(self.traffic_elements)
        if self.lane_lane is None:
            self.lane_lane = np.zeros((n_l, n_l))
        if self.lane_te is None:
            self.lane_te = np.zeros((n_l, n_t))
        self.lane_lane = np.asarray(self.lane_lane, dtype=float)
        self.lane_te = np.asarray(self.lane_te, dtype=float)
        # JSON cannot carry the shape of an empty matrix
        if self.lane_lane.size == 0 and n_l == 0:
            self.lane_lane = self.lane_lane.reshape(0, 0)
        if self.lane_te.size == 0 and n_l * n_t == 0:
            self.lane_te = self.lane_te.reshape(n_l, n_t)
        if self.lane_lane.shape != (n_l, n_l):
            raise ValueError(
                f"lane_lane shape {self.lane_lane.shape} does not match {n_l} lanes"
            )
        if self.lane_te.shape != (n_l, n_t):
            raise ValueError(
                f"lane_te shape {self.lane_te.shape} does not match ({n_l}, {n_t})"
            )
        for name in ("lane_lane", "lane_te"):
            m = getattr(self, name)
            if m.size and (m.min() < 0.0 or m.max() > 1.0):
                raise ValueError(f"{name} scores must lie in [0, 1]")

    @property
    def lane_lane_edges(self) -> np.ndarray:
        return self.lane_lane > 0.5

    @property
    def lane_te_edges(self) -> np.ndarray:
        return self.lane_te > 0.5
