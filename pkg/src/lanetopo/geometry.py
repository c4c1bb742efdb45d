"""Lane centerline geometry: resampling, Bezier conversion, range
normalization and the distance kernels used for matching."""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

__all__ = [
    "NUM_POINTS",
    "DetectionRange",
    "as_polyline",
    "resample_polyline",
    "bezier_to_polyline",
    "normalize_points",
    "denormalize_points",
    "discrete_frechet",
    "pairwise_frechet",
    "successor_gap",
]

NUM_POINTS = 11
BEZIER_DEGREE = 4


@dataclass(frozen=True)
class DetectionRange:
    """Axis-aligned BEV box in meters used to normalize lane coordinates."""

    x_min: float = -50.0
    x_max: float = 50.0
    y_min: float = -25.0
    y_max: float = 25.0
    z_min: float = -3.0
    z_max: float = 3.0

    def __post_init__(self):
        for axis in "xyz":
            lo, hi = getattr(self, f"{axis}_min"), getattr(self, f"{axis}_max")
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
                raise ValueError(f"invalid detection range on {axis}: [{lo}, {hi}]")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.z_min])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.x_max, self.y_max, self.z_max])

    def contains(self, points) -> bool:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return bool(np.all((pts >= self.lower) & (pts <= self.upper)))

    def to_dict(self) -> dict:
        return {
            "x": [self.x_min, self.x_max],
            "y": [self.y_min, self.y_max],
            "z": [self.z_min, self.z_max],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionRange":
        return cls(*d["x"], *d["y"], *d["z"])


def as_polyline(points, min_points: int = 1) -> np.ndarray:
    """Coerce ``points`` to a finite float array of shape (n, 3)."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) point array, got shape {arr.shape}")
    if len(arr) < min_points:
        raise ValueError(f"polyline needs at least {min_points} points, got {len(arr)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("polyline coordinates must be finite")
    return arr


def resample_polyline(line, n: int = NUM_POINTS) -> np.ndarray:
    """Resample a polyline to ``n`` points equally spaced in chord length.

    Arc length is measured along the piecewise-linear polyline. The first
    and last output points are copied from the input unchanged.
    """
    pts = as_polyline(line, min_points=2)
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if not total > 0:
        raise ValueError("degenerate polyline")

    targets = total * np.arange(n) / (n - 1)
    # index of the segment each target falls on; zero-length segments are skipped
    idx = np.searchsorted(cum, targets, side="right") - 1
    idx = np.clip(idx, 0, len(seg) - 1)
    seg_len = seg[idx]
    frac = np.divide(
        targets - cum[idx], seg_len, out=np.zeros_like(targets), where=seg_len > 0
    )
    out = pts[idx] + frac[:, None] * (pts[idx + 1] - pts[idx])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def bezier_to_polyline(control_points, n: int = NUM_POINTS) -> np.ndarray:
    """Evaluate a degree-4 Bezier curve at ``n`` uniform parameter values."""
    ctrl = as_polyline(control_points)
    if len(ctrl) != BEZIER_DEGREE + 1:
        raise ValueError(f"expected {BEZIER_DEGREE + 1} control points, got {len(ctrl)}")
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    t = np.arange(n) / (n - 1)
    basis = np.stack(
        [
            comb(BEZIER_DEGREE, k) * t**k * (1.0 - t) ** (BEZIER_DEGREE - k)
            for k in range(BEZIER_DEGREE + 1)
        ],
        axis=1,
    )
    return basis @ ctrl


def normalize_points(line, det_range: DetectionRange = DetectionRange()) -> np.ndarray:
    """Map meters to unit coordinates; out-of-range points are not clipped."""
    pts = np.asarray(line, dtype=float)
    return (pts - det_range.lower) / (det_range.upper - det_range.lower)


def denormalize_points(line, det_range: DetectionRange = DetectionRange()) -> np.ndarray:
    pts = np.asarray(line, dtype=float)
    return pts * (det_range.upper - det_range.lower) + det_range.lower


def _frechet_table(dist: np.ndarray) -> np.ndarray:
    """Coupling table over the last two axes of ``dist``; leading axes batch."""
    p, q = dist.shape[-2:]
    ca = np.empty_like(dist)
    ca[..., 0, 0] = dist[..., 0, 0]
    for i in range(1, p):
        ca[..., i, 0] = np.maximum(ca[..., i - 1, 0], dist[..., i, 0])
    for j in range(1, q):
        ca[..., 0, j] = np.maximum(ca[..., 0, j - 1], dist[..., 0, j])
    for i in range(1, p):
        for j in range(1, q):
            best = np.minimum(
                np.minimum(ca[..., i - 1, j], ca[..., i, j - 1]), ca[..., i - 1, j - 1]
            )
            ca[..., i, j] = np.maximum(best, dist[..., i, j])
    return ca


def _point_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[..., :, None, :] - b[..., None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def discrete_frechet(a, b) -> float:
    """Discrete Frechet distance between two point sequences.

    Examples
    --------
    >>> discrete_frechet([[0, 0, 0], [1, 0, 0]], [[0, 1, 0], [1, 1, 0]])
    1.0
    """
    pa = as_polyline(a)
    pb = as_polyline(b)
    return float(_frechet_table(_point_distances(pa, pb))[-1, -1])


def pairwise_frechet(lines_a, lines_b) -> np.ndarray:
    """Frechet distance matrix between two stacks of equal-length polylines.

    ``lines_a`` has shape (P, n, 3) and ``lines_b`` shape (G, m, 3); the
    result has shape (P, G).
    """
    A = np.asarray(lines_a, dtype=float)
    B = np.asarray(lines_b, dtype=float)
    if len(A) == 0 or len(B) == 0:
        return np.zeros((len(A), len(B)))
    dist = _point_distances(A[:, None], B[None, :])
    return _frechet_table(dist)[..., -1, -1]


def successor_gap(a, b) -> float:
    """Distance from the end of lane ``a`` to the start of lane ``b``.

    Accepts lane objects (anything with ``.points``) or raw point arrays.
    """
    pa = np.asarray(getattr(a, "points", a), dtype=float)
    pb = np.asarray(getattr(b, "points", b), dtype=float)
    return float(np.linalg.norm(pa[-1] - pb[0]))
