"""Lane-centerline topology reasoning and OpenLane-V2 style evaluation."""

from .geometry import (
    DetectionRange,
    bezier_to_polyline,
    denormalize_points,
    discrete_frechet,
    normalize_points,
    resample_polyline,
    successor_gap,
)
from .metrics import EvalConfig, EvalReport, average_precision, evaluate, f_scale, ols
from .query_kernels import assemble_lc_queries, augment_with_endpoints, point_pooling
from .structures import LaneCenterline, LaneClass, SceneFrame, TrafficElement
from .topology import MlpParams, infer_lane_graph

__version__ = "0.1.0"
