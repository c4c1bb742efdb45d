"""JSON frame documents: schema validation, loading and saving.

Ground truth and predictions share one format. Relationship matrices may
hold booleans (ground truth) or scores in [0, 1] (predictions).
"""

from __future__ import annotations

import json
from pathlib import Path

import jsonschema
import numpy as np

from .geometry import NUM_POINTS
from .structures import LaneCenterline, LaneClass, SceneFrame, TrafficElement


class SchemaError(ValueError):
    """A document failed validation; the message names frame and field path."""


_POINT = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_VECTOR = {"type": "array", "items": {"type": "number"}}
_SCORE_MATRIX = {
    "type": "array",
    "items": {
        "type": "array",
        "items": {"anyOf": [{"type": "boolean"}, {"type": "number", "minimum": 0, "maximum": 1}]},
    },
}


def _lane_schema(geometry: dict) -> dict:
    return {
        "type": "object",
        "required": ["confidence", "lane_class", *geometry],
        "properties": {
            **geometry,
            "confidence": {"type": "number", "minimum": 0, "maximum": 1},
            "lane_class": {"enum": [c.value for c in LaneClass]},
            "feature": _VECTOR,
        },
        "additionalProperties": False,
    }


_TE_SCHEMA = {
    "type": "object",
    "required": ["bbox", "category", "confidence"],
    "properties": {
        "bbox": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
        "category": {"type": "string"},
        "confidence": {"type": "number", "minimum": 0, "maximum": 1},
        "feature": _VECTOR,
    },
    "additionalProperties": False,
}


def _document_schema(lane_schema: dict, matrices_required: bool) -> dict:
    required = ["frame_id", "lanes", "traffic_elements"]
    if matrices_required:
        required += ["lane_lane", "lane_te"]
    return {
        "type": "object",
        "required": ["frames"],
        "properties": {
            "frames": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": required,
                    "properties": {
                        "frame_id": {"type": "string"},
                        "lanes": {"type": "array", "items": lane_schema},
                        "traffic_elements": {"type": "array", "items": _TE_SCHEMA},
                        "lane_lane": _SCORE_MATRIX,
                        "lane_te": _SCORE_MATRIX,
                    },
                    "additionalProperties": False,
                },
            }
        },
    }


FRAME_SCHEMA = _document_schema(
    _lane_schema({"points": {"type": "array", "items": _POINT}}), matrices_required=True
)
RAW_FRAME_SCHEMA = _document_schema(
    _lane_schema({"points": {"type": "array", "items": _POINT, "minItems": 2}}), matrices_required=False
)
BEZIER_FRAME_SCHEMA = _document_schema(
    _lane_schema({"control_points": {"type": "array", "items": _POINT, "minItems": 5, "maxItems": 5}}),
    matrices_required=False,
)


def _frame_label(doc, path) -> str:
    if len(path) >= 2 and path[0] == "frames":
        try:
            return repr(doc["frames"][path[1]]["frame_id"])
        except (KeyError, IndexError, TypeError):
            return f"#{path[1]}"
    return "<document>"


def validate_document(doc, schema: dict = FRAME_SCHEMA) -> None:
    validator = jsonschema.Draft202012Validator(schema)
    error = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if error is not None:
        path = list(error.absolute_path)
        raise SchemaError(
            f"frame {_frame_label(doc, path)}: {'/'.join(map(str, path)) or '<root>'}: {error.message}"
        )


def score_matrix(rows, n_rows: int, n_cols: int, fid: str, field: str) -> np.ndarray:
    """Check dimensions against instance counts; ``None`` means all zeros."""
    if rows is None:
        return np.zeros((n_rows, n_cols))
    if len(rows) != n_rows or any(len(r) != n_cols for r in rows):
        raise SchemaError(
            f"frame {fid!r}: {field}: expected a {n_rows}x{n_cols} matrix matching instance counts"
        )
    return np.array([[float(v) for v in r] for r in rows], dtype=float).reshape(n_rows, n_cols)


def frame_from_dict(d: dict, index: int = 0) -> SceneFrame:
    """Build a frame from an already schema-checked dict."""
    fid = d["frame_id"]
    lanes = []
    for k, lane in enumerate(d["lanes"]):
        if len(lane["points"]) != NUM_POINTS:
            raise SchemaError(
                f"frame {fid!r}: frames/{index}/lanes/{k}/points: "
                f"lane must have exactly {NUM_POINTS} points, got {len(lane['points'])}"
            )
        lanes.append(LaneCenterline(lane["points"], lane["confidence"], lane["lane_class"], lane.get("feature")))
    tes = []
    for k, te in enumerate(d["traffic_elements"]):
        try:
            tes.append(TrafficElement(te["bbox"], te["category"], te["confidence"], te.get("feature")))
        except ValueError as exc:
            raise SchemaError(f"frame {fid!r}: frames/{index}/traffic_elements/{k}: {exc}") from exc
    n_l, n_t = len(lanes), len(tes)
    ll = score_matrix(d.get("lane_lane"), n_l, n_l, fid, f"frames/{index}/lane_lane")
    lt = score_matrix(d.get("lane_te"), n_l, n_t, fid, f"frames/{index}/lane_te")
    return SceneFrame(fid, lanes, tes, ll, lt)


def _matrix_to_json(m: np.ndarray) -> list:
    if np.all((m == 0.0) | (m == 1.0)):
        return (m == 1.0).tolist()
    return m.tolist()


def frame_to_dict(frame: SceneFrame) -> dict:
    def lane_dict(lane: LaneCenterline) -> dict:
        out = {
            "points": lane.points.tolist(),
            "confidence": lane.confidence,
            "lane_class": lane.lane_class.value,
        }
        if lane.feature is not None:
            out["feature"] = lane.feature.tolist()
        return out

    def te_dict(te: TrafficElement) -> dict:
        out = {"bbox": te.bbox.tolist(), "category": te.category, "confidence": te.confidence}
        if te.feature is not None:
            out["feature"] = te.feature.tolist()
        return out

    return {
        "frame_id": frame.frame_id,
        "lanes": [lane_dict(l) for l in frame.lanes],
        "traffic_elements": [te_dict(t) for t in frame.traffic_elements],
        "lane_lane": _matrix_to_json(frame.lane_lane),
        "lane_te": _matrix_to_json(frame.lane_te),
    }


def frames_to_document(frames) -> dict:
    return {"frames": [frame_to_dict(f) for f in frames]}


def frames_from_document(doc) -> list[SceneFrame]:
    validate_document(doc, FRAME_SCHEMA)
    return [frame_from_dict(d, k) for k, d in enumerate(doc["frames"])]


def read_json(path):
    """Parse a UTF-8 JSON file; bad JSON is reported as a SchemaError."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: malformed JSON: {exc}") from exc


def load_frames(path) -> list[SceneFrame]:
    return frames_from_document(read_json(path))


def save_frames(frames, path) -> None:
    Path(path).write_text(dump_json(frames_to_document(frames)), encoding="utf-8")


def dump_json(obj) -> str:
    return json.dumps(obj, indent=1) + "\n"
