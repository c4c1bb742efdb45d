"""Tool configuration: one JSON document plus ``key=value`` overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .geometry import DetectionRange
from .metrics import SCALINGS, EvalConfig
from .scenesim import DEFAULT_CATEGORIES, LAYOUTS, PerturbationConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "detection_range": {"x": [-50.0, 50.0], "y": [-25.0, 25.0], "z": [-3.0, 3.0]},
    "frechet_thresholds": [1.0, 2.0, 3.0],
    "iou_threshold": 0.75,
    "top_lane_threshold": 1.5,
    "top_iou_threshold": 0.75,
    "tau": 0.3,
    "gap_limit": 3.0,
    "f_scale": "sqrt",
    "mlp": {"hidden": None, "seed": 0},
    "categories": list(DEFAULT_CATEGORIES),
    "workers": None,
    "generate": {
        "n_frames": 20,
        "n_lanes": 8,
        "n_tes": 4,
        "layout": "chain",
        "seed": 0,
        "feature_dim": 8,
    },
    "perturbation": {
        "point_noise_sigma": 0.0,
        "confidence_noise_sigma": 0.0,
        "drop_rate": 0.0,
        "spurious_rate": 0.0,
        "edge_flip_rate": 0.0,
        "seed": 0,
    },
}

_NUM = {"type": "number"}
_UNIT = {"type": "number", "minimum": 0, "maximum": 1}
_COUNT = {"type": "integer", "minimum": 0}
_INTERVAL = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "detection_range": {
            "type": "object",
            "required": ["x", "y", "z"],
            "additionalProperties": False,
            "properties": {"x": _INTERVAL, "y": _INTERVAL, "z": _INTERVAL},
        },
        "frechet_thresholds": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "iou_threshold": _UNIT,
        "top_lane_threshold": {"type": "number", "exclusiveMinimum": 0},
        "top_iou_threshold": _UNIT,
        "tau": _UNIT,
        "gap_limit": {"type": ["number", "null"], "minimum": 0},
        "f_scale": {"enum": sorted(SCALINGS)},
        "mlp": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hidden": {"type": ["array", "null"], "items": {"type": "integer", "minimum": 1}},
                "seed": {"type": "integer"},
            },
        },
        "categories": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "workers": {"type": ["integer", "null"], "minimum": 1},
        "generate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_frames": _COUNT,
                "n_lanes": _COUNT,
                "n_tes": _COUNT,
                "layout": {"enum": list(LAYOUTS)},
                "seed": {"type": "integer"},
                "feature_dim": _COUNT,
            },
        },
        "perturbation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "point_noise_sigma": {"type": "number", "minimum": 0},
                "confidence_noise_sigma": {"type": "number", "minimum": 0},
                "drop_rate": _UNIT,
                "spurious_rate": _UNIT,
                "edge_flip_rate": _UNIT,
                "seed": {"type": "integer"},
            },
        },
    },
}


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def apply_override(doc: dict, assignment: str) -> dict:
    """Apply one ``dotted.key=value`` override; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = doc
    parts = key.strip().split(".")
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"override {key!r}: {part!r} is not a config section")
        node = node[part]
    node[parts[-1]] = value
    return doc


@dataclass
class ToolConfig:
    raw: dict

    @property
    def detection_range(self) -> DetectionRange:
        return DetectionRange.from_dict(self.raw["detection_range"])

    @property
    def tau(self) -> float:
        return float(self.raw["tau"])

    @property
    def gap_limit(self) -> float | None:
        g = self.raw["gap_limit"]
        return None if g is None else float(g)

    @property
    def categories(self) -> tuple:
        return tuple(self.raw["categories"])

    @property
    def generate(self) -> dict:
        return dict(self.raw["generate"])

    @property
    def perturbation(self) -> PerturbationConfig:
        return PerturbationConfig(**self.raw["perturbation"])

    def eval_config(self, workers: int | None = None) -> EvalConfig:
        r = self.raw
        return EvalConfig(
            frechet_thresholds=tuple(float(t) for t in r["frechet_thresholds"]),
            iou_threshold=float(r["iou_threshold"]),
            top_lane_threshold=float(r["top_lane_threshold"]),
            top_iou_threshold=float(r["top_iou_threshold"]),
            f_scale=r["f_scale"],
            workers=workers if workers is not None else r["workers"],
        )


def build_config(doc: dict | None = None, overrides=()) -> ToolConfig:
    merged = _merge(DEFAULTS, doc or {})
    for assignment in overrides:
        apply_override(merged, assignment)
    try:
        jsonschema.validate(merged, SCHEMA)
        cfg = ToolConfig(merged)
        cfg.detection_range
        cfg.perturbation
    except jsonschema.ValidationError as exc:
        path = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"config {path}: {exc.message}") from exc
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"config: {exc}") from exc
    return cfg


def load_config(path=None, overrides=()) -> ToolConfig:
    doc = None
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    return build_config(doc, overrides)
