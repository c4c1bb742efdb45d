"""Command-line entry point: ``lanetopo {evaluate,generate,infer,convert,init-mlp}``.

Exit codes: 0 success, 2 I/O failure, 3 schema/validation failure,
4 configuration failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import dataio
from .config import ConfigError, load_config
from .dataio import SchemaError
from .geometry import NUM_POINTS, bezier_to_polyline, resample_polyline
from .metrics import evaluate
from .scenesim import generate_dataset, perturb_scene
from .structures import LaneCenterline, SceneFrame, TrafficElement
from .topology import MlpParams, infer_lane_graph

log = logging.getLogger("lanetopo")

EXIT_IO = 2
EXIT_SCHEMA = 3
EXIT_CONFIG = 4

BEZIER_DENSE_SAMPLES = 201


def _config(args):
    return load_config(args.config, args.set or ())


def _write(text: str, path) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    gt = dataio.load_frames(args.gt)
    pred = dataio.load_frames(args.pred)
    report = evaluate(pred, gt, cfg.eval_config(args.workers))
    sys.stdout.write(json.dumps(report.to_dict(), indent=2) + "\n")
    return 0


def cmd_generate(args) -> int:
    cfg = _config(args)
    g = cfg.generate
    gt = generate_dataset(
        g["n_frames"], g["seed"], g["n_lanes"], g["n_tes"], g["layout"],
        feature_dim=g["feature_dim"], categories=cfg.categories, det_range=cfg.detection_range,
    )
    pred = [
        perturb_scene(f, cfg.perturbation, categories=cfg.categories, det_range=cfg.detection_range)
        for f in gt
    ]
    dataio.save_frames(gt, args.out_gt)
    dataio.save_frames(pred, args.out_pred)
    log.info("wrote %d frames to %s and %s", len(gt), args.out_gt, args.out_pred)
    return 0


def cmd_infer(args) -> int:
    cfg = _config(args)
    frames = dataio.load_frames(args.frames)
    lane_params = MlpParams.load(args.lane_mlp)
    te_params = MlpParams.load(args.te_mlp)
    out = []
    for f in frames:
        try:
            graph = infer_lane_graph(
                f.lanes, f.traffic_elements, lane_params, te_params,
                tau=cfg.tau, gap_limit=cfg.gap_limit, det_range=cfg.detection_range,
            )
        except ValueError as exc:
            raise SchemaError(f"frame {f.frame_id!r}: {exc}") from exc
        ll, lt = graph.full_scores(len(f.lanes), len(f.traffic_elements))
        out.append(SceneFrame(f.frame_id, f.lanes, f.traffic_elements, ll, lt))
    _write(dataio.dump_json(dataio.frames_to_document(out)), args.out)
    return 0


def _convert_frame(d: dict, index: int, mode: str) -> SceneFrame:
    lanes = []
    for lane in d["lanes"]:
        if mode == "bezier5_to_points11":
            dense = bezier_to_polyline(lane["control_points"], BEZIER_DENSE_SAMPLES)
        else:
            dense = np.asarray(lane["points"], dtype=float)
        try:
            pts = resample_polyline(dense, NUM_POINTS)
        except ValueError as exc:
            raise SchemaError(f"frame {d['frame_id']!r}: frames/{index}/lanes/{len(lanes)}: {exc}") from exc
        lanes.append(LaneCenterline(pts, lane["confidence"], lane["lane_class"], lane.get("feature")))
    n_l, n_t = len(lanes), len(d["traffic_elements"])
    tes = [
        TrafficElement(te["bbox"], te["category"], te["confidence"], te.get("feature"))
        for te in d["traffic_elements"]
    ]
    fid = d["frame_id"]
    ll = dataio.score_matrix(d.get("lane_lane"), n_l, n_l, fid, f"frames/{index}/lane_lane")
    lt = dataio.score_matrix(d.get("lane_te"), n_l, n_t, fid, f"frames/{index}/lane_te")
    return SceneFrame(d["frame_id"], lanes, tes, ll, lt)


def cmd_convert(args) -> int:
    doc = dataio.read_json(args.in_path)
    schema = dataio.BEZIER_FRAME_SCHEMA if args.mode == "bezier5_to_points11" else dataio.RAW_FRAME_SCHEMA
    dataio.validate_document(doc, schema)
    frames = [_convert_frame(d, k, args.mode) for k, d in enumerate(doc["frames"])]
    _write(dataio.dump_json(dataio.frames_to_document(frames)), args.out)
    return 0


def cmd_init_mlp(args) -> int:
    cfg = _config(args)
    hidden = cfg.raw["mlp"]["hidden"]
    if hidden is None:
        hidden = [args.feature_dim] * 2
    seed = cfg.raw["mlp"]["seed"]
    lane_width = 2 * (args.feature_dim + 6)
    te_width = args.feature_dim + (args.te_feature_dim or args.feature_dim)
    factory = (lambda w, s: MlpParams.zeros(w, hidden)) if args.zero else (
        lambda w, s: MlpParams.random(w, hidden, s)
    )
    factory(lane_width, seed).save(args.lane_out)
    factory(te_width, seed + 1).save(args.te_out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lanetopo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--workers", type=int, help="matching threads (default: LANETOPO_THREADS or 1)")
    add_config(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("generate", help="write synthetic GT and perturbed predictions")
    p.add_argument("--out-gt", required=True)
    p.add_argument("--out-pred", required=True)
    add_config(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("infer", help="replace topology matrices with MLP + geometric predictions")
    p.add_argument("--frames", required=True)
    p.add_argument("--lane-mlp", required=True)
    p.add_argument("--te-mlp", required=True)
    p.add_argument("--out", default="-")
    add_config(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("convert", help="convert lane geometry to 11 equally spaced points")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--mode", required=True, choices=["bezier5_to_points11", "resample11"])
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("init-mlp", help="write seeded MLP parameter files for infer")
    p.add_argument("--feature-dim", type=int, required=True)
    p.add_argument("--te-feature-dim", type=int)
    p.add_argument("--lane-out", required=True)
    p.add_argument("--te-out", required=True)
    p.add_argument("--zero", action="store_true", help="all-zero weights (every score is 0.5)")
    add_config(p)
    p.set_defaults(func=cmd_init_mlp)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(exc, EXIT_CONFIG)
    except SchemaError as exc:
        return _fail(exc, EXIT_SCHEMA)
    except OSError as exc:
        return _fail(exc, EXIT_IO)
    except ValueError as exc:
        return _fail(exc, EXIT_SCHEMA)


def _fail(exc: Exception, code: int) -> int:
    print(f"lanetopo: error: {exc}", file=sys.stderr)
    return code

if __name__ == "__main__":
    sys.exit(main())
