"""Exit criteria for the toolkit, one test per criterion.

A pass/fail line per criterion is printed in the pytest terminal summary.
Criterion 2 (trained-model tables) is not reproducible without training and
is covered by the substitute criteria 3 to 10.
"""

import io
import json
import time
from contextlib import redirect_stdout

import numpy as np

from lanetopo import dataio
from lanetopo.cli import main
from lanetopo.geometry import discrete_frechet
from lanetopo.metrics import MatchResult, average_precision, evaluate, ols
from lanetopo.query_kernels import assemble_lc_queries, point_pooling
from lanetopo.scenesim import (
    LAYOUTS,
    PerturbationConfig,
    generate_dataset,
    generate_scene,
    oracle_ap,
    oracle_frechet,
    perturb_scene,
)
from lanetopo.structures import LaneCenterline, SceneFrame
from lanetopo.topology import MlpParams, apply_threshold, geometric_override, infer_lane_graph


def test_c1_ols_arithmetic(criterion):
    baseline = ols(0.0957, 0.4589, 0.0092, 0.1146)
    ours_val = ols(0.2695, 0.6142, 0.1537, 0.2181)
    ours_test = ols(0.22, 0.72, 0.13, 0.23)
    ok = (
        abs(baseline - 0.2472) <= 0.0005
        and abs(ours_val - 0.4357) <= 0.0005
        and abs(ours_test - 0.445) <= 0.005
    )
    criterion(1, "OLS reproduces reported rows", ok,
              f"{baseline:.5f} vs 0.2472, {ours_val:.5f} vs 0.4357, {ours_test:.5f} vs 0.445")


def test_c3_oracle_equivalence(criterion):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    frechet_bad = 0
    for _ in range(500):
        a = rng.uniform(-20, 20, size=(rng.integers(1, 9), 3))
        b = rng.uniform(-20, 20, size=(rng.integers(1, 9), 3))
        frechet_bad += discrete_frechet(a, b) != oracle_frechet(a, b)
    ap_bad = 0
    for _ in range(500):
        n = int(rng.integers(0, 9))
        hits = rng.random(n) < 0.5
        gt = np.where(hits, np.cumsum(hits) - 1, -1)
        m = MatchResult(rng.random(n), gt, int(hits.sum()) + int(rng.integers(0, 3)))
        ap_bad += abs(average_precision(m) - oracle_ap(m)) > 1e-12
    elapsed = time.perf_counter() - start
    criterion(3, "kernels equal brute-force oracles", frechet_bad == 0 and ap_bad == 0 and elapsed < 10,
              f"frechet mismatches {frechet_bad}/500, AP mismatches {ap_bad}/500, {elapsed:.2f}s")


def test_c4_perfect_prediction_identity(criterion):
    failures = []
    for layout in LAYOUTS:
        for seed in range(50):
            gt = generate_scene(seed, 4 + seed % 17, 1 + seed % 6, layout)
            r = evaluate([gt], [gt])
            values = (r.det_l, r.det_t, r.top_ll, r.top_lt, r.ols)
            if values != (1.0,) * 5:
                failures.append((layout, seed, values))
    criterion(4, "evaluate(gt, gt) is exactly 1.0", not failures,
              f"{3 * 50 - len(failures)}/150 scenes exact")


def test_c5_query_kernel_invariants(criterion):
    rng = np.random.default_rng(5)
    worst_perm = worst_lin = 0.0
    offset_exact = True
    for _ in range(1000):
        n_p, d, n = int(rng.integers(1, 12)), int(rng.integers(1, 16)), int(rng.integers(1, 10))
        a, b = rng.normal(scale=10, size=(2, n_p, d))
        alpha, beta = rng.normal(size=2)
        worst_perm = max(worst_perm, np.abs(point_pooling(a[rng.permutation(n_p)]) - point_pooling(a)).max())
        worst_lin = max(worst_lin, np.abs(
            point_pooling(alpha * a + beta * b) - (alpha * point_pooling(a) + beta * point_pooling(b))
        ).max())
        # exactly representable values: the per-row offset is identical bit for bit
        q_i = rng.integers(-1000, 1000, size=(n, d)).astype(float)
        pooled = point_pooling(rng.integers(-1000, 1000, size=(n_p, d)).astype(float))
        diff = assemble_lc_queries(q_i, pooled) - q_i
        offset_exact &= bool(np.all(diff == diff[0]) and np.all(diff[0] == pooled))
        # arbitrary floats: every row is the float sum of its instance row and one shared vector
        q_f = rng.normal(size=(n, d))
        p_f = rng.normal(size=d)
        offset_exact &= assemble_lc_queries(q_f, p_f).tobytes() == np.stack([row + p_f for row in q_f]).tobytes()
    ok = worst_perm <= 1e-9 and worst_lin <= 1e-9 and offset_exact
    criterion(5, "pooling permutation/linearity and constant offset", ok,
              f"perm err {worst_perm:.1e}, linearity err {worst_lin:.1e}, offset exact {offset_exact}")


def _lane(start_x, end_x):
    return LaneCenterline(np.linspace([start_x, 0, 0], [end_x, 0, 0], 11))


def test_c6_geometric_override(criterion):
    rng = np.random.default_rng(6)
    monotone = True
    for _ in range(1000):
        n = int(rng.integers(1, 8))
        lanes = [
            LaneCenterline(np.linspace(p, p + rng.normal(scale=5, size=3), 11))
            for p in rng.uniform(-20, 20, size=(n, 3))
        ]
        edges = rng.random((n, n)) < 0.3
        np.fill_diagonal(edges, False)
        out = geometric_override(edges, lanes, 3.0)
        monotone &= bool(np.all(out[edges]))
    near = geometric_override(np.zeros((2, 2), bool), [_lane(0, 5), _lane(7.999, 12)])[0, 1]
    at = geometric_override(np.zeros((2, 2), bool), [_lane(0, 5), _lane(8.0, 12)])[0, 1]
    criterion(6, "override monotone; 2.999 m forced, 3.000 m not", monotone and near and not at,
              f"monotone {monotone}, 2.999 m -> {bool(near)}, 3.000 m -> {bool(at)}")


def test_c7_threshold_semantics(criterion):
    above, exact = apply_threshold([[0.5 + 1e-12, 0.5]])[0]
    zero_mlp = infer_lane_graph(
        [LaneCenterline(np.linspace([0, 0, 0], [5, 0, 0], 11), feature=[0.0]),
         LaneCenterline(np.linspace([20, 0, 0], [25, 0, 0], 11), feature=[0.0])],
        [], MlpParams.zeros(14), MlpParams.zeros(2),
    ).lane_lane
    ok = bool(above) and not bool(exact) and not zero_mlp.edges.any()
    criterion(7, "edge iff confidence > 0.5", ok,
              f"0.5+1e-12 -> {bool(above)}, 0.5 -> {bool(exact)}, zero MLP edges {int(zero_mlp.edges.sum())}")


def test_c8_noise_monotonicity(criterion):
    means = []
    for sigma in (0.0, 0.5, 2.0):
        scores = []
        for seed in range(30):
            gt = generate_scene(seed, 12, 4, LAYOUTS[seed % 3])
            pred = perturb_scene(gt, PerturbationConfig(point_noise_sigma=sigma, seed=seed))
            scores.append(evaluate([pred], [gt]).ols)
        means.append(float(np.mean(scores)))
    ok = means[0] > means[1] > means[2]
    criterion(8, "mean OLS strictly decreasing in point noise", ok,
              "sigma 0/0.5/2.0 -> " + " / ".join(f"{m:.4f}" for m in means))


def test_c9_override_efficacy(criterion):
    gt = generate_dataset(20, 9, 8, 3, "chain", feature_dim=6)
    lane_mlp, te_mlp = MlpParams.zeros(2 * (6 + 6), [6, 6]), MlpParams.zeros(12, [6, 6])

    def predict(gap_limit):
        frames = []
        for f in gt:
            g = infer_lane_graph(f.lanes, f.traffic_elements, lane_mlp, te_mlp, gap_limit=gap_limit)
            ll, lt = g.full_scores(len(f.lanes), len(f.traffic_elements))
            frames.append(SceneFrame(f.frame_id, f.lanes, f.traffic_elements, ll, lt))
        return frames

    off = evaluate(predict(None), gt).top_ll
    on = evaluate(predict(3.0), gt).top_ll
    criterion(9, "geometric override lifts TOP_ll on chains", off == 0.0 and on >= 0.9,
              f"TOP_ll without {off:.3f}, with {on:.3f}")


def test_c10_cli_determinism(criterion, tmp_path, monkeypatch):
    gt_path, pred_path = tmp_path / "gt.json", tmp_path / "pred.json"
    gt = generate_dataset(100, 10, 10, 4, "grid")
    pred = [perturb_scene(f, PerturbationConfig(0.6, 0.1, 0.1, 0.2, 0.05, seed=10)) for f in gt]
    dataio.save_frames(gt, gt_path)
    dataio.save_frames(pred, pred_path)

    outputs = {}
    for workers in (1, 2, 8):
        monkeypatch.setenv("LANETOPO_THREADS", str(workers))
        buf = io.StringIO()
        with redirect_stdout(buf):
            code = main(["evaluate", "--gt", str(gt_path), "--pred", str(pred_path)])
        assert code == 0
        outputs[workers] = buf.getvalue().encode("utf-8")
    json.loads(outputs[1])
    identical = outputs[1] == outputs[2] == outputs[8]
    criterion(10, "evaluate output byte-identical for 1/2/8 workers", identical,
              f"{len(outputs[1])} bytes, ols {json.loads(outputs[1])['ols']:.4f}")
