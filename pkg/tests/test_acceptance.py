"""End-to-end acceptance criteria; each test records one PASS/FAIL line for the run summary."""
import hashlib
import itertools
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from mvpose.fitting import least_squares_fit
from mvpose.geometry import RigidTransform
from mvpose.harness import ExperimentConfig, cmd_ablate_views, cmd_wiggle_sweep, run_experiment
from mvpose.keypoints import keypoint_candidates, select_keypoints
from mvpose.losses import focal_semantic_loss, multi_task_loss
from mvpose.mesh import make_box
from mvpose.metrics import add_distance, add_s_distance, auc
from mvpose.voting import MeanShiftConfig, mean_shift

from conftest import ACCEPTANCE_LINES, random_transform

pytestmark = pytest.mark.slow


def record(n, ok, detail):
    ACCEPTANCE_LINES[n] = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    print(ACCEPTANCE_LINES[n])
    return ok


def min_pairwise(p):
    d = np.linalg.norm(p[:, None] - p[None], axis=-1)
    return d[np.triu_indices(len(p), 1)].min()


TREND_CFG = ExperimentConfig(scene_count=200, rig={"type": "SphereQuadrant"}, views="sweep", samples_per_view=6144,
                             offset_sigma=0.008, label_flip_rate=0.05, seed=0)


def test_pipeline_exactness():
    t0 = time.perf_counter()
    rep = run_experiment(ExperimentConfig(scene_count=100, views=3))[3]
    elapsed = time.perf_counter() - t0
    d = np.concatenate([s["adds"] for s in rep.scenes])
    o = rep.overall()
    ok = (np.isfinite(d).all() and d.max() < 1e-6 and abs(o["add_s_auc"] - 100) <= 0.01
          and o["add_s_2cm"] == 100 and elapsed < 180)
    record(1, ok, f"{len(d)} objects, max ADD {d.max():.2e} m, ADD-S AUC {o['add_s_auc']:.4f}, "
                  f"<2cm {o['add_s_2cm']:.1f}%, {elapsed:.0f} s")
    assert ok


def test_least_squares_fitting():
    rng = np.random.default_rng(0)
    worst_r = worst_t = 0.0
    for _ in range(1000):
        T = random_transform(rng)
        k = rng.normal(0, 0.1, (8, 3))
        est = least_squares_fit(k, T.apply(k))
        worst_r = max(worst_r, np.linalg.norm(est.pose.rotation - T.rotation))
        worst_t = max(worst_t, np.linalg.norm(est.pose.translation - T.translation))
    dets = []
    for _ in range(100):
        k = rng.normal(0, 0.1, (8, 3))
        dets.append(np.linalg.det(least_squares_fit(k, random_transform(rng).apply(k * [1, -1, 1])).pose.rotation))
    angles = np.arange(0, 360, 30)
    grid = Rotation.from_euler("zyx", list(itertools.product(angles, angles, angles)), degrees=True).as_matrix()
    grid_ok = True
    for _ in range(20):
        k = rng.normal(0, 0.1, (8, 3))
        kh = random_transform(rng).apply(k) + rng.normal(0, 0.01, (8, 3))
        A, B = k - k.mean(axis=0), kh - kh.mean(axis=0)
        best = np.sqrt(((B[None] - np.einsum("gij,nj->gni", grid, A)) ** 2).sum(axis=(1, 2)).min() / 8)
        grid_ok &= least_squares_fit(k, kh).residual_rms <= best + 1e-12
    ok = worst_r < 1e-9 and worst_t < 1e-9 and np.allclose(dets, 1.0, atol=1e-12) and grid_ok
    record(2, ok, f"rotation err {worst_r:.1e}, translation err {worst_t:.1e}, "
                  f"min det {min(dets):.12f}, grid bound {'held' if grid_ok else 'violated'}")
    assert ok


def test_metric_oracles():
    rng = np.random.default_rng(0)
    th = np.linspace(0, 0.1, 100_001)
    worst = 0.0
    for _ in range(50):
        d = rng.exponential(0.03, rng.integers(1, 100))
        acc = (d[None] < th[:, None]).mean(axis=1)
        worst = max(worst, abs(auc(d) - 100 * np.trapezoid(acc, th) / 0.1))
    exact = ordered = True
    for _ in range(20):
        pts = rng.normal(0, 0.05, (200, 3))
        gt = random_transform(rng)
        dR = Rotation.from_rotvec(rng.normal(0, 0.1, 3)).as_matrix()
        pred = RigidTransform(dR @ gt.rotation, gt.translation + rng.normal(0, 0.02, 3))
        a, b = pred.apply(pts), gt.apply(pts)
        brute = np.empty(len(a))
        for i, x in enumerate(a):
            brute[i] = min(np.sqrt(((x - y) ** 2).sum()) for y in b)
        exact &= add_s_distance(pts, gt, pred) == brute.mean()
        ordered &= add_s_distance(pts, gt, pred) <= add_distance(pts, gt, pred)
    ok = worst < 0.01 and exact and ordered
    record(3, ok, f"max |auc - trapezoid| {worst:.2e}, ADD-S brute force {'exact' if exact else 'differs'}, "
                  f"ADD-S <= ADD {'always' if ordered else 'violated'}")
    assert ok


def test_fps_property(library):
    # pinned draw: greedy FPS loses to about 1 random subset in 5,000 on the banana
    rng = np.random.default_rng(0)
    margins = []
    for model in library:
        cand = keypoint_candidates(model.mesh)
        rand = max(min_pairwise(cand[rng.choice(len(cand), 8, replace=False)]) for _ in range(1000))
        margins.append(min_pairwise(model.keypoints) - rand)
    cube = make_box((0.1, 0.1, 0.1), spacing=1.0)
    corners = {tuple(np.sign(p)) for p in select_keypoints(cube)}
    ok = min(margins) >= 0 and len(corners) == 8
    record(4, ok, f"min margin over random subsets {1000 * min(margins):.2f} mm across {len(margins)} models, "
                  f"cube corners {len(corners)}/8")
    assert ok


def test_mean_shift():
    cfg = MeanShiftConfig(bandwidth=0.05)
    worst, counts, equiv = 0.0, set(), 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        a = rng.uniform(-1, 1, 3)
        u = rng.normal(size=3)
        b = a + u / np.linalg.norm(u)
        votes = np.concatenate([a + rng.normal(0, 0.01, (100, 3)), b + rng.normal(0, 0.01, (100, 3))])
        res = mean_shift(votes, cfg)
        counts.add(len(res.modes))
        if len(res.modes) == 2:
            d = np.linalg.norm(res.modes[:, None] - np.stack([a, b])[None], axis=-1)
            worst = max(worst, d.min(axis=0).max())
        shift = rng.uniform(-3, 3, 3)
        moved = mean_shift(votes + shift, cfg)
        if len(moved.modes) == len(res.modes):
            equiv = max(equiv, np.abs(moved.modes - res.modes - shift).max())
        else:
            equiv = np.inf
    ok = counts == {2} and worst < 0.005 and equiv <= 1e-12
    record(5, ok, f"mode counts {sorted(counts)}, worst planted error {1000 * worst:.2f} mm, "
                  f"translation residual {equiv:.1e}")
    assert ok


@pytest.fixture(scope="module")
def trend_runs(tmp_path_factory):
    runs = []
    for name in ("a", "b"):
        out = tmp_path_factory.mktemp(f"trend_{name}")
        t0 = time.perf_counter()
        reports = cmd_ablate_views(TREND_CFG.replace(out=str(out)), figures=False)
        runs.append((out, reports, time.perf_counter() - t0))
    return runs


def test_view_count_trend(trend_runs):
    _, reports, elapsed = trend_runs[0]
    v = [reports[k].overall()["add_s_auc"] for k in (1, 2, 3, 4)]
    ok = v[1] - v[0] >= 2.0 and v[2] - v[1] >= -0.2 and v[3] - v[2] >= -0.2 and elapsed < 900
    record(6, ok, "ALL ADD-S AUC k=1..4: " + " -> ".join(f"{x:.2f}" for x in v) + f", {elapsed / 60:.1f} min")
    assert ok


def test_wiggle_trend(tmp_path):
    sigmas = [0.0, 0.002, 0.005, 0.01]
    cfg = TREND_CFG.replace(rig={"type": "FixedRing"}, views="all", out=str(tmp_path))
    # zero jitter reproduces the fixed ring bit-exactly (see the harness tests)
    results = cmd_wiggle_sweep(cfg, sigmas=sigmas, figures=False)
    adds = [results[s].overall()["adds_auc"] for s in sigmas]
    drop = adds[0] - adds[2]
    monotone = all(b <= a + 0.2 for a, b in zip(adds, adds[1:]))
    ok = drop <= 4.0 and monotone
    record(7, ok, "ADD(-S) AUC at 0/2/5/10 mm: " + " / ".join(f"{x:.4f}" for x in adds)
           + f", fixed -> 5 mm drop {drop:.4f}")
    assert ok


def _digests(root):
    # k*/estimates/*.json and k*/report.{json,csv}; run.json carries timings
    files = [p for p in root.rglob("*") if p.is_file() and p.relative_to(root).parts[0].startswith("k")]
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(files)}


def test_determinism(trend_runs):
    (a, _, _), (b, _, _) = trend_runs
    da, db = _digests(a), _digests(b)
    ok = bool(da) and da == db
    record(8, ok, f"{len(da)} estimate/report files, {'byte-identical' if ok else 'differ'} across two runs")
    assert ok


def test_losses():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        n, c = rng.integers(1, 200), rng.integers(2, 20)
        logits = rng.normal(size=(n, c)) * 3
        p = np.exp(logits - logits.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        y = rng.integers(0, c, n)
        ce = -np.mean(np.log(np.maximum(p[np.arange(n), y], 1e-12)))
        worst = max(worst, abs(focal_semantic_loss(p, y, gamma=0.0, alpha=1.0) - ce))
    total = multi_task_loss(1, 1, 1)
    ok = worst <= 1e-12 and total == 25
    record(9, ok, f"focal(gamma=0) vs cross-entropy max diff {worst:.1e}, multi_task_loss(1,1,1) = {total:g}")
    assert ok
