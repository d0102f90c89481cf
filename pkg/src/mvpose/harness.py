"""Dataset generation, end-to-end estimation, evaluation and the trend experiments."""
from __future__ import annotations

import csv
import json
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from PIL import Image

from . import plotting
from .fitting import estimate_poses, load_estimates, save_estimates
from .fusion import ToyFeatures, View, dense_fuse, fuse_prepared, prepare_view
from .geometry import DepthImage, invert
from .mesh import sample_surface
from .metrics import MetricsReport, add_distance, add_s_distance
from .models import ModelLibrary, default_library
from .oracle import OracleConfig, oracle_predict
from .simulator import (RasterError, RenderedView, SceneSpec, enumerate_camera_combinations,
                        generate_scene, is_test_scene, load_manifest, read_depth, read_seg, render_view,
                        rig_from_dict, save_manifest, write_depth, write_seg)
from .voting import MeanShiftConfig, vote


class ConfigError(ValueError):
    pass


class DataError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    seed: int = 0
    scene_count: int = 10
    rig: dict = field(default_factory=lambda: {"type": "FixedRing"})
    views: object = "all"  # int k, "all" (every camera) or "sweep" (k = 1..V)
    offset_sigma: float = 0.0
    label_flip_rate: float = 0.0
    offset_frame: str = "reference"
    samples_per_view: int = 12_288
    placement_sigma: float = 0.12
    ground_radius: float = 0.4
    min_visible_pixels: int = 500
    class_ids: list | None = None
    mean_shift: dict = field(default_factory=dict)
    min_support: int = 10
    features: bool = True
    adds_points: str = "vertices"  # or "surface"
    wiggle_sigmas: list = field(default_factory=lambda: [0.0, 0.002, 0.005, 0.01])
    workers: int = 1
    out: str = "out"

    def __post_init__(self):
        try:
            self.rig_spec = rig_from_dict(self.rig)
            self.ms_cfg = MeanShiftConfig(**self.mean_shift)
            OracleConfig(self.offset_sigma, self.label_flip_rate, offset_frame=self.offset_frame)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"invalid configuration: {e}") from e
        if self.scene_count < 1:
            raise ConfigError("scene_count must be at least 1")
        if self.samples_per_view < 1:
            raise ConfigError("samples_per_view must be at least 1")
        if self.adds_points not in ("vertices", "surface"):
            raise ConfigError("adds_points must be 'vertices' or 'surface'")
        if not (self.views in ("all", "sweep") or (isinstance(self.views, int) and self.views >= 1)):
            raise ConfigError(f"views must be a positive integer, 'all' or 'sweep', got {self.views!r}")
        if isinstance(self.views, int) and self.views > self.rig_spec.count:
            raise ConfigError(f"views={self.views} exceeds the rig's {self.rig_spec.count} cameras")

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> ExperimentConfig:
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> ExperimentConfig:
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)

    def k_values(self, camera_count: int) -> list:
        if self.views == "sweep":
            return list(range(1, camera_count + 1))
        if self.views == "all":
            return [camera_count]
        return [int(self.views)]


def _derive_seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def scene_spec(cfg: ExperimentConfig, library: ModelLibrary) -> SceneSpec:
    ids = tuple(cfg.class_ids or library.class_ids)
    return SceneSpec(ids, rig=cfg.rig_spec, placement_sigma=cfg.placement_sigma, ground_radius=cfg.ground_radius,
                     min_visible_pixels=cfg.min_visible_pixels)


class _Timer:
    def __init__(self):
        self.totals = defaultdict(float)

    def __call__(self, stage):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.totals[stage] += time.perf_counter() - self.t0

        return _Ctx()

    def merge(self, other: dict):
        for k, v in other.items():
            self.totals[k] += v


def render_scene(scene, library, ground_radius) -> list:
    return [render_view(scene, i, library, ground_radius=ground_radius) for i in range(len(scene.cameras))]


def estimate_scene(scene, rendered, library, cfg: ExperimentConfig, k_values, timer=None) -> dict:
    """Run the full pipeline on every camera combination of every requested size.

    Returns ``{k: [(combination, [PoseEstimate, ...]), ...]}``. Per-camera
    work (back-projection, subsampling, normals, visual features) is shared
    by all combinations; it depends only on the camera, never on the
    combination, so sharing does not change results.
    """
    timer = timer or _Timer()
    view_seed = _derive_seed(cfg.seed, scene.scene_index)
    provider = ToyFeatures()
    prepared, visual = {}, {}
    out = {}
    for k in k_values:
        runs = []
        for combo in enumerate_camera_combinations(len(scene.cameras), k):
            with timer("prepare"):
                for c in combo:
                    if c not in prepared:
                        rv = rendered[c]
                        prepared[c] = prepare_view(View(rv.depth, rv.color, scene.cameras[c].nominal_pose, c),
                                                   cfg.samples_per_view, view_seed, c)
                        if cfg.features:
                            visual[c] = provider.visual(rv.color)
            with timer("fuse"):
                fused = fuse_prepared([prepared[c] for c in combo],
                                      [scene.cameras[c].nominal_pose for c in combo], cfg.samples_per_view, combo)
            if cfg.features:
                with timer("features"):
                    dense_fuse(fused, None, provider, visual_maps=[visual[c] for c in combo])
            with timer("oracle"):
                ocfg = OracleConfig(cfg.offset_sigma, cfg.label_flip_rate,
                                    _derive_seed(cfg.seed, scene.scene_index, len(combo), *combo), cfg.offset_frame)
                bundle = oracle_predict(fused, scene, [rendered[c].seg for c in combo], library, ocfg)
            with timer("vote"):
                hyps = vote(bundle, fused, library, cfg.ms_cfg, cfg.min_support)
            with timer("fit"):
                estimates = estimate_poses(hyps, library)
            runs.append((combo, estimates))
        out[k] = runs
    return out


class Evaluator:
    """Distances of estimates against scene ground truth in the reference camera frame."""

    def __init__(self, library: ModelLibrary, adds_points: str = "vertices"):
        self.library = library
        self.points = {}
        for m in library:
            self.points[m.class_id] = (m.mesh.vertices if adds_points == "vertices"
                                       else sample_surface(m.mesh, 2048, seed=0).positions)

    def scene_record(self, scene, combo, estimates) -> dict:
        ref = invert(scene.cameras[combo[0]].true_pose)
        by_class = {e.class_id: e for e in estimates}
        rec = {"scene_id": scene.scene_id, "cameras": list(combo), "classes": [], "class_ids": [],
               "add_s": [], "adds": []}
        for obj in sorted(scene.objects, key=lambda o: o.class_id):
            model = self.library[obj.class_id]
            gt = ref @ obj.gt_pose
            est = by_class.get(obj.class_id)
            if est is None:
                d_s = d_c = float("inf")
            else:
                pts = self.points[obj.class_id]
                d_s = add_s_distance(pts, gt, est.pose)
                d_c = d_s if model.symmetric else add_distance(pts, gt, est.pose)
            rec["classes"].append(model.name)
            rec["class_ids"].append(obj.class_id)
            rec["add_s"].append(d_s)
            rec["adds"].append(d_c)
        return rec

    def report(self, records) -> MetricsReport:
        rep = MetricsReport()
        for rec in records:
            rep.scenes.append(rec)
            for name, a, c in zip(rec["classes"], rec["add_s"], rec["adds"]):
                rep.add(name, a, c)
        return rep


def _combo_tag(combo) -> str:
    return "c" + "-".join(str(c) for c in combo)


def _write_run_record(out: Path, command: str, cfg: ExperimentConfig | None, timer: _Timer, extra=None):
    rec = {"command": command, "config": None if cfg is None else cfg.to_dict(),
           "timings_s": {k: round(v, 4) for k, v in sorted(timer.totals.items())}}
    if extra:
        rec.update(extra)
    (out / "run.json").write_text(json.dumps(rec, indent=1))


def _ensure_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise DataError(f"output directory {path} is not writable: {e}") from e
    return path


# gen ------------------------------------------------------------------------

def cmd_gen(cfg: ExperimentConfig) -> Path:
    """Write models, scene manifests and per-camera depth/seg/color rasters under ``cfg.out``."""
    out = _ensure_dir(cfg.out)
    timer = _Timer()
    library = default_library()
    library.save(out / "models")
    spec = scene_spec(cfg, library)
    entries = []
    for i in range(cfg.scene_count):
        with timer("generate"):
            scene = generate_scene(spec, library, cfg.seed, i)
        with timer("render"):
            views = render_scene(scene, library, cfg.ground_radius)
        sdir = out / "scenes" / scene.scene_id
        sdir.mkdir(parents=True, exist_ok=True)
        with timer("write"):
            save_manifest(sdir / "manifest.json", scene)
            for c, rv in enumerate(views):
                write_depth(sdir / f"cam{c}_depth.mvdz", rv.depth.data)
                write_seg(sdir / f"cam{c}_seg.mvsg", rv.seg)
                Image.fromarray(np.round(rv.color * 255).astype(np.uint8)).save(sdir / f"cam{c}_color.png")
        entries.append({"scene_id": scene.scene_id, "scene_index": i,
                        "split": "test" if is_test_scene(i) else "train",
                        "resample_count": scene.resample_count})
    index = {"seed": cfg.seed, "rig": cfg.rig, "scenes": entries,
             "split": {"train": sum(e["split"] == "train" for e in entries),
                       "test": sum(e["split"] == "test" for e in entries)}}
    (out / "index.json").write_text(json.dumps(index, indent=1))
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
    _write_run_record(out, "gen", cfg, timer, {"scene_count": len(entries)})
    return out


def load_library(data_dir) -> ModelLibrary:
    manifest = Path(data_dir) / "models" / "manifest.json"
    if not manifest.exists():
        raise DataError(f"{data_dir}: missing models/manifest.json")
    return ModelLibrary.load(manifest)


def load_dataset_index(data_dir) -> dict:
    path = Path(data_dir) / "index.json"
    if not path.exists():
        raise DataError(f"{data_dir}: missing index.json (run `gen` first)")
    return json.loads(path.read_text())


def load_scene(data_dir, scene_id: str):
    sdir = Path(data_dir) / "scenes" / scene_id
    try:
        scene = load_manifest(sdir / "manifest.json")
        views = []
        for c, cam in enumerate(scene.cameras):
            depth = read_depth(sdir / f"cam{c}_depth.mvdz")
            seg = read_seg(sdir / f"cam{c}_seg.mvsg")
            color = np.asarray(Image.open(sdir / f"cam{c}_color.png"), dtype=np.float64) / 255.0
            views.append(RenderedView(DepthImage(cam.intrinsics, depth), color, seg))
    except (OSError, RasterError, ValueError, KeyError) as e:
        raise DataError(f"scene {scene_id}: {e}") from e
    return scene, views


# estimate / eval ------------------------------------------------------------------

def _estimate_one(args):
    data_dir, scene_id, cfg_dict = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    library = load_library(data_dir)
    scene, views = load_scene(data_dir, scene_id)
    timer = _Timer()
    runs = estimate_scene(scene, views, library, cfg, cfg.k_values(len(scene.cameras)), timer)
    return scene.scene_id, runs, dict(timer.totals)


def _pool_map(fn, items, workers):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            yield from pool.map(fn, items)
    else:
        yield from map(fn, items)


def cmd_estimate(data_dir, cfg: ExperimentConfig) -> Path:
    """Estimate poses for every test scene and camera combination; one JSON per (scene, combination)."""
    index = load_dataset_index(data_dir)
    out = _ensure_dir(cfg.out)
    est_dir = out / "estimates"
    est_dir.mkdir(exist_ok=True)
    timer = _Timer()
    test = [e["scene_id"] for e in index["scenes"] if e["split"] == "test"]
    count = 0
    for scene_id, runs, t in _pool_map(_estimate_one, [(str(data_dir), s, cfg.to_dict()) for s in test], cfg.workers):
        timer.merge(t)
        for k, combos in runs.items():
            for combo, estimates in combos:
                save_estimates(est_dir / f"{scene_id}__{_combo_tag(combo)}.json", scene_id, combo[0], estimates, combo)
                count += 1
    _write_run_record(out, "estimate", cfg, timer, {"data": str(data_dir), "estimate_files": count})
    return est_dir


def cmd_eval(estimates_dir, data_dir, out_dir, adds_points: str = "vertices", figures: bool = True) -> MetricsReport:
    """Score estimate files against the dataset's ground truth; writes report.{json,csv} and curves."""
    out = _ensure_dir(out_dir)
    library = load_library(data_dir)
    evaluator = Evaluator(library, adds_points)
    timer = _Timer()
    records = []
    scenes = {}
    files = sorted(Path(estimates_dir).glob("*.json"))
    if not files:
        raise DataError(f"no estimate files in {estimates_dir}")
    with timer("eval"):
        for f in files:
            doc = load_estimates(f)
            sid = doc["scene_id"]
            if sid not in scenes:
                try:
                    scenes[sid] = load_manifest(Path(data_dir) / "scenes" / sid / "manifest.json")
                except OSError as e:
                    raise DataError(f"scene {sid}: {e}") from e
            combo = doc.get("cameras", [doc["reference_camera"]])
            records.append(evaluator.scene_record(scenes[sid], combo, doc["poses"]))
    report = evaluator.report(records)
    report.write(out)
    report.write_curves(out / "curves")
    if figures:
        plotting.plot_accuracy_curves(report, out / "curves.png")
    _write_run_record(out, "eval", None, timer, {"estimates": str(estimates_dir), "data": str(data_dir)})
    return report


# in-memory experiments --------------------------------------------------------------

def held_out_scene_indices(count: int) -> list:
    return [10 * i + 9 for i in range(count)]


def _experiment_one(args):
    cfg_dict, scene_index = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    library = default_library()
    timer = _Timer()
    with timer("generate"):
        scene = generate_scene(scene_spec(cfg, library), library, cfg.seed, scene_index)
    with timer("render"):
        rendered = render_scene(scene, library, cfg.ground_radius)
    runs = estimate_scene(scene, rendered, library, cfg, cfg.k_values(len(scene.cameras)), timer)
    evaluator = Evaluator(library, cfg.adds_points)
    with timer("eval"):
        records = {k: [(combo, ests, evaluator.scene_record(scene, combo, ests)) for combo, ests in combos]
                   for k, combos in runs.items()}
    return scene.scene_id, records, dict(timer.totals)


def run_experiment(cfg: ExperimentConfig, out_dir=None, timer=None) -> dict:
    """Generate test scenes in memory and run every requested view count.

    Returns ``{k: MetricsReport}``; with ``out_dir`` set, estimate files and
    per-k reports are written below it.
    """
    timer = timer or _Timer()
    per_k = defaultdict(list)
    items = [(cfg.to_dict(), i) for i in held_out_scene_indices(cfg.scene_count)]
    library = default_library()
    evaluator = Evaluator(library, cfg.adds_points)
    for scene_id, records, t in _pool_map(_experiment_one, items, cfg.workers):
        timer.merge(t)
        for k, recs in records.items():
            for combo, ests, rec in recs:
                per_k[k].append(rec)
                if out_dir is not None:
                    est_dir = Path(out_dir) / f"k{k}" / "estimates"
                    est_dir.mkdir(parents=True, exist_ok=True)
                    save_estimates(est_dir / f"{scene_id}__{_combo_tag(combo)}.json", scene_id, combo[0], ests, combo)
    reports = {k: evaluator.report(recs) for k, recs in sorted(per_k.items())}
    if out_dir is not None:
        for k, rep in reports.items():
            rep.write(Path(out_dir) / f"k{k}")
    return reports


def _table_row(label: dict, report: MetricsReport) -> dict:
    row = dict(label)
    for r in report.rows():
        row[f"{r['class']}_add_s_auc"] = round(r["add_s_auc"], 4)
        row[f"{r['class']}_adds_auc"] = round(r["adds_auc"], 4)
    return row


def _write_table(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def cmd_ablate_views(cfg: ExperimentConfig, figures: bool = True) -> dict:
    """AUC per view count k = 1..V on the same test scenes; writes ablation.csv."""
    cfg = cfg.replace(views="sweep")
    out = _ensure_dir(cfg.out)
    timer = _Timer()
    reports = run_experiment(cfg, out, timer)
    rows = [_table_row({"views": k}, rep) for k, rep in reports.items()]
    _write_table(out / "ablation.csv", rows)
    if figures:
        plotting.plot_view_ablation(reports, out / "ablation.png")
    _write_run_record(out, "ablate-views", cfg, timer,
                      {"overall": {str(k): rep.overall() for k, rep in reports.items()}})
    return reports


def cmd_wiggle_sweep(cfg: ExperimentConfig, sigmas=None, figures: bool = True) -> dict:
    """Metrics per camera-position jitter; fusion always uses the nominal ring poses."""
    sigmas = list(cfg.wiggle_sigmas if sigmas is None else sigmas)
    out = _ensure_dir(cfg.out)
    base = dict(cfg.rig)
    base.pop("position_sigma", None)
    base["type"] = "WiggleRing"
    timer = _Timer()
    results = {}
    rows = []
    for s in sigmas:
        sub = cfg.replace(rig={**base, "position_sigma": float(s)}, out=str(out / f"sigma_{s:g}"))
        reports = run_experiment(sub, sub.out, timer)
        k = max(reports)
        results[s] = reports[k]
        o = reports[k].overall()
        rows.append({"sigma_m": s, "views": k, "add_s_auc": round(o["add_s_auc"], 4),
                     "adds_auc": round(o["adds_auc"], 4), "add_s_2cm": round(o["add_s_2cm"], 4),
                     "adds_2cm": round(o["adds_2cm"], 4)})
    _write_table(out / "wiggle.csv", rows)
    if figures:
        plotting.plot_wiggle_sweep(rows, out / "wiggle.png")
    _write_run_record(out, "wiggle-sweep", cfg, timer, {"rows": rows})
    return results


def cmd_curve(report_path, out_dir, figures: bool = True) -> list:
    """Accuracy-threshold curve CSVs (and a figure) from a saved report.json."""
    try:
        doc = json.loads(Path(report_path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read report {report_path}: {e}") from e
    report = MetricsReport.from_dict(doc)
    out = _ensure_dir(out_dir)
    paths = report.write_curves(out)
    if figures:
        plotting.plot_accuracy_curves(report, out / "curves.png")
    return paths
