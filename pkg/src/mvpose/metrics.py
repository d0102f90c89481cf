"""ADD, ADD-S, ADD(-S), accuracy-threshold AUC and <2 cm rates."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

AUC_MAX_THRESHOLD = 0.10
SUCCESS_THRESHOLD = 0.02


def _check_model(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("model has no points")
    return pts


def add_distance(model_points, gt_pose, pred_pose) -> float:
    pts = _check_model(model_points)
    return float(np.linalg.norm(pred_pose.apply(pts) - gt_pose.apply(pts), axis=1).mean())


def add_s_distance(model_points, gt_pose, pred_pose) -> float:
    pts = _check_model(model_points)
    gt, pred = gt_pose.apply(pts), pred_pose.apply(pts)
    _, idx = cKDTree(gt).query(pred, k=1)
    # recompute with the same arithmetic as a brute-force scan
    return float(np.sqrt(((pred - gt[idx]) ** 2).sum(axis=1)).mean())


def combined_distance(model, gt_pose, pred_pose, points=None) -> float:
    """ADD-S for symmetric models, ADD otherwise."""
    pts = model.mesh.vertices if points is None else points
    fn = add_s_distance if model.symmetric else add_distance
    return fn(pts, gt_pose, pred_pose)


def auc(distances, max_threshold: float = AUC_MAX_THRESHOLD) -> float:
    """Area under accuracy(theta) = P(d < theta) on [0, max_threshold], in percent.

    The step function integrates in closed form: each distance contributes
    ``max(0, 1 - d / max_threshold)``. Misses are ``inf`` and contribute 0.
    """
    if max_threshold <= 0:
        raise ValueError("max_threshold must be positive")
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise ValueError("cannot compute AUC of an empty list")
    if np.isnan(d).any():
        raise ValueError("distances must not be NaN")
    return float(100.0 * np.clip(1.0 - d / max_threshold, 0.0, 1.0).mean())


def percent_below(distances, threshold: float = SUCCESS_THRESHOLD) -> float:
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise ValueError("cannot compute a rate over an empty list")
    return float(100.0 * np.count_nonzero(d < threshold) / d.size)


def accuracy_curve(distances, max_threshold: float = AUC_MAX_THRESHOLD, steps: int = 1000):
    thresholds = np.linspace(0.0, max_threshold, steps + 1)
    d = np.sort(np.asarray(distances, dtype=np.float64))
    acc = np.searchsorted(d, thresholds, side="left") / len(d)
    return thresholds, acc


@dataclass
class MetricsReport:
    """Per-class and pooled (``ALL``) metrics; distances are meters, ``inf`` for misses."""

    add_s: dict = field(default_factory=dict)  # class name -> list of ADD-S distances
    add_combined: dict = field(default_factory=dict)  # class name -> list of ADD(-S) distances
    scenes: list = field(default_factory=list)  # per-scene raw records

    def add(self, name: str, d_adds: float, d_combined: float):
        self.add_s.setdefault(name, []).append(d_adds)
        self.add_combined.setdefault(name, []).append(d_combined)

    def rows(self) -> list:
        names = sorted(self.add_s)
        rows = []
        for name in names + ["ALL"]:
            if name == "ALL":
                a = [x for n in names for x in self.add_s[n]]
                c = [x for n in names for x in self.add_combined[n]]
            else:
                a, c = self.add_s[name], self.add_combined[name]
            if not a:
                continue
            rows.append({
                "class": name,
                "add_s_auc": auc(a),
                "adds_auc": auc(c),
                "add_s_2cm": percent_below(a),
                "adds_2cm": percent_below(c),
                "count": len(a),
            })
        return rows

    def overall(self) -> dict:
        return next(r for r in self.rows() if r["class"] == "ALL")

    def to_dict(self) -> dict:
        def enc(v):
            return None if math.isinf(v) else v
        return {
            "rows": self.rows(),
            "scenes": [
                {**s, "add_s": [enc(x) for x in s["add_s"]], "adds": [enc(x) for x in s["adds"]]}
                for s in self.scenes
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> MetricsReport:
        rep = cls()
        for s in doc["scenes"]:
            add_s = [math.inf if x is None else x for x in s["add_s"]]
            adds = [math.inf if x is None else x for x in s["adds"]]
            rep.scenes.append({**s, "add_s": add_s, "adds": adds})
            for name, a, c in zip(s["classes"], add_s, adds):
                rep.add(name, a, c)
        return rep

    def write(self, out_dir, stem: str = "report"):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=1))
        with open(out_dir / f"{stem}.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["class", "add_s_auc", "adds_auc", "add_s_2cm", "adds_2cm"])
            for r in self.rows():
                w.writerow([r["class"]] + [f"{r[k]:.4f}" for k in ("add_s_auc", "adds_auc", "add_s_2cm", "adds_2cm")])

    def write_curves(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for name in sorted(self.add_s) + ["ALL"]:
            a = [x for n in sorted(self.add_s) for x in self.add_s[n]] if name == "ALL" else self.add_s[name]
            c = ([x for n in sorted(self.add_s) for x in self.add_combined[n]] if name == "ALL"
                 else self.add_combined[name])
            th, acc_s = accuracy_curve(a)
            _, acc_c = accuracy_curve(c)
            path = out_dir / f"curve_{name}.csv"
            with open(path, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["threshold_m", "accuracy", "accuracy_adds"])
                for row in zip(th, acc_s, acc_c):
                    w.writerow([f"{row[0]:.5f}", f"{row[1]:.6f}", f"{row[2]:.6f}"])
            paths.append(path)
        return paths
