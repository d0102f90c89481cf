"""Mean-shift vote clustering, center-based segmentation refinement, keypoint aggregation."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .fusion import FusedCloud
from .oracle import PredictionBundle

DEFAULT_MIN_SUPPORT = 10
MIN_REJECT_RADIUS = 0.03


@dataclass(frozen=True)
class MeanShiftConfig:
    bandwidth: float = 0.03
    convergence_tol: float = 1e-5
    max_iterations: int = 60
    merge_radius: float | None = None  # defaults to bandwidth / 2

    def __post_init__(self):
        if self.merge_radius is None:
            object.__setattr__(self, "merge_radius", self.bandwidth / 2)
        if min(self.bandwidth, self.convergence_tol, self.merge_radius) <= 0 or self.max_iterations < 1:
            raise ValueError("mean-shift parameters must be positive")
        if self.merge_radius > self.bandwidth:
            raise ValueError("merge_radius must not exceed bandwidth")


@dataclass
class MeanShiftResult:
    modes: np.ndarray  # (K, 3), sorted by descending weight
    assignment: np.ndarray  # (N,) index of the nearest mode per vote
    mode_weights: np.ndarray  # (K,) number of trajectories ending in each mode


@numba.njit(cache=True, fastmath={"reassoc", "nsz", "contract"})
def _ball_means(seeds, votes_t, r2):
    # each seed is reduced independently over the same sorted votes, so the
    # (vectorized) summation order never depends on batching or input order
    x, y, z = votes_t[0], votes_t[1], votes_t[2]
    out = np.empty_like(seeds)
    for i in range(seeds.shape[0]):
        sx, sy, sz = seeds[i, 0], seeds[i, 1], seeds[i, 2]
        ax = ay = az = n = 0.0
        for j in range(x.shape[0]):
            dx, dy, dz = x[j] - sx, y[j] - sy, z[j] - sz
            w = 1.0 if dx * dx + dy * dy + dz * dz <= r2 else 0.0
            ax += w * x[j]
            ay += w * y[j]
            az += w * z[j]
            n += w
        out[i, 0], out[i, 1], out[i, 2] = ax / n, ay / n, az / n
    return out


def _lex_order(weights, points):
    # descending weight, then ascending x, y, z
    return np.lexsort((points[:, 2], points[:, 1], points[:, 0], -weights))


def _collapse(pos, mult, done):
    """Merge bitwise-identical positions, summing multiplicities; a group is done when all members are."""
    order = np.lexsort((pos[:, 2], pos[:, 1], pos[:, 0]))
    p = pos[order]
    first = np.ones(len(p), dtype=bool)
    first[1:] = (p[1:] != p[:-1]).any(axis=1)
    if first.all():
        return p, mult[order], done[order]
    group = np.cumsum(first) - 1
    mult = np.bincount(group, weights=mult[order])
    pending = np.bincount(group, weights=~done[order])
    return p[first], mult, pending == 0


def mean_shift(votes, cfg: MeanShiftConfig = MeanShiftConfig()) -> MeanShiftResult:
    """Flat-kernel mean shift seeded at every vote.

    Trajectories that land on bitwise-identical positions share the same
    ball from then on, so they are collapsed and carried with a multiplicity.
    """
    raw = np.asarray(votes, dtype=np.float64).reshape(-1, 3)
    if len(raw) == 0:
        raise ValueError("mean shift needs at least one vote")
    # sorted input makes every sum independent of the caller's vote order
    X = raw[np.lexsort((raw[:, 2], raw[:, 1], raw[:, 0]))]
    origin = X.mean(axis=0)
    X = X - origin
    Xt = np.ascontiguousarray(X.T)
    r2 = cfg.bandwidth * cfg.bandwidth
    pos, mult, done = _collapse(X.copy(), np.ones(len(X)), np.zeros(len(X), dtype=bool))
    for _ in range(cfg.max_iterations):
        act = np.nonzero(~done)[0]
        if len(act) == 0:
            break
        new = _ball_means(pos[act], Xt, r2)
        shift = np.linalg.norm(new - pos[act], axis=1)
        pos[act] = new
        done[act] = shift < cfg.convergence_tol
        pos, mult, done = _collapse(pos, mult, done)

    order = _lex_order(mult, pos)
    modes, weights = [], []
    for i in order:
        if modes:
            d = np.linalg.norm(np.asarray(modes) - pos[i], axis=1)
            j = int(np.argmin(d))
            if d[j] <= cfg.merge_radius:
                w = weights[j] + mult[i]
                modes[j] = (weights[j] * modes[j] + mult[i] * pos[i]) / w
                weights[j] = w
                continue
        modes.append(pos[i].copy())
        weights.append(mult[i])
    modes, weights = np.asarray(modes), np.asarray(weights)
    order = _lex_order(weights, modes)
    modes, weights = modes[order], weights[order]
    d2 = ((raw[:, None, :] - origin - modes[None, :, :]) ** 2).sum(axis=-1)
    return MeanShiftResult(modes + origin, np.argmin(d2, axis=1), weights)


@dataclass
class InstanceHypothesis:
    class_id: int
    center: np.ndarray
    support: np.ndarray  # indices into the fused cloud
    keypoints_pred: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "class_id": int(self.class_id),
            "center": self.center.tolist(),
            "keypoints": None if self.keypoints_pred is None else self.keypoints_pred.tolist(),
            "support_count": int(len(self.support)),
        }


def cluster_centers(bundle: PredictionBundle, cloud: FusedCloud, cfg: MeanShiftConfig = MeanShiftConfig(),
                    min_support: int = DEFAULT_MIN_SUPPORT) -> dict:
    """Top mean-shift mode of center votes per predicted class -> {class_id: center}."""
    if len(bundle) != len(cloud.points):
        raise ValueError("bundle and cloud sizes differ")
    pts = cloud.points.positions
    centers = {}
    for cid in np.unique(bundle.labels):
        if cid == 0:
            continue
        sel = bundle.labels == cid
        if sel.sum() < min_support:
            continue
        centers[int(cid)] = mean_shift(pts[sel] + bundle.center_offsets[sel], cfg).modes[0]
    return centers


def default_reject_radius(model_radius: float) -> float:
    return max(MIN_REJECT_RADIUS, 0.5 * model_radius)


def refine_segmentation(bundle: PredictionBundle, cloud: FusedCloud, centers: dict, reject_radius) -> np.ndarray:
    """Keep a point of class c iff its center vote lies within ``reject_radius[c]`` of c's center.

    ``reject_radius`` maps class id to meters; a callable is also accepted.
    Points of classes without a center are dropped.
    """
    votes = cloud.points.positions + bundle.center_offsets
    keep = np.zeros(len(bundle), dtype=bool)
    for cid, center in centers.items():
        r = reject_radius(cid) if callable(reject_radius) else reject_radius[cid]
        sel = bundle.labels == cid
        keep[sel] = np.linalg.norm(votes[sel] - center, axis=1) <= r
    return keep


def predict_keypoints(bundle: PredictionBundle, cloud: FusedCloud, mask, cfg: MeanShiftConfig = MeanShiftConfig(),
                      classes=None) -> dict:
    """Per class and keypoint, the top mode of masked keypoint votes -> {class_id: (M, 3)}."""
    pts = cloud.points.positions
    out = {}
    if classes is None:
        classes = [int(c) for c in np.unique(bundle.labels[mask]) if c != 0]
    for cid in classes:
        sel = mask & (bundle.labels == cid)
        if not sel.any():
            continue
        offs = bundle.keypoint_offsets[sel]
        p = pts[sel]
        out[int(cid)] = np.stack([mean_shift(p + offs[:, j], cfg).modes[0] for j in range(offs.shape[1])])
    return out


def vote(bundle: PredictionBundle, cloud: FusedCloud, library, cfg: MeanShiftConfig = MeanShiftConfig(),
         min_support: int = DEFAULT_MIN_SUPPORT, reject_radius=None) -> list:
    """Centers -> refined mask -> keypoints, as one hypothesis per detected class."""
    centers = cluster_centers(bundle, cloud, cfg, min_support)
    if reject_radius is None:
        reject_radius = {cid: default_reject_radius(library[cid].radius) for cid in centers}
    mask = refine_segmentation(bundle, cloud, centers, reject_radius)
    keypoints = predict_keypoints(bundle, cloud, mask, cfg, classes=sorted(centers))
    return [
        InstanceHypothesis(cid, centers[cid], np.nonzero(mask & (bundle.labels == cid))[0], keypoints[cid])
        for cid in sorted(keypoints)
    ]


def save_hypotheses(path, hypotheses):
    Path(path).write_text(json.dumps([h.to_dict() for h in hypotheses], indent=1))
