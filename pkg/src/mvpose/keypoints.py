"""Farthest point sampling of target keypoints and ground-truth vote offsets."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import RigidTransform
from .mesh import TriangleMesh, sample_surface

NUM_KEYPOINTS = 8
MIN_VERTEX_CANDIDATES = 64
SURFACE_CANDIDATES = 2048


def farthest_point_sample(candidates, m: int) -> np.ndarray:
    """Greedy FPS; returns the indices of the ``m`` selected candidates in order.

    The first pick is the candidate farthest from the candidates' AABB
    midpoint. Ties go to the lowest candidate index (``np.argmax`` semantics).
    """
    pts = np.asarray(candidates, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if m < 1:
        raise ValueError("m must be at least 1")
    if n < m:
        raise ValueError(f"cannot select {m} points from {n} candidates")
    mid = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
    selected = [int(np.argmax(np.linalg.norm(pts - mid, axis=1)))]
    min_dist = np.linalg.norm(pts - pts[selected[0]], axis=1)
    for _ in range(m - 1):
        nxt = int(np.argmax(min_dist))
        selected.append(nxt)
        min_dist = np.minimum(min_dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return np.array(selected)


def keypoint_candidates(mesh: TriangleMesh) -> np.ndarray:
    if len(mesh.vertices) >= MIN_VERTEX_CANDIDATES:
        return mesh.vertices
    return sample_surface(mesh, SURFACE_CANDIDATES, seed=0).positions


def select_keypoints(mesh: TriangleMesh, m: int = NUM_KEYPOINTS) -> np.ndarray:
    cand = keypoint_candidates(mesh)
    return cand[farthest_point_sample(cand, m)]


def gt_offsets(points, instance_pose: RigidTransform, model):
    """Offsets from each point to the posed model center and keypoints.

    ``model`` is anything with ``keypoints`` (M, 3) and ``center`` (3,) in
    the object frame, normally an ``ObjectModel``.

    Returns ``(center_offsets (N, 3), keypoint_offsets (N, M, 3))`` with
    ``keypoint_offsets[i, j] = pose(keypoints[j]) - points[i]``.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    kp = instance_pose.apply(np.asarray(model.keypoints, dtype=np.float64))
    c = instance_pose.apply(np.asarray(model.center, dtype=np.float64))
    return c[None, :] - p, kp[None, :, :] - p[:, None, :]


def save_keypoints(path, class_id: int, keypoints):
    Path(path).write_text(json.dumps(
        {"class_id": int(class_id), "keypoints": np.asarray(keypoints).tolist()}, indent=1))


def load_keypoints(path):
    d = json.loads(Path(path).read_text())
    kp = np.array(d["keypoints"], dtype=np.float64)
    if kp.shape != (NUM_KEYPOINTS, 3):
        raise ValueError(f"{path}: expected {NUM_KEYPOINTS} keypoints, got shape {kp.shape}")
    return int(d["class_id"]), kp
