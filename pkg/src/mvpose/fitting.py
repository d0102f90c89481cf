"""Closed-form least-squares rigid fit of model keypoints to predicted keypoints."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import RigidTransform

LOW_CONFIDENCE_RESIDUAL = 0.05


class DegenerateKeypointsError(ValueError):
    pass


@dataclass
class PoseEstimate:
    class_id: int
    pose: RigidTransform  # object -> reference camera
    residual_rms: float

    @property
    def low_confidence(self) -> bool:
        return self.residual_rms > LOW_CONFIDENCE_RESIDUAL

    def to_dict(self) -> dict:
        return {
            "class_id": int(self.class_id),
            "quat_wxyz": self.pose.quat_wxyz().tolist(),
            "t_xyz": self.pose.translation.tolist(),
            "residual_rms": float(self.residual_rms),
            "low_confidence": self.low_confidence,
        }


def least_squares_fit(model_kps, predicted_kps, class_id: int = 0) -> PoseEstimate:
    """Minimize sum ||k_hat_i - (R k_i + t)||^2 over SE(3) via SVD with a reflection guard."""
    k = np.asarray(model_kps, dtype=np.float64).reshape(-1, 3)
    kh = np.asarray(predicted_kps, dtype=np.float64).reshape(-1, 3)
    if k.shape != kh.shape:
        raise ValueError("model and predicted keypoints must have the same shape")
    if len(k) < 3:
        raise DegenerateKeypointsError(f"need at least 3 keypoints, got {len(k)}")
    ck, ckh = k.mean(axis=0), kh.mean(axis=0)
    A, B = k - ck, kh - ckh
    if np.linalg.svd(A, compute_uv=False)[1] < 1e-12:
        raise DegenerateKeypointsError("model keypoints are collinear")
    U, _, Vt = np.linalg.svd(A.T @ B)
    V = Vt.T
    d = np.sign(np.linalg.det(V @ U.T)) or 1.0
    R = V @ np.diag([1.0, 1.0, d]) @ U.T
    t = ckh - R @ ck
    resid = kh - (k @ R.T + t)
    rms = float(np.sqrt((resid ** 2).sum() / len(k)))
    return PoseEstimate(class_id, RigidTransform(R, t), rms)


def estimate_poses(hypotheses, library) -> list:
    """One fit per hypothesis against its class's model keypoints."""
    out = []
    for h in hypotheses:
        if h.class_id not in library:
            raise KeyError(f"class {h.class_id} is not in the model library")
        out.append(least_squares_fit(library[h.class_id].keypoints, h.keypoints_pred, h.class_id))
    return out


def save_estimates(path, scene_id: str, reference_camera: int, estimates, cameras=None):
    doc = {"scene_id": scene_id, "reference_camera": int(reference_camera)}
    if cameras is not None:
        doc["cameras"] = [int(c) for c in cameras]
    doc["poses"] = [e.to_dict() for e in estimates]
    Path(path).write_text(json.dumps(doc, indent=1))


def load_estimates(path) -> dict:
    doc = json.loads(Path(path).read_text())
    doc["poses"] = [
        PoseEstimate(int(p["class_id"]), RigidTransform.from_quat_wxyz(p["quat_wxyz"], p["t_xyz"]),
                     float(p["residual_rms"]))
        for p in doc["poses"]
    ]
    return doc
