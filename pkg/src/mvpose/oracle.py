"""Ground-truth surrogate for the segmentation, center and keypoint heads."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fusion import FusedCloud
from .geometry import invert
from .keypoints import NUM_KEYPOINTS, gt_offsets
from .models import ModelLibrary
from .simulator import SceneInstance


@dataclass(frozen=True)
class OracleConfig:
    offset_sigma: float = 0.0
    label_flip_rate: float = 0.0
    seed: int = 0
    # "reference": every point votes for the true keypoints in the reference camera frame.
    # "source": offsets are exact in the point's own camera and inherit that view's
    # registration error when carried into the reference frame.
    offset_frame: str = "reference"

    def __post_init__(self):
        if self.offset_frame not in ("reference", "source"):
            raise ValueError("offset_frame must be 'reference' or 'source'")
        if self.offset_sigma < 0:
            raise ValueError("offset_sigma must be non-negative")
        if not 0.0 <= self.label_flip_rate <= 1.0:
            raise ValueError("label_flip_rate must lie in [0, 1]")


@dataclass
class PredictionBundle:
    labels: np.ndarray  # (N,) class per point, 0 = background
    center_offsets: np.ndarray  # (N, 3)
    keypoint_offsets: np.ndarray  # (N, M, 3)

    def __post_init__(self):
        n = len(self.labels)
        if self.center_offsets.shape != (n, 3) or self.keypoint_offsets.shape[0] != n:
            raise ValueError("bundle arrays must have one row per point")

    def __len__(self):
        return len(self.labels)

    def save(self, path):
        n, m = len(self), self.keypoint_offsets.shape[1]
        rec = np.empty(n, dtype=_record_dtype(m))
        rec["label"] = self.labels
        rec["center"] = self.center_offsets
        rec["keypoints"] = self.keypoint_offsets.reshape(n, m * 3)
        with open(path, "wb") as f:
            f.write(b"MVPB" + struct.pack("<II", n, m) + rec.tobytes())

    @classmethod
    def load(cls, path) -> PredictionBundle:
        raw = Path(path).read_bytes()
        if raw[:4] != b"MVPB":
            raise ValueError(f"{path}: not a prediction bundle")
        n, m = struct.unpack("<II", raw[4:12])
        rec = np.frombuffer(raw, dtype=_record_dtype(m), count=n, offset=12)
        return cls(rec["label"].astype(np.int64), rec["center"].astype(np.float64),
                   rec["keypoints"].astype(np.float64).reshape(n, m, 3))


def _record_dtype(m: int) -> np.dtype:
    return np.dtype([("label", "<u2"), ("center", "<f4", (3,)), ("keypoints", "<f4", (3 * m,))])


def true_labels(cloud: FusedCloud, segs) -> np.ndarray:
    """Class of every fused point read from its source view's segmentation raster."""
    prov = cloud.points.provenance
    labels = np.zeros(len(prov), dtype=np.int64)
    for v in range(cloud.view_count):
        sel = prov[:, 0] == v
        seg = segs[v]
        r, c = prov[sel, 1], prov[sel, 2]
        if len(r) and (r.min() < 0 or c.min() < 0 or r.max() >= seg.shape[0] or c.max() >= seg.shape[1]):
            raise IndexError(f"view {v}: provenance pixel outside the {seg.shape} segmentation raster")
        labels[sel] = seg[r, c]
    return labels


def oracle_predict(cloud: FusedCloud, scene: SceneInstance, segs, library: ModelLibrary,
                   cfg: OracleConfig) -> PredictionBundle:
    """Corrupted ground truth in the reference frame.

    Points on the background get zero offsets; flipped labels keep the
    offsets of the true object. See ``OracleConfig.offset_frame`` for how
    miscalibrated (nominal != true) cameras are treated.
    """
    pts = cloud.points.positions
    n = len(pts)
    labels = true_labels(cloud, segs)
    center = np.zeros((n, 3))
    kps = np.zeros((n, NUM_KEYPOINTS, 3))
    present = {o.class_id for o in scene.objects}
    for cid in np.unique(labels):
        if cid != 0 and cid not in present:
            raise ValueError(f"segmentation names class {cid}, which is not in scene {scene.scene_id}")
    if cfg.offset_frame == "reference":
        for cid in np.unique(labels):
            if cid == 0:
                continue
            sel = labels == cid
            pose = scene.object_pose_in_camera(int(cid), cloud.camera_ids[0])
            center[sel], kps[sel] = gt_offsets(pts[sel], pose, library[int(cid)])
    else:
        prov_view = cloud.points.provenance[:, 0]
        for v in range(cloud.view_count):
            ref_from_view = cloud.ref_from_view(v)
            cam_from_ref = invert(ref_from_view)
            in_view = prov_view == v
            for cid in np.unique(labels[in_view]):
                if cid == 0:
                    continue
                sel = in_view & (labels == cid)
                pose = scene.object_pose_in_camera(int(cid), cloud.camera_ids[v])
                c_off, k_off = gt_offsets(cam_from_ref.apply(pts[sel]), pose, library[int(cid)])
                center[sel] = c_off @ ref_from_view.rotation.T
                kps[sel] = k_off @ ref_from_view.rotation.T

    rng = np.random.default_rng(cfg.seed)
    center_noise = rng.normal(0.0, cfg.offset_sigma, (n, 3))
    kp_noise = rng.normal(0.0, cfg.offset_sigma, (n, NUM_KEYPOINTS, 3))
    flip = rng.random(n) < cfg.label_flip_rate
    label_set = np.array([0] + library.class_ids)
    shift = rng.integers(1, len(label_set), n)

    on_object = labels != 0
    if cfg.offset_sigma > 0:
        center[on_object] += center_noise[on_object]
        kps[on_object] += kp_noise[on_object]
    pred = labels.copy()
    if flip.any():
        pos = np.searchsorted(label_set, labels[flip])
        pred[flip] = label_set[(pos + shift[flip]) % len(label_set)]
    return PredictionBundle(pred, center, kps)
