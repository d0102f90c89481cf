"""Synthetic cluttered multi-camera scenes and a z-buffer depth/segmentation renderer."""
from __future__ import annotations

import itertools
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import CameraIntrinsics, DepthImage, RigidTransform, invert, look_at
from .models import ModelLibrary

SCENE_CENTER = np.zeros(3)
GROUND_COLOR = (0.45, 0.45, 0.45)
NEAR_PLANE = 0.01


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class FixedRing:
    count: int = 3
    radius: float = 0.8
    height: float = 0.6

    def __post_init__(self):
        if self.count < 1 or self.radius <= 0 or self.height <= 0:
            raise ValueError("ring count, radius and height must be positive")


@dataclass(frozen=True)
class WiggleRing(FixedRing):
    position_sigma: float = 0.005

    def __post_init__(self):
        super().__post_init__()
        if self.position_sigma < 0:
            raise ValueError("position_sigma must be non-negative")


@dataclass(frozen=True)
class SphereQuadrant:
    count: int = 4
    radius_range: tuple = (0.7, 1.0)
    elevation_range_deg: tuple = (25.0, 65.0)

    def __post_init__(self):
        if not 1 <= self.count <= 4:
            raise ValueError("SphereQuadrant supports 1 to 4 cameras")
        lo, hi = self.radius_range
        if not 0 < lo <= hi:
            raise ValueError("radius_range must be positive and ordered")


def rig_to_dict(rig) -> dict:
    d = {"type": type(rig).__name__}
    d.update({k: (list(v) if isinstance(v, tuple) else v) for k, v in rig.__dict__.items()})
    return d


def rig_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type")
    cls = {"FixedRing": FixedRing, "WiggleRing": WiggleRing, "SphereQuadrant": SphereQuadrant}[kind]
    return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass(frozen=True)
class SceneSpec:
    class_ids: tuple
    rig: object = field(default_factory=FixedRing)
    placement_sigma: float = 0.12
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics.default)
    ground_radius: float = 0.4
    max_overlap: float = 0.3
    min_visible_pixels: int = 500
    max_resamples: int = 50


@dataclass(frozen=True)
class Camera:
    true_pose: RigidTransform
    nominal_pose: RigidTransform
    intrinsics: CameraIntrinsics


@dataclass(frozen=True)
class SceneObject:
    class_id: int
    gt_pose: RigidTransform


@dataclass(frozen=True)
class SceneInstance:
    scene_id: str
    scene_index: int
    objects: tuple
    cameras: tuple
    resample_count: int = 0

    def object_pose_in_camera(self, class_id: int, camera_index: int) -> RigidTransform:
        """Ground-truth object->camera pose using the camera's true extrinsics."""
        obj = next(o for o in self.objects if o.class_id == class_id)
        return invert(self.cameras[camera_index].true_pose) @ obj.gt_pose


@dataclass(frozen=True)
class RenderedView:
    depth: DepthImage
    color: np.ndarray
    seg: np.ndarray


def _rngs(seed: int, scene_index: int):
    ss = np.random.SeedSequence([seed, scene_index])
    objects, rig = ss.spawn(2)
    return np.random.default_rng(objects), np.random.default_rng(rig)


def place_objects(class_ids, library: ModelLibrary, sigma: float, rng, max_overlap: float = 0.3,
                  tries: int = 100):
    """Sequentially place objects with rejection of large bounding-sphere overlaps."""
    placed = []  # (class_id, center, radius, pose)
    for cid in class_ids:
        model = library[cid]
        for _ in range(tries):
            pos = rng.normal(0.0, sigma, 3) + SCENE_CENTER
            pos[2] = max(pos[2], SCENE_CENTER[2] + model.radius)
            R = Rotation.random(random_state=rng).as_matrix()
            ok = True
            for _, c, r, _ in placed:
                depth = model.radius + r - np.linalg.norm(pos - c)
                if depth > max_overlap * 2 * min(model.radius, r):
                    ok = False
                    break
            if ok:
                break
        else:
            raise PlacementError(
                f"could not place class {cid} after {tries} tries; use fewer objects or a larger placement sigma"
            )
        pose = RigidTransform(R, pos - R @ model.center)
        placed.append((cid, pos, model.radius, pose))
    return tuple(SceneObject(cid, pose) for cid, _, _, pose in placed)


def ring_cameras(rig: FixedRing, intrinsics: CameraIntrinsics, rng=None):
    cams = []
    for i in range(rig.count):
        az = 2 * np.pi * i / rig.count
        pos = SCENE_CENTER + np.array([rig.radius * np.cos(az), rig.radius * np.sin(az), rig.height])
        nominal = look_at(pos, SCENE_CENTER)
        true = nominal
        if isinstance(rig, WiggleRing):
            offset = rng.normal(0.0, rig.position_sigma, 3)
            if rig.position_sigma > 0:
                true = RigidTransform(nominal.rotation, nominal.translation + offset)
        cams.append(Camera(true, nominal, intrinsics))
    return tuple(cams)


def sphere_cameras(rig: SphereQuadrant, intrinsics: CameraIntrinsics, rng):
    quadrants = rng.permutation(4)[: rig.count]
    lo, hi = np.deg2rad(rig.elevation_range_deg)
    cams = []
    for q in quadrants:
        az = (q + rng.random()) * np.pi / 2
        el = rng.uniform(lo, hi)
        r = rng.uniform(*rig.radius_range)
        pos = SCENE_CENTER + r * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        pose = look_at(pos, SCENE_CENTER)
        cams.append(Camera(pose, pose, intrinsics))
    return tuple(cams)


def make_cameras(rig, intrinsics, rng):
    if isinstance(rig, SphereQuadrant):
        return sphere_cameras(rig, intrinsics, rng)
    return ring_cameras(rig, intrinsics, rng)


def generate_scene(spec: SceneSpec, library: ModelLibrary, seed: int, scene_index: int) -> SceneInstance:
    """Deterministic scene for ``(seed, scene_index)``.

    Object placement and camera rig draw from independent streams, so the
    same scene index yields identical objects under every rig. Placements
    are redrawn until each object covers ``min_visible_pixels`` in at least
    one camera of the default fixed ring.
    """
    if not spec.class_ids:
        raise ValueError("scene needs at least one object class")
    obj_rng, rig_rng = _rngs(seed, scene_index)
    check_cams = ring_cameras(FixedRing(), spec.intrinsics)
    resamples = 0
    while True:
        objects = place_objects(spec.class_ids, library, spec.placement_sigma, obj_rng, spec.max_overlap)
        probe = SceneInstance("", scene_index, objects, check_cams)
        counts = np.zeros(len(objects), dtype=np.int64)
        for ci in range(len(check_cams)):
            seg = render_view(probe, ci, library, ground_radius=spec.ground_radius).seg
            counts = np.maximum(counts, [np.count_nonzero(seg == o.class_id) for o in objects])
        if counts.min() >= spec.min_visible_pixels:
            break
        resamples += 1
        if resamples > spec.max_resamples:
            raise PlacementError(f"scene {scene_index}: objects stayed hidden after {resamples} resamples")
    cameras = make_cameras(spec.rig, spec.intrinsics, rig_rng)
    return SceneInstance(f"scene_{scene_index:06d}", scene_index, objects, cameras, resamples)


def is_test_scene(scene_index: int) -> bool:
    return scene_index % 10 == 9


# rendering ------------------------------------------------------------------

def _ground_triangles(radius: float, segments: int = 48):
    ang = np.linspace(0, 2 * np.pi, segments + 1)
    rim = np.column_stack([radius * np.cos(ang), radius * np.sin(ang), np.zeros_like(ang)]) + SCENE_CENTER
    c = np.broadcast_to(SCENE_CENTER, (segments, 3))
    return np.stack([c, rim[:-1], rim[1:]], axis=1)


@numba.njit(cache=True)
def _raster_kernel(u, v, z, area, u0, u1, v0, v1, W, depth, owner):
    # triangles in index order with a strict depth test: ties go to the lowest index
    for t in range(u.shape[0]):
        if area[t] == 0.0:
            continue
        inv_area = 1.0 / area[t]
        ua, ub, uc = u[t, 0], u[t, 1], u[t, 2]
        va, vb, vc = v[t, 0], v[t, 1], v[t, 2]
        for py in range(v0[t], v1[t] + 1):
            for px in range(u0[t], u1[t] + 1):
                # edge functions opposite each vertex
                l0 = ((ub - px) * (vc - py) - (uc - px) * (vb - py)) * inv_area
                l1 = ((uc - px) * (va - py) - (ua - px) * (vc - py)) * inv_area
                l2 = ((ua - px) * (vb - py) - (ub - px) * (va - py)) * inv_area
                if l0 >= 0.0 and l1 >= 0.0 and l2 >= 0.0:
                    d = 1.0 / (l0 / z[t, 0] + l1 / z[t, 1] + l2 / z[t, 2])
                    pix = py * W + px
                    if d < depth[pix]:
                        depth[pix] = d
                        owner[pix] = t


def rasterize(tris_cam, labels, colors, K: CameraIntrinsics):
    """Z-buffer rasterization of camera-frame triangles (T, 3, 3).

    Samples at integer pixel centers; depth is the perspective-correct
    camera z of the nearest surface. Back faces and triangles reaching the
    near plane are dropped.
    """
    H, W = K.height, K.width
    depth = np.full(H * W, np.inf)
    owner = np.full(H * W, -1, dtype=np.int64)
    tris_cam = np.asarray(tris_cam, dtype=np.float64)
    a, b, c = tris_cam[:, 0], tris_cam[:, 1], tris_cam[:, 2]
    front = np.einsum("ij,ij->i", np.cross(b - a, c - a), a) < 0
    keep = np.nonzero(front & (tris_cam[:, :, 2].min(axis=1) > NEAR_PLANE))[0]
    if len(keep):
        t = tris_cam[keep]
        z = t[:, :, 2]
        u = K.fx * t[:, :, 0] / z + K.cx
        v = K.fy * t[:, :, 1] / z + K.cy
        u0 = np.clip(np.ceil(u.min(axis=1)), 0, W).astype(np.int64)
        u1 = np.clip(np.floor(u.max(axis=1)), -1, W - 1).astype(np.int64)
        v0 = np.clip(np.ceil(v.min(axis=1)), 0, H).astype(np.int64)
        v1 = np.clip(np.floor(v.max(axis=1)), -1, H - 1).astype(np.int64)
        area = (u[:, 1] - u[:, 0]) * (v[:, 2] - v[:, 0]) - (u[:, 2] - u[:, 0]) * (v[:, 1] - v[:, 0])
        _raster_kernel(u, v, np.ascontiguousarray(z), area, u0, u1, v0, v1, W, depth, owner)
        hit = owner >= 0
        owner[hit] = keep[owner[hit]]
    hit = owner >= 0
    out_depth = np.where(hit, depth, 0.0).reshape(H, W)
    seg = np.zeros(H * W, dtype=np.uint16)
    seg[hit] = np.asarray(labels)[owner[hit]]
    color = np.zeros((H * W, 3))
    color[hit] = np.asarray(colors, dtype=np.float64)[owner[hit]]
    return out_depth, seg.reshape(H, W), color.reshape(H, W, 3)


def render_view(scene: SceneInstance, camera_index: int, library: ModelLibrary,
                ground_radius: float | None = 0.4) -> RenderedView:
    """Render depth, flat color and class segmentation from the camera's true pose."""
    cam = scene.cameras[camera_index]
    world_to_cam = invert(cam.true_pose)
    tris, labels, colors = [], [], []
    for obj in scene.objects:
        m = library[obj.class_id]
        v = world_to_cam.apply(obj.gt_pose.apply(m.mesh.vertices))
        tris.append(v[m.mesh.triangles])
        labels.append(np.full(len(m.mesh.triangles), obj.class_id))
        colors.append(np.tile(m.mesh.base_color, (len(m.mesh.triangles), 1)))
    if ground_radius:
        g = _ground_triangles(ground_radius)
        tris.append(world_to_cam.apply(g))
        labels.append(np.zeros(len(g), dtype=np.int64))
        colors.append(np.tile(GROUND_COLOR, (len(g), 1)))
    depth, seg, color = rasterize(np.concatenate(tris), np.concatenate(labels), np.concatenate(colors),
                                  cam.intrinsics)
    return RenderedView(DepthImage(cam.intrinsics, depth), color, seg)


def enumerate_camera_combinations(view_count_total: int, k: int):
    """Ordered camera index lists (0-based); the first index sets the prediction frame.

    With ``k == V`` every camera takes the lead once in a cyclic rotation;
    otherwise each k-subset appears once in ascending order.
    """
    V = view_count_total
    if not 1 <= k:
        raise ValueError("k must be at least 1")
    if k > V:
        raise ValueError(f"cannot use {k} views out of {V}")
    if k == V:
        return [[(i + j) % V for j in range(V)] for i in range(V)]
    return [list(c) for c in itertools.combinations(range(V), k)]


# serialization ----------------------------------------------------------------

def _pose_to_dict(p: RigidTransform) -> dict:
    return {"quat_wxyz": p.quat_wxyz().tolist(), "t_xyz": p.translation.tolist()}


def _pose_from_dict(d: dict) -> RigidTransform:
    return RigidTransform.from_quat_wxyz(d["quat_wxyz"], d["t_xyz"])


def scene_to_dict(scene: SceneInstance) -> dict:
    return {
        "scene_id": scene.scene_id,
        "scene_index": scene.scene_index,
        "resample_count": scene.resample_count,
        "objects": [{"class_id": o.class_id, "pose": _pose_to_dict(o.gt_pose)} for o in scene.objects],
        "cameras": [{"true_pose": _pose_to_dict(c.true_pose), "nominal_pose": _pose_to_dict(c.nominal_pose),
                     "intrinsics": c.intrinsics.to_dict()} for c in scene.cameras],
    }


def scene_from_dict(d: dict) -> SceneInstance:
    return SceneInstance(
        d["scene_id"], int(d.get("scene_index", -1)),
        tuple(SceneObject(int(o["class_id"]), _pose_from_dict(o["pose"])) for o in d["objects"]),
        tuple(Camera(_pose_from_dict(c["true_pose"]), _pose_from_dict(c["nominal_pose"]),
                     CameraIntrinsics.from_dict(c["intrinsics"])) for c in d["cameras"]),
        int(d.get("resample_count", 0)),
    )


def save_manifest(path, scene: SceneInstance):
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=1))


def load_manifest(path) -> SceneInstance:
    return scene_from_dict(json.loads(Path(path).read_text()))


class RasterError(ValueError):
    pass


def _write_raster(path, magic: bytes, data, dtype):
    data = np.ascontiguousarray(data, dtype=dtype)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(magic + struct.pack("<II", w, h) + data.tobytes())


def _read_raster(path, magic: bytes, dtype):
    raw = Path(path).read_bytes()
    if raw[:4] != magic:
        raise RasterError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    w, h = struct.unpack("<II", raw[4:12])
    expected = 12 + w * h * np.dtype(dtype).itemsize
    if len(raw) != expected:
        raise RasterError(f"{path}: size {len(raw)} does not match {w}x{h} raster ({expected} bytes)")
    return np.frombuffer(raw, dtype=dtype, offset=12).reshape(h, w).copy()


def write_depth(path, depth):
    _write_raster(path, b"MVDZ", depth, "<f4")


def read_depth(path) -> np.ndarray:
    return _read_raster(path, b"MVDZ", "<f4").astype(np.float64)


def write_seg(path, seg):
    _write_raster(path, b"MVSG", seg, "<u2")


def read_seg(path) -> np.ndarray:
    return _read_raster(path, b"MVSG", "<u2")
