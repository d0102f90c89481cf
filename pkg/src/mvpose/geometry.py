"""Rigid transforms, pinhole cameras, depth back-projection and normals.

Camera frames follow the x-right, y-down, z-forward convention. Extrinsics
are always stored camera->world.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation


class InsufficientCloudError(ValueError):
    """Raised when a cloud is too small for the requested neighborhood."""


@dataclass(frozen=True)
class RigidTransform:
    """x -> R x + t."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_matrix(cls, T) -> RigidTransform:
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_quat_wxyz(cls, quat, translation) -> RigidTransform:
        w, x, y, z = quat
        return cls(Rotation.from_quat([x, y, z, w]).as_matrix(), translation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def quat_wxyz(self) -> np.ndarray:
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        q = np.array([w, x, y, z])
        # canonical hemisphere so serialization is stable
        return -q if q[0] < 0 else q

    def apply(self, points) -> np.ndarray:
        """Map an (..., 3) array of points."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def is_valid(self, atol: float = 1e-9) -> bool:
        R = self.rotation
        return bool(
            np.allclose(R.T @ R, np.eye(3), rtol=0, atol=atol)
            and abs(np.linalg.det(R) - 1.0) <= atol
            and np.all(np.isfinite(self.translation))
        )

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform that applies ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    Rt = t.rotation.T
    return RigidTransform(Rt, -Rt @ t.translation)


def rotation_geodesic(Ra, Rb) -> float:
    """Angle in radians of the relative rotation Ra^T Rb."""
    c = (np.trace(np.asarray(Ra).T @ np.asarray(Rb)) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera->world pose of a camera at ``position`` whose z axis points at ``target``."""
    position = np.asarray(position, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - position
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        # looking straight along the up vector
        x = np.cross(z, (0.0, 1.0, 0.0))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return RigidTransform(np.column_stack([x, y, z]), position)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def default(cls) -> CameraIntrinsics:
        return cls(fx=580.0, fy=580.0, cx=319.5, cy=239.5, width=640, height=480)

    def project(self, points) -> np.ndarray:
        """Camera-frame points (N, 3) -> pixel coordinates (N, 2) as (u, v)."""
        p = np.asarray(points, dtype=np.float64)
        u = self.fx * p[:, 0] / p[:, 2] + self.cx
        v = self.fy * p[:, 1] / p[:, 2] + self.cy
        return np.column_stack([u, v])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> CameraIntrinsics:
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class DepthImage:
    intrinsics: CameraIntrinsics
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError(
                f"depth shape {self.data.shape} does not match intrinsics "
                f"{(self.intrinsics.height, self.intrinsics.width)}"
            )


@dataclass
class PointCloud:
    """Structure-of-arrays point cloud.

    ``normals`` rows are NaN where unset. ``provenance`` rows are
    (view index, pixel row, pixel col).
    """

    positions: np.ndarray
    normals: np.ndarray | None = None
    colors: np.ndarray | None = None
    provenance: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        if self.normals is None:
            self.normals = np.full((n, 3), np.nan)
        if self.colors is None:
            self.colors = np.zeros((n, 3))
        if self.provenance is None:
            self.provenance = np.full((n, 3), -1, dtype=np.int64)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(n, 3)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)
        self.provenance = np.asarray(self.provenance, dtype=np.int64).reshape(n, 3)

    def __len__(self) -> int:
        return len(self.positions)

    def subset(self, idx) -> PointCloud:
        return PointCloud(self.positions[idx], self.normals[idx], self.colors[idx], self.provenance[idx])

    @staticmethod
    def concatenate(clouds) -> PointCloud:
        clouds = list(clouds)
        if not clouds:
            return PointCloud(np.zeros((0, 3)))
        return PointCloud(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.normals for c in clouds]),
            np.concatenate([c.colors for c in clouds]),
            np.concatenate([c.provenance for c in clouds]),
        )


def backproject(depth: DepthImage, min_depth: float = 0.01, max_depth: float = 10.0,
                view_index: int = 0, color=None) -> PointCloud:
    """Lift every pixel with ``min_depth < d <= max_depth`` into the camera frame."""
    if not (min_depth >= 0 and max_depth > min_depth):
        raise ValueError("need 0 <= min_depth < max_depth")
    K = depth.intrinsics
    d = depth.data
    rows, cols = np.nonzero((d > min_depth) & (d <= max_depth))
    z = d[rows, cols].astype(np.float64)
    x = (cols - K.cx) * z / K.fx
    y = (rows - K.cy) * z / K.fy
    prov = np.column_stack([np.full(len(rows), view_index), rows, cols])
    colors = None if color is None else np.asarray(color, dtype=np.float64)[rows, cols]
    return PointCloud(np.column_stack([x, y, z]), colors=colors, provenance=prov)


def transform_cloud(cloud: PointCloud, t: RigidTransform) -> PointCloud:
    return PointCloud(
        t.apply(cloud.positions),
        cloud.normals @ t.rotation.T,
        cloud.colors.copy(),
        cloud.provenance.copy(),
    )


def estimate_normals(cloud: PointCloud, k: int = 16, viewpoint=(0.0, 0.0, 0.0)) -> PointCloud:
    """PCA normals over the k nearest neighbors, oriented toward ``viewpoint``.

    The neighborhood includes the query point itself plus its k nearest
    neighbors.
    """
    if k < 3:
        raise ValueError("k must be at least 3")
    n = len(cloud)
    if n < k + 1:
        raise InsufficientCloudError(f"cloud has {n} points, need at least {k + 1}")
    pts = cloud.positions
    _, idx = cKDTree(pts).query(pts, k=k + 1)
    nbrs = pts[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    flip = np.einsum("ij,ij->i", normals, np.asarray(viewpoint, dtype=np.float64) - pts) < 0
    normals[flip] *= -1
    return replace(cloud, normals=normals)
