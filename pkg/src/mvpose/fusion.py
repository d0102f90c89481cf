"""Multi-view point cloud fusion and dense per-point feature association.

Every fused point keeps the (view, pixel) it came from, so visual features
are always read from the image that generated the point, even when points
from different views interleave in space.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (DepthImage, PointCloud, RigidTransform, backproject,
                       compose, estimate_normals, invert, transform_cloud)
from .plyio import read_cloud_ply, write_cloud_ply

DEFAULT_SAMPLES_PER_VIEW = 12_288
NORMAL_NEIGHBORS = 16


@dataclass
class View:
    depth: DepthImage
    color: np.ndarray
    camera_pose: RigidTransform  # nominal camera->world
    view_id: int | None = None  # stable id for seeding; defaults to list position


@dataclass
class FusedCloud:
    points: PointCloud  # reference (first view) camera frame
    camera_ids: tuple
    view_poses: tuple  # camera->world poses used for fusion
    samples_per_view: int

    @property
    def view_count(self) -> int:
        return len(self.view_poses)

    def ref_from_view(self, v: int) -> RigidTransform:
        return compose(invert(self.view_poses[0]), self.view_poses[v])

    def view_counts(self) -> np.ndarray:
        return np.bincount(self.points.provenance[:, 0], minlength=self.view_count)

    def save(self, ply_path):
        ply_path = Path(ply_path)
        write_cloud_ply(ply_path, self.points, comments=[f"fused {self.view_count} views"])
        header = {
            "camera_ids": list(self.camera_ids),
            "samples_per_view": self.samples_per_view,
            "view_poses": [p.matrix().tolist() for p in self.view_poses],
        }
        ply_path.with_suffix(".json").write_text(json.dumps(header, indent=1))

    @classmethod
    def load(cls, ply_path) -> FusedCloud:
        ply_path = Path(ply_path)
        header = json.loads(ply_path.with_suffix(".json").read_text())
        return cls(read_cloud_ply(ply_path), tuple(header["camera_ids"]),
                   tuple(RigidTransform.from_matrix(m) for m in header["view_poses"]),
                   int(header["samples_per_view"]))


def prepare_view(view: View, n: int, seed: int, view_id: int) -> PointCloud:
    """Back-project, subsample to ``n`` points and estimate normals in the view's own frame."""
    cloud = backproject(view.depth, color=view.color)
    if len(cloud) > n:
        rng = np.random.default_rng([seed, view_id])
        cloud = cloud.subset(np.sort(rng.choice(len(cloud), size=n, replace=False)))
    k = min(NORMAL_NEIGHBORS, len(cloud) - 1)
    if k >= 3:
        cloud = estimate_normals(cloud, k=k, viewpoint=np.zeros(3))
    return cloud


def fuse_prepared(clouds, poses, n: int, camera_ids=None) -> FusedCloud:
    """Concatenate per-view camera-frame clouds in input order, expressed in view 0's frame."""
    if not clouds:
        raise ValueError("need at least one view to fuse")
    ref_inv = invert(poses[0])
    parts = []
    for v, (cloud, pose) in enumerate(zip(clouds, poses)):
        c = transform_cloud(cloud, compose(ref_inv, pose))
        c.provenance[:, 0] = v
        parts.append(c)
    ids = tuple(range(len(clouds))) if camera_ids is None else tuple(camera_ids)
    return FusedCloud(PointCloud.concatenate(parts), ids, tuple(poses), n)


def fuse_views(views, n: int = DEFAULT_SAMPLES_PER_VIEW, seed: int = 0) -> FusedCloud:
    """Fuse depth views into one cloud in the first view's camera frame.

    Each view is subsampled independently (uniform without replacement,
    seeded by ``(seed, view_id)``) so a view contributes the same points in
    every combination it appears in.
    """
    if len(views) == 0:
        raise ValueError("need at least one view to fuse")
    ids = [v.view_id if v.view_id is not None else i for i, v in enumerate(views)]
    clouds = [prepare_view(v, n, seed, vid) for v, vid in zip(views, ids)]
    return fuse_prepared(clouds, [v.camera_pose for v in views], n, ids)


# dense feature association -----------------------------------------------------

class FeatureProvider(Protocol):
    visual_dim: int
    geometric_dim: int

    def visual(self, image: np.ndarray) -> np.ndarray: ...

    def geometric(self, cloud: PointCloud) -> np.ndarray: ...


class ToyFeatures:
    """Hand-made stand-in for the learned extractors.

    visual: [R, G, B, luminance gradient magnitude]
    geometric: [nx, ny, nz, height above lowest point, distance to centroid,
    neighbor count within ``density_radius``]
    """

    visual_dim = 4
    geometric_dim = 6

    def __init__(self, density_radius: float = 0.02):
        self.density_radius = density_radius

    def visual(self, image):
        img = np.asarray(image, dtype=np.float64)
        lum = img @ np.array([0.299, 0.587, 0.114])
        gy, gx = np.gradient(lum)
        return np.concatenate([img, np.hypot(gx, gy)[..., None]], axis=-1)

    def geometric(self, cloud):
        p = cloud.positions
        if len(p) == 0:
            return np.zeros((0, 6))
        normals = np.nan_to_num(cloud.normals)
        # camera y points down, so "up" is -y
        height = p[:, 1].max() - p[:, 1]
        dist = np.linalg.norm(p - p.mean(axis=0), axis=1)
        # ball counts from the pair list (self included); much cheaper than per-point ball queries
        pairs = cKDTree(p).query_pairs(self.density_radius, output_type="ndarray")
        density = np.bincount(pairs.ravel(), minlength=len(p)) + 1
        return np.column_stack([normals, height, dist, density.astype(np.float64)])


@dataclass
class PointFeatures:
    features: np.ndarray  # (N, 2 * (Dg + Dv)) laid out [geometric | visual | global]
    geometric_dim: int
    visual_dim: int

    @property
    def geometric(self):
        return self.features[:, : self.geometric_dim]

    @property
    def visual(self):
        g = self.geometric_dim
        return self.features[:, g: g + self.visual_dim]

    @property
    def global_block(self):
        return self.features[:, self.geometric_dim + self.visual_dim:]


class FeatureDimensionError(ValueError):
    pass


def dense_fuse(cloud: FusedCloud, images, provider: FeatureProvider, visual_maps=None) -> PointFeatures:
    """Per point: geometric features, the visual features of its source pixel, and the global mean.

    ``visual_maps`` may carry precomputed ``provider.visual`` outputs per view.
    """
    pts = cloud.points
    Dg, Dv = provider.geometric_dim, provider.visual_dim
    if visual_maps is None:
        visual_maps = [provider.visual(img) for img in images]
    if len(visual_maps) != cloud.view_count:
        raise ValueError(f"{len(visual_maps)} images for {cloud.view_count} views")
    geo = np.asarray(provider.geometric(pts), dtype=np.float64)
    if geo.shape != (len(pts), Dg):
        raise FeatureDimensionError(f"geometric features have shape {geo.shape}, expected {(len(pts), Dg)}")
    vis = np.zeros((len(pts), Dv))
    prov = pts.provenance
    for v, fmap in enumerate(visual_maps):
        fmap = np.asarray(fmap)
        if fmap.ndim != 3 or fmap.shape[-1] != Dv:
            raise FeatureDimensionError(f"view {v}: visual map shape {fmap.shape}, expected (H, W, {Dv})")
        sel = prov[:, 0] == v
        vis[sel] = fmap[prov[sel, 1], prov[sel, 2]]
    local = np.concatenate([geo, vis], axis=1)
    pooled = local.mean(axis=0) if len(local) else np.zeros(Dg + Dv)
    return PointFeatures(np.concatenate([local, np.broadcast_to(pooled, local.shape)], axis=1), Dg, Dv)

