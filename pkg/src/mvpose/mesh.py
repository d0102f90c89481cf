"""Triangle meshes: loading, area-weighted surface sampling, center/radius."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from .geometry import PointCloud
from .plyio import MeshParseError, read_obj, read_ply


@dataclass(eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    base_color: tuple = (0.5, 0.5, 0.5)
    dropped_triangles: int = field(default=0, compare=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")
        keep = triangle_areas(self.vertices, self.triangles) > 0
        self.dropped_triangles += int((~keep).sum())
        self.triangles = self.triangles[keep]

    def __repr__(self):
        return f"TriangleMesh({len(self.vertices)} vertices, {len(self.triangles)} triangles)"

    def triangle_normals(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        n = np.cross(b - a, c - a)
        return n / np.linalg.norm(n, axis=1, keepdims=True)


def triangle_areas(vertices, triangles) -> np.ndarray:
    if len(triangles) == 0:
        return np.zeros(0)
    a, b, c = (vertices[triangles[:, i]] for i in range(3))
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def load_mesh(path, format: str | None = None, scale: float = 1.0) -> TriangleMesh:
    """Read a PLY or OBJ mesh; ``scale`` converts file units to meters."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "ply":
        data = read_ply(path)
        if "vertex" not in data:
            raise MeshParseError("PLY has no vertex element", 0)
        v = data["vertex"]
        verts = np.column_stack([v["x"], v["y"], v["z"]])
        tris = []
        face = data.get("face", {})
        lists = face.get("vertex_indices", face.get("vertex_index", []))
        for f in lists:
            for j in range(1, len(f) - 1):
                tris.append([f[0], f[j], f[j + 1]])
        tris = np.array(tris, dtype=np.int64).reshape(-1, 3)
    elif fmt == "obj":
        verts, tris = read_obj(path)
    else:
        raise ValueError(f"unsupported mesh format {fmt!r}")
    return TriangleMesh(verts * scale, tris)


def sample_surface(mesh: TriangleMesh, n: int, seed=0, return_triangles: bool = False):
    """Draw ``n`` points area-weighted over the triangles, uniform within each."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if len(mesh.triangles) == 0:
        raise ValueError("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    areas = triangle_areas(mesh.vertices, mesh.triangles)
    tri = rng.choice(len(areas), size=n, p=areas / areas.sum())
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    a, b, c = (mesh.vertices[mesh.triangles[tri, i]] for i in range(3))
    pts = a + u[:, None] * (b - a) + v[:, None] * (c - a)
    normals = mesh.triangle_normals()[tri]
    cloud = PointCloud(pts, normals=normals, colors=np.tile(mesh.base_color, (n, 1)))
    return (cloud, tri) if return_triangles else cloud


def model_center_radius(mesh: TriangleMesh):
    """AABB midpoint of the vertices and the max vertex distance from it."""
    v = mesh.vertices
    center = 0.5 * (v.min(axis=0) + v.max(axis=0))
    radius = float(np.linalg.norm(v - center, axis=1).max())
    return center, radius


# procedural primitives ------------------------------------------------------

def _weld(vertices, triangles, decimals=9):
    key = np.round(vertices, decimals)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    return vertices[first], inverse.reshape(-1)[triangles]


def _orient_outward(vertices, triangles):
    """Flip triangles of a convex mesh so their normals point away from the interior."""
    inside = vertices.mean(axis=0)
    a, b, c = (vertices[triangles[:, i]] for i in range(3))
    n = np.cross(b - a, c - a)
    flip = np.einsum("ij,ij->i", n, (a + b + c) / 3 - inside) < 0
    triangles = triangles.copy()
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    return triangles


def make_box(size, spacing: float = 0.02, color=(0.5, 0.5, 0.5)) -> TriangleMesh:
    """Axis-aligned box centered at the origin with faces split into a grid."""
    size = np.asarray(size, dtype=np.float64)
    half = size / 2
    verts, tris = [], []
    for axis in range(3):
        u_ax, v_ax = [a for a in range(3) if a != axis]
        nu = max(1, int(np.ceil(size[u_ax] / spacing)))
        nv = max(1, int(np.ceil(size[v_ax] / spacing)))
        us = np.linspace(-half[u_ax], half[u_ax], nu + 1)
        vs = np.linspace(-half[v_ax], half[v_ax], nv + 1)
        U, V = np.meshgrid(us, vs, indexing="ij")
        for sign in (-1.0, 1.0):
            P = np.zeros((nu + 1, nv + 1, 3))
            P[..., axis] = sign * half[axis]
            P[..., u_ax] = U
            P[..., v_ax] = V
            base = sum(len(x) for x in verts)
            idx = base + np.arange((nu + 1) * (nv + 1)).reshape(nu + 1, nv + 1)
            a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
            c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
            tris.append(np.column_stack([a, b, c]))
            tris.append(np.column_stack([a, c, d]))
            verts.append(P.reshape(-1, 3))
    v, t = _weld(np.concatenate(verts), np.concatenate(tris))
    return TriangleMesh(v, _orient_outward(v, t), base_color=tuple(color))


def make_cylinder(radius: float, height: float, segments: int = 32, spacing: float = 0.02,
                  color=(0.5, 0.5, 0.5)) -> TriangleMesh:
    """Closed cylinder along z, centered at the origin."""
    rings = max(1, int(np.ceil(height / spacing)))
    ang = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    zs = np.linspace(-height / 2, height / 2, rings + 1)
    side = np.array([[radius * np.cos(a), radius * np.sin(a), z] for z in zs for a in ang])
    tris = []
    for r in range(rings):
        for s in range(segments):
            a = r * segments + s
            b = r * segments + (s + 1) % segments
            tris += [[a, b, b + segments], [a, b + segments, a + segments]]
    # caps: one inner ring at half radius plus a center vertex
    verts = [side]
    n = len(side)
    for ring_idx, z in ((0, zs[0]), (rings, zs[-1])):
        inner = np.column_stack([0.5 * radius * np.cos(ang), 0.5 * radius * np.sin(ang), np.full(segments, z)])
        center = np.array([[0.0, 0.0, z]])
        verts += [inner, center]
        i0, c0 = n, n + segments
        outer0 = ring_idx * segments
        for s in range(segments):
            s1 = (s + 1) % segments
            tris += [[outer0 + s, outer0 + s1, i0 + s1], [outer0 + s, i0 + s1, i0 + s], [i0 + s, i0 + s1, c0]]
        n += segments + 1
    v = np.concatenate(verts)
    t = np.array(tris)
    return TriangleMesh(v, _orient_outward(v, t), base_color=tuple(color))


def make_hull(points, color=(0.5, 0.5, 0.5)) -> TriangleMesh:
    """Convex hull of a point set, recentered on its AABB midpoint."""

    points = np.asarray(points, dtype=np.float64)
    hull = ConvexHull(points)
    used = np.unique(hull.simplices)
    remap = np.full(len(points), -1)
    remap[used] = np.arange(len(used))
    v = points[used]
    v = v - 0.5 * (v.min(axis=0) + v.max(axis=0))
    t = remap[hull.simplices]
    return TriangleMesh(v, _orient_outward(v, t), base_color=tuple(color))
