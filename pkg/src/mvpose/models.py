"""Object models and the default eleven-object library."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .keypoints import load_keypoints, save_keypoints, select_keypoints
from .mesh import TriangleMesh, load_mesh, make_box, make_cylinder, make_hull, model_center_radius
from .plyio import write_mesh_ply


@dataclass(eq=False)
class ObjectModel:
    class_id: int
    name: str
    mesh: TriangleMesh
    keypoints: np.ndarray
    center: np.ndarray
    radius: float
    symmetric: bool = False

    @classmethod
    def from_mesh(cls, class_id: int, name: str, mesh: TriangleMesh, symmetric: bool = False,
                  keypoints=None) -> ObjectModel:
        if class_id < 1:
            raise ValueError("class ids start at 1; 0 is background")
        center, radius = model_center_radius(mesh)
        if keypoints is None:
            keypoints = select_keypoints(mesh)
        return cls(class_id, name, mesh, np.asarray(keypoints, dtype=np.float64), center, radius, symmetric)


class ModelLibrary:
    """Immutable mapping class_id -> ObjectModel (class 0 is background)."""

    def __init__(self, models):
        self._models = {}
        for m in models:
            if m.class_id == 0:
                raise ValueError("class 0 is reserved for background")
            if m.class_id in self._models:
                raise ValueError(f"duplicate class id {m.class_id}")
            self._models[m.class_id] = m
        self._models = dict(sorted(self._models.items()))

    def __getitem__(self, class_id: int) -> ObjectModel:
        try:
            return self._models[class_id]
        except KeyError:
            raise KeyError(f"class {class_id} not in model library") from None

    def __contains__(self, class_id) -> bool:
        return class_id in self._models

    def __iter__(self):
        return iter(self._models.values())

    def __len__(self) -> int:
        return len(self._models)

    @property
    def class_ids(self) -> list[int]:
        return list(self._models)

    def save(self, directory) -> Path:
        """Write meshes, keypoint sidecars and ``manifest.json``; returns the manifest path."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for m in self:
            mesh_name = f"obj_{m.class_id:02d}.ply"
            write_mesh_ply(directory / mesh_name, m.mesh.vertices, m.mesh.triangles, comment=m.name)
            save_keypoints(directory / f"obj_{m.class_id:02d}_keypoints.json", m.class_id, m.keypoints)
            entries.append({"class_id": m.class_id, "name": m.name, "mesh_path": mesh_name,
                            "symmetric": m.symmetric, "color": list(m.mesh.base_color)})
        path = directory / "manifest.json"
        path.write_text(json.dumps(entries, indent=1))
        return path

    @classmethod
    def load(cls, manifest) -> ModelLibrary:
        manifest = Path(manifest)
        root = manifest.parent
        models = []
        for e in json.loads(manifest.read_text()):
            mesh = load_mesh(root / e["mesh_path"])
            if "color" in e:
                mesh.base_color = tuple(e["color"])
            kp_path = root / Path(e["mesh_path"]).with_name(Path(e["mesh_path"]).stem + "_keypoints.json")
            keypoints = None
            if kp_path.exists():
                cid, keypoints = load_keypoints(kp_path)
                if cid != e["class_id"]:
                    raise ValueError(f"{kp_path}: class id {cid} != manifest {e['class_id']}")
            models.append(ObjectModel.from_mesh(int(e["class_id"]), e["name"], mesh,
                                                bool(e.get("symmetric", False)), keypoints))
        return cls(models)


def _banana(rng):
    t = np.linspace(-0.9, 0.9, 25)
    spine = np.column_stack([0.11 * np.sin(t), np.zeros_like(t), -0.06 * np.cos(t)])
    pts = []
    for s, r in zip(spine, 0.018 * (1 - 0.5 * t ** 2)):
        d = rng.normal(size=(12, 3))
        pts.append(s + r * d / np.linalg.norm(d, axis=1, keepdims=True))
    return np.concatenate(pts)


def _mustard(rng):
    z = rng.uniform(-0.095, 0.095, 400)
    a = rng.uniform(0, 2 * np.pi, 400)
    taper = np.where(z > 0.05, 1 - (z - 0.05) / 0.06, 1.0)
    return np.column_stack([0.048 * taper * np.cos(a), 0.03 * taper * np.sin(a), z])


def _power_drill(rng):
    body = rng.uniform([-0.09, -0.025, 0.04], [0.09, 0.025, 0.095], (200, 3))
    handle = rng.uniform([-0.02, -0.02, -0.095], [0.03, 0.02, 0.04], (120, 3))
    return np.concatenate([body, handle])


def default_library() -> ModelLibrary:
    """Eleven primitive stand-ins roughly sized like the YCB objects (meters)."""
    rng = np.random.default_rng(20220224)
    specs = [
        ("banana", make_hull(_banana(rng), color=(0.95, 0.85, 0.2))),
        ("cracker_box", make_box((0.16, 0.06, 0.21), color=(0.85, 0.15, 0.1))),
        ("gelatin_box", make_box((0.085, 0.073, 0.028), color=(0.9, 0.4, 0.6))),
        ("master_chef_can", make_cylinder(0.051, 0.14, color=(0.2, 0.35, 0.8))),
        ("mustard_bottle", make_hull(_mustard(rng), color=(1.0, 0.9, 0.0))),
        ("potted_meat_can", make_box((0.10, 0.05, 0.083), color=(0.3, 0.45, 0.75))),
        ("power_drill", make_hull(_power_drill(rng), color=(0.15, 0.15, 0.15))),
        ("pudding_box", make_box((0.11, 0.089, 0.035), color=(0.55, 0.35, 0.2))),
        ("sugar_box", make_box((0.09, 0.04, 0.175), color=(0.95, 0.95, 0.6))),
        ("tomato_soup_can", make_cylinder(0.033, 0.101, color=(0.8, 0.1, 0.15))),
        ("tuna_fish_can", make_cylinder(0.043, 0.033, color=(0.4, 0.6, 0.9))),
    ]
    return ModelLibrary(
        ObjectModel.from_mesh(i + 1, name, mesh, symmetric=False) for i, (name, mesh) in enumerate(specs)
    )
