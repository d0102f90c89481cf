"""Minimal PLY reader/writer (ascii and binary little-endian) and OBJ reader."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import PointCloud

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class MeshParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def _parse_header(raw: bytes):
    if not raw.startswith(b"ply"):
        raise MeshParseError("missing 'ply' magic", 0)
    end = raw.find(b"end_header")
    if end < 0:
        raise MeshParseError("header not terminated by end_header", len(raw))
    nl = raw.find(b"\n", end)
    body_start = len(raw) if nl < 0 else nl + 1

    fmt = None
    elements = []  # (name, count, [(prop, dtype) | (prop, ("list", count_t, item_t))])
    offset = 0
    for line in raw[:end].split(b"\n"):
        line_offset = offset
        offset += len(line) + 1
        tok = line.decode("ascii", errors="replace").split()
        if not tok or tok[0] in ("ply", "comment", "obj_info"):
            continue
        try:
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                elements.append((tok[1], int(tok[2]), []))
            elif tok[0] == "property":
                if tok[1] == "list":
                    elements[-1][2].append((tok[4], ("list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]])))
                else:
                    elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
        except (IndexError, KeyError, ValueError):
            raise MeshParseError(f"malformed header line {line!r}", line_offset) from None
    if fmt not in ("ascii", "binary_little_endian"):
        raise MeshParseError(f"unsupported PLY format {fmt!r}", 0)
    return fmt, elements, body_start


def read_ply(path) -> dict:
    """Return {element name: {property: array}}; list properties give lists of arrays."""
    raw = Path(path).read_bytes()
    fmt, elements, pos = _parse_header(raw)
    out = {}
    if fmt == "ascii":
        lines = raw[pos:].split(b"\n")
        offsets = np.cumsum([pos] + [len(l) + 1 for l in lines])
        li = 0
        for name, count, props in elements:
            cols = {p: [] for p, _ in props}
            for _ in range(count):
                while li < len(lines) and not lines[li].strip():
                    li += 1
                if li >= len(lines):
                    raise MeshParseError(f"unexpected end of data in element {name!r}", len(raw))
                vals = lines[li].split()
                j = 0
                try:
                    for p, t in props:
                        if isinstance(t, tuple):
                            n = int(vals[j])
                            cols[p].append(np.array(vals[j + 1:j + 1 + n], dtype=t[2]))
                            if len(cols[p][-1]) != n:
                                raise IndexError
                            j += 1 + n
                        else:
                            cols[p].append(np.dtype(t).type(float(vals[j])))
                            j += 1
                except (IndexError, ValueError):
                    raise MeshParseError(f"bad record in element {name!r}", int(offsets[li])) from None
                li += 1
            out[name] = {p: (v if isinstance(t, tuple) else np.array(v, dtype=t))
                         for (p, t), v in zip(props, cols.values())}
        return out

    for name, count, props in elements:
        if all(not isinstance(t, tuple) for _, t in props):
            dt = np.dtype([(p, "<" + t) for p, t in props])
            nbytes = dt.itemsize * count
            if pos + nbytes > len(raw):
                raise MeshParseError(f"truncated data in element {name!r}", len(raw))
            rec = np.frombuffer(raw, dtype=dt, count=count, offset=pos)
            pos += nbytes
            out[name] = {p: rec[p].copy() for p, _ in props}
            continue
        cols = {p: [] for p, _ in props}
        for _ in range(count):
            for p, t in props:
                try:
                    if isinstance(t, tuple):
                        ct, it = np.dtype("<" + t[1]), np.dtype("<" + t[2])
                        n = int(np.frombuffer(raw, ct, 1, pos)[0])
                        pos += ct.itemsize
                        cols[p].append(np.frombuffer(raw, it, n, pos).copy())
                        pos += it.itemsize * n
                    else:
                        d = np.dtype("<" + t)
                        cols[p].append(np.frombuffer(raw, d, 1, pos)[0])
                        pos += d.itemsize
                except ValueError:
                    raise MeshParseError(f"truncated data in element {name!r}", pos) from None
        out[name] = {p: (v if isinstance(t, tuple) else np.array(v, dtype=t))
                     for (p, t), v in zip(props, cols.values())}
    return out


def read_obj(path):
    """Vertices (N, 3) and fan-triangulated faces (T, 3) from an OBJ file."""
    raw = Path(path).read_bytes()
    verts, faces = [], []
    offset = 0
    for line in raw.split(b"\n"):
        line_offset = offset
        offset += len(line) + 1
        tok = line.split()
        if not tok or tok[0].startswith(b"#"):
            continue
        try:
            if tok[0] == b"v":
                verts.append([float(x) for x in tok[1:4]])
                if len(verts[-1]) != 3:
                    raise ValueError
            elif tok[0] == b"f":
                idx = []
                for t in tok[1:]:
                    i = int(t.split(b"/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise ValueError
                for j in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[j], idx[j + 1]])
        except ValueError:
            raise MeshParseError(f"malformed OBJ record {line!r}", line_offset) from None
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def write_mesh_ply(path, vertices, triangles, comment: str | None = None):
    vertices = np.asarray(vertices, dtype="<f8")
    triangles = np.asarray(triangles, dtype="<i4")
    header = ["ply", "format binary_little_endian 1.0"]
    if comment:
        header.append(f"comment {comment}")
    header += [
        f"element vertex {len(vertices)}",
        "property double x", "property double y", "property double z",
        f"element face {len(triangles)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    face_dt = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
    faces = np.empty(len(triangles), dtype=face_dt)
    faces["n"] = 3
    faces["idx"] = triangles
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(vertices.tobytes())
        f.write(faces.tobytes())


CLOUD_DTYPE = np.dtype([
    ("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
    ("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4"),
    ("red", "u1"), ("green", "u1"), ("blue", "u1"),
    ("view_id", "<u4"), ("px_row", "<u2"), ("px_col", "<u2"),
])

_PLY_NAMES = {"<f8": "double", "<f4": "float", "|u1": "uchar", "<u4": "uint", "<u2": "ushort"}


def write_cloud_ply(path, cloud: PointCloud, comments=()):
    rec = np.empty(len(cloud), dtype=CLOUD_DTYPE)
    for i, c in enumerate("xyz"):
        rec[c] = cloud.positions[:, i]
        rec["n" + c] = cloud.normals[:, i]
    rgb = np.clip(np.round(cloud.colors * 255.0), 0, 255).astype(np.uint8)
    rec["red"], rec["green"], rec["blue"] = rgb.T
    rec["view_id"] = cloud.provenance[:, 0]
    rec["px_row"] = cloud.provenance[:, 1]
    rec["px_col"] = cloud.provenance[:, 2]
    header = ["ply", "format binary_little_endian 1.0"]
    header += [f"comment {c}" for c in comments]
    header.append(f"element vertex {len(cloud)}")
    header += [f"property {_PLY_NAMES[CLOUD_DTYPE[name].str]} {name}" for name in CLOUD_DTYPE.names]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rec.tobytes())


def read_cloud_ply(path) -> PointCloud:
    v = read_ply(path)["vertex"]
    pos = np.column_stack([v["x"], v["y"], v["z"]]).astype(np.float64)
    normals = np.column_stack([v["nx"], v["ny"], v["nz"]]).astype(np.float64)
    colors = np.column_stack([v["red"], v["green"], v["blue"]]).astype(np.float64) / 255.0
    prov = np.column_stack([v["view_id"], v["px_row"], v["px_col"]]).astype(np.int64)
    return PointCloud(pos, normals, colors, prov)
