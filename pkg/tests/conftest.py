import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from mvpose.geometry import RigidTransform
from mvpose.models import default_library


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])


def random_transform(rng, scale=1.0):
    R = Rotation.random(random_state=rng).as_matrix()
    return RigidTransform(R, rng.normal(0.0, scale, 3))


@pytest.fixture(scope="session")
def library():
    return default_library()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _segment_distance(p, a, b):
    ab = b - a
    t = np.clip(np.einsum("...i,...i->...", p - a, ab) / np.einsum("...i,...i->...", ab, ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[..., None] * ab), axis=-1)


def point_mesh_distance(points, vertices, triangles, chunk=256):
    """Exact distance from each point to the nearest triangle, by brute force."""
    a, b, c = (vertices[triangles[:, i]] for i in range(3))
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk, None, :]
        h = np.einsum("pti,ti->pt", p - a, n)
        q = p - h[..., None] * n
        # inside test via signed sub-areas along the normal
        s0 = np.einsum("pti,ti->pt", np.cross(b - a, q - a), n)
        s1 = np.einsum("pti,ti->pt", np.cross(c - b, q - b), n)
        s2 = np.einsum("pti,ti->pt", np.cross(a - c, q - c), n)
        inside = (s0 >= 0) & (s1 >= 0) & (s2 >= 0)
        edge = np.minimum(np.minimum(_segment_distance(p, a, b), _segment_distance(p, b, c)),
                          _segment_distance(p, c, a))
        out[s:s + chunk] = np.where(inside, np.abs(h), edge).min(axis=1)
    return out
