import numpy as np
import pytest

from mvpose.geometry import CameraIntrinsics, RigidTransform, backproject, invert, transform_cloud
from mvpose.simulator import (FixedRing, PlacementError, RasterError, SceneSpec, SphereQuadrant, WiggleRing, _rngs,
                              enumerate_camera_combinations, generate_scene, is_test_scene, load_manifest,
                              place_objects, rasterize, read_depth, read_seg, render_view, rig_from_dict, rig_to_dict,
                              ring_cameras, save_manifest, write_depth, write_seg)

from conftest import point_mesh_distance

K = CameraIntrinsics.default()


def square(z, half, offset=(0.0, 0.0)):
    x0, y0 = offset
    a, b, c, d = ([x0 - half, y0 - half, z], [x0 + half, y0 - half, z], [x0 + half, y0 + half, z],
                  [x0 - half, y0 + half, z])
    # wound so the normal faces the camera at the origin
    return np.array([[a, c, b], [a, d, c]], dtype=np.float64)


@pytest.fixture(scope="module")
def scene(library):
    return generate_scene(SceneSpec(tuple(library.class_ids)), library, seed=5, scene_index=9)


def test_fronto_parallel_depth():
    tris = square(2.0, 0.5)
    depth, seg, _ = rasterize(tris, np.array([3, 3]), np.zeros((2, 3)), K)
    hit = seg == 3
    assert hit.sum() > 1000
    np.testing.assert_allclose(depth[hit], 2.0, atol=1e-6)
    assert (depth[~hit] == 0).all()


def test_occluded_object_hidden():
    far, near = square(3.0, 0.6), square(2.0, 0.2)
    depth, seg, _ = rasterize(np.concatenate([far, near]), np.array([1, 1, 2, 2]), np.zeros((4, 3)), K)
    near_only, _, _ = rasterize(near, np.array([2, 2]), np.zeros((2, 3)), K)
    overlap = near_only > 0
    assert (seg[overlap] == 2).all()
    assert (seg[~overlap & (depth > 0)] == 1).all()
    # drawing order must not matter
    _, seg_rev, _ = rasterize(np.concatenate([near, far]), np.array([2, 2, 1, 1]), np.zeros((4, 3)), K)
    np.testing.assert_array_equal(seg_rev, seg)


def test_back_faces_culled():
    tris = square(2.0, 0.5)[:, [0, 2, 1]]
    depth, _, _ = rasterize(tris, np.array([1, 1]), np.zeros((2, 3)), K)
    assert (depth == 0).all()


def test_rendered_depth_lies_on_surfaces(scene, library):
    rv = render_view(scene, 0, library)
    cam = scene.cameras[0]
    cloud = transform_cloud(backproject(rv.depth), cam.true_pose)
    rows, cols = cloud.provenance[:, 1], cloud.provenance[:, 2]
    labels = rv.seg[rows, cols]
    rng = np.random.default_rng(0)
    on_obj = np.nonzero(labels > 0)[0]
    for i in rng.choice(on_obj, 200, replace=False):
        obj = next(o for o in scene.objects if o.class_id == labels[i])
        m = library[obj.class_id].mesh
        d = point_mesh_distance(cloud.positions[i:i + 1], obj.gt_pose.apply(m.vertices), m.triangles)
        assert d[0] < 1e-3
    ground = labels == 0
    # depth is stored as float32 on disk but rendered in float64, so the plane holds tightly
    assert np.abs(cloud.positions[ground, 2]).max() < 1e-6
    # seg is nonzero exactly where an object was hit
    assert ((rv.seg > 0) <= (rv.depth.data > 0)).all()


def test_fixed_ring_azimuths():
    cams = ring_cameras(FixedRing(), K)
    az = np.array([np.arctan2(c.true_pose.translation[1], c.true_pose.translation[0]) for c in cams])
    diffs = np.sort(np.mod(np.diff(np.concatenate([az, az[:1]])), 2 * np.pi))
    np.testing.assert_allclose(diffs, 2 * np.pi / 3, atol=1e-9)


def test_cameras_look_at_center(scene):
    for c in scene.cameras:
        pose = c.true_pose
        to_center = -pose.translation / np.linalg.norm(pose.translation)
        np.testing.assert_allclose(pose.rotation[:, 2], to_center, atol=1e-12)


def test_zero_wiggle_is_fixed_ring(library):
    ids = tuple(library.class_ids)
    a = generate_scene(SceneSpec(ids, rig=FixedRing()), library, 3, 19)
    b = generate_scene(SceneSpec(ids, rig=WiggleRing(position_sigma=0.0)), library, 3, 19)
    for ca, cb in zip(a.cameras, b.cameras):
        np.testing.assert_array_equal(ca.true_pose.matrix(), cb.true_pose.matrix())
        np.testing.assert_array_equal(cb.true_pose.matrix(), cb.nominal_pose.matrix())
    for oa, ob in zip(a.objects, b.objects):
        np.testing.assert_array_equal(oa.gt_pose.matrix(), ob.gt_pose.matrix())


def test_wiggle_statistics():
    rig = WiggleRing(position_sigma=0.005)
    offsets = []
    for i in range(1000):
        for c in ring_cameras(rig, K, _rngs(0, i)[1]):
            offsets.append(c.true_pose.translation - c.nominal_pose.translation)
            np.testing.assert_array_equal(c.true_pose.rotation, c.nominal_pose.rotation)
    offsets = np.array(offsets)
    np.testing.assert_allclose(offsets.std(axis=0), 0.005, rtol=0.1)
    assert np.abs(offsets.mean(axis=0)).max() < 0.0005


def test_sphere_quadrants_distinct(library):
    spec = SceneSpec(tuple(library.class_ids), rig=SphereQuadrant())
    for i in range(5):
        s = generate_scene(spec, library, 0, i)
        az = [np.arctan2(c.true_pose.translation[1], c.true_pose.translation[0]) for c in s.cameras]
        quadrants = {int(np.mod(a, 2 * np.pi) // (np.pi / 2)) for a in az}
        assert len(quadrants) == 4
        for c in s.cameras:
            assert 0.7 - 1e-12 <= np.linalg.norm(c.true_pose.translation) <= 1.0 + 1e-12


def test_placement_rules(scene, library):
    ids = [o.class_id for o in scene.objects]
    assert len(ids) == len(set(ids)) == len(library)
    centers = {o.class_id: o.gt_pose.apply(library[o.class_id].center) for o in scene.objects}
    for cid, c in centers.items():
        assert c[2] >= library[cid].radius - 1e-12
        assert scene.objects[0].gt_pose.is_valid()
    for i in ids:
        for j in ids:
            if i < j:
                ri, rj = library[i].radius, library[j].radius
                overlap = ri + rj - np.linalg.norm(centers[i] - centers[j])
                assert overlap <= 0.3 * 2 * min(ri, rj) + 1e-12


def test_placement_failure_message(library):
    with pytest.raises(PlacementError, match="fewer objects"):
        place_objects(library.class_ids, library, 0.0, np.random.default_rng(0))


def test_every_object_visible_in_fixed_ring(library):
    spec = SceneSpec(tuple(library.class_ids), rig=SphereQuadrant())
    s = generate_scene(spec, library, 1, 29)
    probe = generate_scene(SceneSpec(tuple(library.class_ids)), library, 1, 29)
    counts = np.zeros(len(library), dtype=int)
    for ci in range(3):
        seg = render_view(probe, ci, library).seg
        counts = np.maximum(counts, [np.count_nonzero(seg == o.class_id) for o in s.objects])
    assert counts.min() >= spec.min_visible_pixels >= 1


def test_deterministic(library, scene):
    again = generate_scene(SceneSpec(tuple(library.class_ids)), library, seed=5, scene_index=9)
    for oa, ob in zip(scene.objects, again.objects):
        np.testing.assert_array_equal(oa.gt_pose.matrix(), ob.gt_pose.matrix())
    a, b = render_view(scene, 1, library), render_view(again, 1, library)
    np.testing.assert_array_equal(a.depth.data, b.depth.data)
    np.testing.assert_array_equal(a.seg, b.seg)
    other = generate_scene(SceneSpec(tuple(library.class_ids)), library, seed=5, scene_index=19)
    assert not np.array_equal(other.objects[0].gt_pose.matrix(), scene.objects[0].gt_pose.matrix())


def test_combinations():
    assert enumerate_camera_combinations(3, 3) == [[0, 1, 2], [1, 2, 0], [2, 0, 1]]
    assert enumerate_camera_combinations(3, 2) == [[0, 1], [0, 2], [1, 2]]
    assert enumerate_camera_combinations(1, 1) == [[0]]
    assert len(enumerate_camera_combinations(4, 2)) == 6
    with pytest.raises(ValueError):
        enumerate_camera_combinations(3, 4)
    with pytest.raises(ValueError):
        enumerate_camera_combinations(3, 0)


def test_split():
    assert [i for i in range(20) if is_test_scene(i)] == [9, 19]


def test_manifest_round_trip(tmp_path, scene):
    p = tmp_path / "m.json"
    save_manifest(p, scene)
    back = load_manifest(p)
    assert back.scene_id == scene.scene_id and len(back.cameras) == 3
    for oa, ob in zip(scene.objects, back.objects):
        assert oa.class_id == ob.class_id
        np.testing.assert_allclose(ob.gt_pose.matrix(), oa.gt_pose.matrix(), atol=1e-12)


def test_rig_dict_round_trip():
    for rig in (FixedRing(), WiggleRing(position_sigma=0.002), SphereQuadrant(count=2)):
        assert rig_from_dict(rig_to_dict(rig)) == rig
    with pytest.raises(ValueError):
        SphereQuadrant(count=5)


def test_rasters(tmp_path):
    d = np.random.default_rng(0).random((4, 5))
    write_depth(tmp_path / "d.mvdz", d)
    raw = (tmp_path / "d.mvdz").read_bytes()
    assert raw[:4] == b"MVDZ" and len(raw) == 12 + 4 * 20
    np.testing.assert_allclose(read_depth(tmp_path / "d.mvdz"), d.astype(np.float32))
    seg = np.arange(20, dtype=np.uint16).reshape(4, 5)
    write_seg(tmp_path / "s.mvsg", seg)
    np.testing.assert_array_equal(read_seg(tmp_path / "s.mvsg"), seg)
    with pytest.raises(RasterError):
        read_seg(tmp_path / "d.mvdz")
    (tmp_path / "t.mvsg").write_bytes((tmp_path / "s.mvsg").read_bytes()[:-2])
    with pytest.raises(RasterError):
        read_seg(tmp_path / "t.mvsg")


def test_near_plane_triangles_dropped():
    tris = np.array([[[0, 0, -0.5], [0.1, 0.1, 1.0], [0.1, -0.1, 1.0]]])
    depth, _, _ = rasterize(tris, np.array([1]), np.zeros((1, 3)), K)
    assert (depth == 0).all()


def test_pure_translation_camera():
    # a camera one meter behind the origin sees the fronto-parallel square at z = 3
    cam = RigidTransform(np.eye(3), [0, 0, -1.0])
    depth, _, _ = rasterize(invert(cam).apply(square(2.0, 0.3)), np.array([1, 1]), np.zeros((2, 3)), K)
    np.testing.assert_allclose(depth[depth > 0], 3.0, atol=1e-6)
