import numpy as np
import pytest

import oracles
from graspfit import hand_model as hm
from graspfit import render
from graspfit.geometry import Mesh, rigid, rodrigues
from graspfit.render import BACKGROUND, OBJECT, PERSON, Camera, DegenerateCamera, rasterize
from graspfit.synth import ring_cameras


def square(z, half=50.0, center=(0.0, 0.0)):
    cx, cy = center
    v = np.array([[cx - half, cy - half, z], [cx + half, cy - half, z], [cx + half, cy + half, z],
                  [cx - half, cy + half, z]])
    return Mesh(v, [[0, 1, 2], [0, 2, 3]])


CAM = Camera(100.0, 100.0, 15.5, 15.5, 32, 32)  # identity extrinsic: looks down +z


def test_camera_invariants():
    with pytest.raises(DegenerateCamera):
        Camera(0.0, 1.0, 1.0, 1.0, 4, 4)
    with pytest.raises(DegenerateCamera):
        Camera(1.0, 1.0, 4.0, 1.0, 4, 4)
    with pytest.raises(DegenerateCamera):
        Camera(1.0, 1.0, 1.0, 1.0, 0, 4)


def test_empty_scene_is_background():
    img = rasterize(None, None, CAM)
    assert np.all(img.labels == BACKGROUND) and np.all(np.isinf(img.depth))


def test_square_at_500mm():
    img = rasterize(None, square(500.0), CAM)
    assert img.labels[16, 16] == OBJECT
    assert img.depth[16, 16] == pytest.approx(500.0, abs=0.01)
    assert img.labels[0, 0] == BACKGROUND


def test_overlapping_squares_match_raycast():
    # edges kept off pixel centres, where inside/outside is a matter of convention
    near = square(400.0, 30.1, (-10.3, 0.7))
    far = square(500.0, 50.37, (20.2, 5.3))
    img = rasterize(near, far, CAM)
    depth, which = oracles.raycast_depth([far, near], CAM)
    expected = np.select([which == 0, which == 1], [OBJECT, PERSON], BACKGROUND)
    assert np.array_equal(img.labels, expected)
    hit = np.isfinite(depth)
    assert np.array_equal(np.isfinite(img.depth), hit)
    assert np.abs(img.depth[hit] - depth[hit]).max() <= 0.05


def test_hand_and_object_match_raycast(model, meshes):
    pose = hm.HandPose([0.2, -0.4, 0.1], [-60.0, 20.0, 10.0], np.full(45, 0.3))
    hand = hm.skin(model, hm.forward_kinematics(model, pose))
    obj = meshes["cylinder"].transformed(rigid(rodrigues([0.3, 0.0, 0.0]), [0.0, 0.0, 0.0]))
    cam = ring_cameras(5, 600.0, 64, 128.0)[1]
    img = rasterize(hand, obj, cam)
    depth, which = oracles.raycast_depth([obj, hand], cam)
    hit = np.isfinite(depth)
    # labels are a partition; coverage and depth agree with the ray caster
    assert set(np.unique(img.labels)) <= {OBJECT, PERSON, BACKGROUND}
    assert np.array_equal(np.isfinite(img.depth), img.labels != BACKGROUND)
    assert np.array_equal(np.isfinite(img.depth), hit)
    assert np.abs(img.depth[hit] - depth[hit]).max() <= 0.05
    expected = np.select([which == 0, which == 1], [OBJECT, PERSON], BACKGROUND)
    assert np.mean(img.labels == expected) == 1.0


def test_merge_layers_equals_joint_render(model, meshes):
    pose = hm.HandPose([0.0, 0.0, 0.0], [-80.0, 0.0, 0.0], np.zeros(45))
    hand = hm.skin(model, hm.forward_kinematics(model, pose))
    obj = meshes["cube"]
    for cam in ring_cameras(3, 600.0, 48, 96.0):
        joint = rasterize(hand, obj, cam)
        merged = render.merge_layers(rasterize(None, obj, cam), rasterize(hand, None, cam))
        assert np.array_equal(joint.labels, merged.labels)
        assert np.array_equal(joint.depth, merged.depth)


def test_pgm_exports(tmp_path):
    img = rasterize(square(400.0, 20.0), square(500.0), CAM)
    render.depth_to_pgm(img, tmp_path / "d.pgm")
    q, maxval = render.read_pgm(tmp_path / "d.pgm")
    assert maxval == 65535
    assert q[16, 16] == 4000 and q[0, 0] == 0
    render.labels_to_pgm(img, tmp_path / "l.pgm")
    raw, _ = render.read_pgm(tmp_path / "l.pgm")
    assert set(np.unique(raw)) <= {0, 128, 255}
    assert raw[16, 16] == 255
    assert np.array_equal(render.labels_from_pgm(tmp_path / "l.pgm"), img.labels)


def test_look_at_centres_the_target():
    cam = Camera(50.0, 50.0, 20.0, 20.0, 41, 41, render.look_at([300.0, -200.0, 100.0], [5.0, 6.0, 7.0]))
    uv, z = cam.project(np.array([[5.0, 6.0, 7.0]]))
    assert np.allclose(uv, [[20.0, 20.0]]) and z[0] > 0
