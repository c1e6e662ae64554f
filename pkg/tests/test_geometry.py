import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from graspfit import shapes
from graspfit.geometry import (
    Mesh, NonWatertight, TriangleBVH, bad_edges, left_jacobian, load_mesh, rodrigues, rotation_log,
    save_obj, signed_distance,
)

vec3 = arrays(np.float64, 3, elements=st.floats(-3.0, 3.0))


@given(vec3)
def test_rodrigues_matches_quaternion_formula(r):
    th = np.linalg.norm(r)
    expected = np.eye(3) if th == 0 else oracles.rot(r / th, th)
    assert np.allclose(rodrigues(r), expected, atol=1e-12)


@given(vec3)
def test_rotation_log_round_trip(r):
    R = rodrigues(r)
    assert np.allclose(rodrigues(rotation_log(R)), R, atol=1e-9)
    assert np.linalg.norm(rotation_log(R)) <= np.pi + 1e-12


@given(vec3)
def test_left_jacobian_is_the_exponential_differential(r):
    # exp(r + h) ~ exp(J(r) h) exp(r)
    h = 1e-6
    J = left_jacobian(r)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        D = (rodrigues(r + e) - rodrigues(r - e)) / (2 * h) @ rodrigues(r).T
        w = np.array([D[2, 1], D[0, 2], D[1, 0]])
        assert np.allclose(w, J[:, k], atol=1e-6)


def test_cube_center_and_face_distance():
    cube = shapes.box((100.0, 100.0, 100.0))
    assert signed_distance(np.zeros(3), cube) == pytest.approx(-50.0, abs=1e-12)
    assert signed_distance(np.array([60.0, 0.0, 0.0]), cube) == pytest.approx(10.0, abs=1e-12)


def test_signed_distance_matches_brute_force_on_random_points(meshes):
    rng = np.random.default_rng(7)
    mesh = meshes["lblock"]
    lo, hi = mesh.vertices.min(0) - 20, mesh.vertices.max(0) + 20
    pts = rng.uniform(lo, hi, size=(1000, 3))
    got = signed_distance(pts, mesh)
    for p, g in zip(pts, got):
        d = oracles.unsigned_distance(p, mesh)
        inside = oracles.lblock_inside(p[None])[0]
        assert np.sign(g) == (-1 if inside else 1)
        assert abs(abs(g) - d) <= 1e-9


@pytest.mark.parametrize("name", ["cube", "sphere", "cylinder", "lblock"])
def test_bvh_matches_all_triangles(meshes, name):
    rng = np.random.default_rng(3)
    mesh = meshes[name]
    pts = rng.normal(scale=80.0, size=(200, 3))
    d, _, _ = TriangleBVH(mesh).query(pts)
    ref = [oracles.unsigned_distance(p, mesh) for p in pts]
    assert np.abs(d - ref).max() <= 1e-9


def test_open_mesh_is_rejected():
    cube = shapes.box()
    open_box = Mesh(cube.vertices, cube.faces[:-1])
    assert len(bad_edges(open_box)) == 3
    with pytest.raises(NonWatertight):
        signed_distance(np.zeros(3), open_box)


def test_obj_round_trip(tmp_path, meshes):
    path = tmp_path / "m.obj"
    save_obj(meshes["cube"], path)
    back = load_mesh(path)
    assert np.array_equal(back.vertices, meshes["cube"].vertices)
    assert np.array_equal(back.faces, meshes["cube"].faces)
