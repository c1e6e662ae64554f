from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

import oracles
from graspfit import hand_model as hm
from graspfit import shapes
from graspfit.geometry import Mesh, NonWatertight, rigid, rodrigues
from graspfit.spherize import (
    CONTAINMENT_SLACK, EmptyInterior, SphereSet, hand_sphere_set, load_spheres, mesh_hash, pack_spheres,
    pose_spheres, save_spheres, spherize_mesh, voxelize,
)


@pytest.fixture(scope="module")
def cube_grid():
    return voxelize(shapes.box((100.0, 100.0, 100.0)), 10.0)


def test_cube_voxel_count_and_depth(cube_grid):
    assert 900 <= cube_grid.interior_count <= 1100
    centre = np.unravel_index(np.argmax(cube_grid.distance), cube_grid.distance.shape)
    assert cube_grid.distance[centre] == pytest.approx(50.0, abs=10.0)


@pytest.fixture(scope="module")
def ball_grid():
    return voxelize(shapes.icosphere(50.0, 3), 5.0)


def test_sphere_max_depth(ball_grid):
    g = ball_grid
    assert g.distance.max() == pytest.approx(50.0, abs=5.0)


def test_interior_volume_matches_monte_carlo(meshes):
    rng = np.random.default_rng(11)
    mesh = meshes["lblock"]
    g = voxelize(mesh, 4.0)
    lo, hi = mesh.vertices.min(0), mesh.vertices.max(0)
    pts = rng.uniform(lo, hi, size=(1_000_000, 3))
    mc = oracles.lblock_inside(pts).mean() * np.prod(hi - lo)
    assert g.interior_count * 4.0**3 == pytest.approx(mc, rel=0.05)


def test_first_sphere_of_a_sphere_is_maximal(ball_grid):
    s, _ = pack_spheres(ball_grid, coverage_target=0.5)
    assert np.linalg.norm(s.centers[0]) <= 5.0
    assert s.radii[0] == pytest.approx(50.0, abs=5.0)


def test_single_cube_sphere(cube_grid):
    s, _ = pack_spheres(cube_grid, max_spheres=1)
    assert len(s) == 1
    assert s.radii[0] == pytest.approx(50.0, abs=10.0)


def _mc_coverage(spheres, inside_fn, lo, hi, n=200_000, seed=5):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo, hi, size=(n, 3))
    pts = pts[inside_fn(pts)]
    hit = np.zeros(len(pts), dtype=bool)
    for c, r in zip(spheres.centers, spheres.radii):
        hit |= np.sum((pts - c) ** 2, axis=1) <= r * r
    return hit.mean()


def test_cylinder_coverage_target(meshes):
    mesh = meshes["cylinder"]
    s, reported = spherize_mesh(mesh, coverage_target=0.9)
    assert reported >= 0.9
    lo, hi = mesh.vertices.min(0), mesh.vertices.max(0)
    assert _mc_coverage(s, lambda p: oracles.convex_inside(p, mesh), lo, hi) >= 0.9


@pytest.mark.parametrize("name", ["cube", "cylinder", "lblock"])
def test_sphere_set_invariants(meshes, name):
    mesh = meshes[name]
    s, _ = spherize_mesh(mesh, voxel_size=6.0, max_spheres=60)
    assert np.all(s.radii > 0)
    for c, r in zip(s.centers, s.radii):
        assert oracles.winding_number(c, mesh) > 0.5
        # fully contained up to the slack
        assert r <= oracles.unsigned_distance(c, mesh) + CONTAINMENT_SLACK


def test_coverage_monotone_in_target(meshes):
    g = voxelize(meshes["lblock"], 6.0)
    counts = [len(pack_spheres(g, t, 500)[0]) for t in (0.5, 0.7, 0.85, 0.93)]
    assert counts == sorted(counts)


def test_rigid_invariance_under_quarter_turns(meshes):
    mesh = meshes["lblock"]
    R = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    T = rigid(R, [30.0, -20.0, 10.0])
    ga = voxelize(mesh, 6.0)
    gb = voxelize(mesh.transformed(T), 6.0)
    # the voxel grids map onto each other exactly
    assert ga.interior_count == gb.interior_count
    za, ya, xa = np.nonzero(ga.occupancy)
    pa = ga.origin + np.stack([xa, ya, za], axis=1) * 6.0
    zb, yb, xb = np.nonzero(gb.occupancy)
    pb = gb.origin + np.stack([xb, yb, zb], axis=1) * 6.0
    key = lambda p, d: sorted(zip(np.round(p, 6).tolist(), np.round(d, 6).tolist()))
    assert key(pa @ R.T + T[:3, 3], ga.distance[za, ya, xa]) == key(pb, gb.distance[zb, yb, xb])
    # with the jittered sample points carried along, the packing follows the rotation
    gb = replace(gb, probes=ga.probes @ R.T + T[:3, 3], audit=ga.audit @ R.T + T[:3, 3])
    a, ca = pack_spheres(ga, 0.93, 40)
    b, cb = pack_spheres(gb, 0.93, 40)
    assert ca == cb
    assert key(a.centers @ R.T + T[:3, 3], a.radii) == key(b.centers, b.radii)


def test_errors():
    cube = shapes.box()
    with pytest.raises(NonWatertight):
        voxelize(Mesh(cube.vertices, cube.faces[:-2]), 5.0)
    with pytest.raises(EmptyInterior):
        pack_spheres(voxelize(shapes.box((2.0, 2.0, 2.0)), 10.0))
    with pytest.raises(ValueError):
        SphereSet([[0.0, 0.0, 0.0]], [0.0])


def test_pose_spheres_examples():
    s = SphereSet(np.array([[1.0, 2.0, 3.0], [-4.0, 0.0, 5.0]]), [1.0, 2.0])
    assert np.array_equal(pose_spheres(s, np.eye(4)).centers, s.centers)
    moved = pose_spheres(s, rigid(None, [10.0, 0.0, -1.0]))
    assert np.allclose(moved.centers, s.centers + [10.0, 0.0, -1.0])
    turned = pose_spheres(s, rigid(oracles.rot([0, 0, 1], np.pi / 2)))
    assert np.allclose(turned.centers, [[-2.0, 1.0, 3.0], [0.0, -4.0, 5.0]], atol=1e-12)
    assert np.array_equal(turned.radii, s.radii)


@settings(max_examples=4)
@given(st.integers(0, 2**31))
def test_hand_spheres_stay_inside_their_bones(model, seed):
    rng = np.random.default_rng(seed)
    pose = hm.HandPose(rng.normal(size=3), rng.normal(scale=20, size=3), rng.uniform(-1, 1, size=45))
    T = hm.forward_kinematics(model, pose)
    posed = hm.skin(model, T)
    hs = pose_spheres(hand_sphere_set(model), hm.skinning_transforms(model, T))
    owner = model.weights.argmax(axis=1)
    # bones are closed capsules; the palm joint carries several of them
    parts = connected_components(coo_matrix(
        (np.ones(3 * len(posed.faces)), (np.repeat(posed.faces[:, 0], 3), posed.faces.ravel())),
        shape=(len(posed.vertices),) * 2), directed=False)[1]
    for c, r, j in zip(hs.centers, hs.radii, hs.joints):
        best = -np.inf
        for part in np.unique(parts[owner == j]):
            faces = posed.faces[parts[posed.faces[:, 0]] == part]
            capsule = Mesh(posed.vertices, faces)
            if oracles.winding_number(c, capsule) > 0.5:
                tri = posed.vertices[faces]
                best = max(best, oracles.point_triangle_distance(c, tri[:, 0], tri[:, 1], tri[:, 2]).min())
        assert best >= r - 2 * CONTAINMENT_SLACK


def test_sphere_file_round_trip(tmp_path, model, meshes):
    s, _ = spherize_mesh(meshes["cylinder"], voxel_size=8.0, max_spheres=10)
    p = tmp_path / "obj.spheres"
    save_spheres(s, p, mesh_hash(meshes["cylinder"]))
    back, h = load_spheres(p)
    assert h == mesh_hash(meshes["cylinder"])
    assert np.array_equal(back.centers, s.centers) and np.array_equal(back.radii, s.radii)
    hs = hand_sphere_set(model)
    save_spheres(hs, p)
    back, _ = load_spheres(p)
    assert np.array_equal(back.joints, hs.joints) and np.array_equal(back.centers, hs.centers)
