"""Inner-volume sphere sets for objects and hand bones.

Objects are spherized greedily over a voxel distance field: every interior
voxel centre proposes the sphere touching the nearest surface, the proposal
swallowing the most uncovered sample points is kept, and the loop stops once
the covered fraction reaches the target or the sphere budget is spent.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (
    TriangleBVH,
    check_watertight,
    closest_point_on_triangles,
    ray_parity_inside,
)

DEFAULT_VOXEL = 4.0
DEFAULT_COVERAGE = 0.93
DEFAULT_MAX_SPHERES = 128
CONTAINMENT_SLACK = 0.5  # mm


class EmptyInterior(ValueError):
    pass


@dataclass(frozen=True)
class SphereSet:
    centers: np.ndarray
    radii: np.ndarray
    joints: np.ndarray | None = None  # attach joint per sphere, hands only

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).reshape(-1, 3)
        r = np.asarray(self.radii, dtype=float).reshape(-1)
        if len(c) != len(r):
            raise ValueError("centers and radii differ in length")
        if np.any(r <= 0):
            raise ValueError("sphere radii must be positive")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "radii", r)
        if self.joints is not None:
            j = np.asarray(self.joints, dtype=np.int64).reshape(-1)
            if len(j) != len(r):
                raise ValueError("one attach joint per sphere required")
            object.__setattr__(self, "joints", j)

    def __len__(self):
        return len(self.radii)


@dataclass(frozen=True)
class VoxelGrid:
    origin: np.ndarray  # centre of voxel (0, 0, 0)
    voxel_size: float
    occupancy: np.ndarray  # bool, indexed [z, y, x]
    distance: np.ndarray  # float, same shape; 0 outside
    probes: np.ndarray  # jittered interior points, one per cell; drive selection
    audit: np.ndarray  # independent, denser jittered interior points; measure coverage

    def centers(self, flat_index):
        z, y, x = np.unravel_index(flat_index, self.occupancy.shape)
        return self.origin + np.stack([x, y, z], axis=1) * self.voxel_size

    @property
    def interior_count(self):
        return int(self.occupancy.sum())


def mesh_hash(mesh):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(mesh.faces, dtype="<i8").tobytes())
    return h.hexdigest()


def _jittered(pts, voxel_size, k, rng):
    """One uniform point in each of the k^3 sub-cells around every grid point."""
    sub = (np.stack(np.meshgrid(*[np.arange(k)] * 3, indexing="ij"), axis=-1).reshape(-1, 3) + 0.5) / k - 0.5
    jitter = rng.uniform(-0.5 / k, 0.5 / k, size=(len(pts), len(sub), 3))
    return (pts[:, None, :] + (sub[None] + jitter) * voxel_size).reshape(-1, 3)


def voxelize(mesh, voxel_size=DEFAULT_VOXEL, seed=0):
    """Interior occupancy by ray parity at voxel centres plus distance to the surface.

    The grid is centred on the mesh bounding box with an odd voxel count per
    axis, so axis-aligned 90 degree rotations of the mesh map voxel centres
    onto voxel centres exactly.  Two independent sets of stratified jittered
    interior points come along for coverage bookkeeping.
    """
    if voxel_size <= 0:
        raise ValueError("voxel size must be positive")
    check_watertight(mesh)
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    mid = (lo + hi) / 2.0
    n = 2 * np.ceil((hi - lo) / (2 * voxel_size)).astype(int) + 1
    origin = mid - (n - 1) / 2.0 * voxel_size
    shape = (n[2], n[1], n[0])
    flat = np.arange(int(np.prod(shape)))
    z, y, x = np.unravel_index(flat, shape)
    pts = origin + np.stack([x, y, z], axis=1) * voxel_size
    inside = ray_parity_inside(pts, mesh)
    dist = np.zeros(len(flat))
    if inside.any():
        d, _, _ = TriangleBVH(mesh).query(pts[inside])
        dist[inside] = d
    rng = np.random.default_rng(seed)
    probes = _jittered(pts, voxel_size, 1, rng)
    audit = _jittered(pts, voxel_size, 2, rng)
    return VoxelGrid(
        origin, float(voxel_size), inside.reshape(shape), dist.reshape(shape),
        probes[ray_parity_inside(probes, mesh)], audit[ray_parity_inside(audit, mesh)],
    )


def pack_spheres(grid, coverage_target=DEFAULT_COVERAGE, max_spheres=DEFAULT_MAX_SPHERES):
    """Greedy maximal-inscribed-sphere packing over a voxel distance field.

    Every interior voxel centre proposes a sphere whose radius is its depth.
    Each round keeps the proposal that swallows the most still-uncovered
    selection probes (lazy evaluation; gains only shrink), ties going to the
    candidate nearest the interior centroid, then to the lowest (z, y, x)
    voxel index.  Coverage is measured on the independent
    audit points; packing stops once it clears the target by two standard
    errors, or at the sphere budget.

    Returns (SphereSet, covered fraction of the audit points).
    """
    # voxel centres lying exactly on the surface propose nothing
    idx = np.flatnonzero(grid.occupancy.ravel() & (grid.distance.ravel() > 0))
    if len(idx) == 0 or len(grid.probes) == 0 or len(grid.audit) == 0:
        raise EmptyInterior("mesh has no interior voxels at this resolution")
    pts = grid.centers(idx)
    depth = grid.distance.ravel()[idx]
    probe_tree = cKDTree(grid.probes)
    audit_tree = cKDTree(grid.audit)
    counts = probe_tree.query_ball_point(pts, depth, return_length=True)
    # equal gains go to the candidate nearest the interior centroid, which
    # survives rigid motions of the mesh; voxel order only settles the rest
    central = np.round(np.linalg.norm(pts - pts.mean(axis=0), axis=1), 6)
    heap = [(-int(c), central[i], i) for i, c in enumerate(counts)]
    heapq.heapify(heap)
    covered = np.zeros(len(grid.probes), dtype=bool)
    audit_cov = np.zeros(len(grid.audit), dtype=bool)
    n_audit = len(grid.audit)
    chosen = []
    done = False
    while not done and len(chosen) < max_spheres and heap:
        neg, cen, i = heapq.heappop(heap)
        ball = probe_tree.query_ball_point(pts[i], depth[i])
        gain = int(np.count_nonzero(~covered[ball]))
        if gain != -neg:
            if gain:
                heapq.heappush(heap, (-gain, cen, i))
            continue
        chosen.append(i)
        covered[ball] = True
        audit_cov[audit_tree.query_ball_point(pts[i], depth[i])] = True
        p = np.count_nonzero(audit_cov) / n_audit
        done = p - 2.0 * np.sqrt(p * (1.0 - p) / n_audit) >= coverage_target
    chosen = np.array(chosen, dtype=np.int64)
    return SphereSet(pts[chosen], depth[chosen]), float(audit_cov.mean())


def spherize_mesh(mesh, voxel_size=DEFAULT_VOXEL, coverage_target=DEFAULT_COVERAGE, max_spheres=DEFAULT_MAX_SPHERES):
    return pack_spheres(voxelize(mesh, voxel_size), coverage_target, max_spheres)


def capsule_spheres(capsule_mesh, a, b, count=4):
    """Spheres evenly spaced along a capsule's axis, each touching its faceted surface."""
    s = np.linspace(0.0, 1.0, count)
    centers = np.asarray(a, dtype=float) + s[:, None] * (np.asarray(b, dtype=float) - a)
    tri = capsule_mesh.triangles
    radii = np.empty(count)
    for i, c in enumerate(centers):
        p = np.broadcast_to(c, (len(tri), 3))
        q = closest_point_on_triangles(p, tri[:, 0], tri[:, 1], tri[:, 2])
        radii[i] = np.linalg.norm(p - q, axis=1).min()
    return centers, radii


def hand_sphere_set(model):
    return SphereSet(model.sphere_centers, model.sphere_radii, model.sphere_joints)


def pose_spheres(spheres, transforms):
    """Carry a sphere set into the world.

    ``transforms`` is a single 4x4 rest-to-world map for object sets, or one
    such map per joint (``hand_model.skinning_transforms``) for hand sets.
    """
    T = np.asarray(transforms, dtype=float)
    if spheres.joints is None:
        if T.shape != (4, 4):
            raise ValueError("object sphere sets take a single 4x4 transform")
        c = spheres.centers @ T[:3, :3].T + T[:3, 3]
    else:
        if T.ndim != 3 or len(T) <= spheres.joints.max(initial=0):
            raise ValueError("hand sphere sets take one transform per joint")
        M = T[spheres.joints]
        c = np.einsum("nab,nb->na", M[:, :3, :3], spheres.centers) + M[:, :3, 3]
    return SphereSet(c, spheres.radii, spheres.joints)


def save_spheres(spheres, path, source_hash="none"):
    lines = [f"count {len(spheres)}", f"mesh {source_hash}"]
    for i in range(len(spheres)):
        c, r = spheres.centers[i], spheres.radii[i]
        row = " ".join(repr(float(v)) for v in (c[0], c[1], c[2], r))
        if spheres.joints is not None:
            row += f" {spheres.joints[i]}"
        lines.append(row)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_spheres(path):
    """Returns (SphereSet, source mesh hash)."""
    with open(path) as fh:
        rows = [ln.split() for ln in fh if ln.strip()]
    if rows[0][0] != "count" or rows[1][0] != "mesh":
        raise ValueError(f"{path}: missing sphere-file header")
    n = int(rows[0][1])
    body = rows[2 : 2 + n]
    if len(body) != n:
        raise ValueError(f"{path}: expected {n} spheres, found {len(body)}")
    vals = np.array([[float(x) for x in r[:4]] for r in body]).reshape(-1, 4)
    joints = None
    if n and len(body[0]) == 5:
        joints = np.array([int(r[4]) for r in body])
    return SphereSet(vals[:, :3], vals[:, 3], joints), rows[1][1]
