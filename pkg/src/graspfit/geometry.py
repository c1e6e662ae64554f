"""Rotation helpers, triangle meshes, inside tests and point-to-mesh distance.

All lengths are millimetres.  Rigid transforms are plain 4x4 numpy arrays.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

# Fixed, deliberately "irrational" ray direction for parity tests; grid-aligned
# query points never graze mesh edges along it.
PARITY_DIRECTION = np.array([0.5372996, 0.3097417, 0.7845103])
PARITY_DIRECTION = PARITY_DIRECTION / np.linalg.norm(PARITY_DIRECTION)


class NonWatertight(ValueError):
    """Raised when some mesh edge is not shared by exactly two triangles."""

    def __init__(self, edges):
        self.edges = [tuple(int(v) for v in e) for e in edges]
        shown = ", ".join(f"{a}-{b}" for a, b in self.edges[:20])
        more = "" if len(self.edges) <= 20 else f" (+{len(self.edges) - 20} more)"
        super().__init__(f"mesh is not watertight; bad edges: {shown}{more}")


# ---------------------------------------------------------------------------
# rotations
# ---------------------------------------------------------------------------


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rodrigues(r):
    """Axis-angle 3-vector to rotation matrix."""
    return rodrigues_many(r)[0]


def rodrigues_many(r):
    """Vectorised axis-angle to rotation over an (n, 3) array.

    Uses R = I + a K + b K^2 with K = [r]x, a = sin(t)/t, b = (1 - cos t)/t^2,
    and K^2 = r r^T - t^2 I, so no matrix products are formed.
    """
    r = np.asarray(r, dtype=float).reshape(-1, 3)
    t2 = np.einsum("ij,ij->i", r, r)
    theta = np.sqrt(t2)
    small = theta < 1e-8
    t = np.where(small, 1.0, theta)
    # second-order series below 1e-8; exact to double precision there
    a = np.where(small, 1.0, np.sin(t) / t)
    b = np.where(small, 0.5, (1.0 - np.cos(t)) / t**2)
    R = b[:, None, None] * (r[:, :, None] * r[:, None, :])
    diag = 1.0 - b * t2
    R[:, 0, 0] += diag
    R[:, 1, 1] += diag
    R[:, 2, 2] += diag
    ar = a[:, None] * r
    R[:, 0, 1] -= ar[:, 2]
    R[:, 0, 2] += ar[:, 1]
    R[:, 1, 2] -= ar[:, 0]
    R[:, 1, 0] += ar[:, 2]
    R[:, 2, 0] -= ar[:, 1]
    R[:, 2, 1] += ar[:, 0]
    return R


def axis_rotation(axis, angle):
    return rodrigues(np.asarray(axis, dtype=float) * angle)


def rotation_log(R):
    """Inverse of :func:`rodrigues`, returning an axis-angle with norm in [0, pi]."""
    R = np.asarray(R, dtype=float)
    cos_t = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_t)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-6:
        return 0.5 * w
    if np.pi - theta < 1e-4:
        # near pi the antisymmetric part vanishes; read the axis off R + I
        B = 0.5 * (R + np.eye(3))
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if np.dot(axis, w) < 0:
            axis = -axis
        return axis * theta
    return w * (theta / (2.0 * np.sin(theta)))


def left_jacobian(r):
    """Left Jacobian of SO(3): exp(r + e) ~= exp(J(r) e) exp(r)."""
    r = np.asarray(r, dtype=float)
    theta = float(np.linalg.norm(r))
    K = skew(r)
    if theta < 1e-5:
        return np.eye(3) + 0.5 * K + K @ K / 6.0
    return (
        np.eye(3)
        + (1.0 - np.cos(theta)) / theta**2 * K
        + (theta - np.sin(theta)) / theta**3 * K @ K
    )


def rigid(R=None, t=None):
    T = np.eye(4)
    if R is not None:
        T[:3, :3] = R
    if t is not None:
        T[:3, 3] = t
    return T


def apply_transform(T, points):
    points = np.asarray(points, dtype=float)
    return points @ T[:3, :3].T + T[:3, 3]


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "faces", np.asarray(self.faces, dtype=np.int64).reshape(-1, 3))

    @property
    def triangles(self):
        return self.vertices[self.faces]

    def transformed(self, T):
        return Mesh(apply_transform(T, self.vertices), self.faces)

    def volume(self):
        a, b, c = np.moveaxis(self.triangles, 1, 0)
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def concatenate(meshes):
    verts, faces, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += len(m.vertices)
    if not verts:
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return Mesh(np.vstack(verts), np.vstack(faces))


def bad_edges(mesh):
    """Undirected edges not shared by exactly two triangles."""
    f = mesh.faces
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq[counts != 2]


def check_watertight(mesh):
    edges = bad_edges(mesh)
    if len(edges):
        raise NonWatertight(edges)


def load_mesh(path):
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".obj":
        return _load_obj(path)
    if ext == ".ply":
        return _load_ply(path)
    raise ValueError(f"unsupported mesh format: {path}")


def _load_obj(path):
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return Mesh(np.array(verts), np.array(faces, dtype=np.int64))


def _load_ply(path):
    with open(path, "rb") as fh:
        header = []
        while True:
            line = fh.readline().decode("ascii").strip()
            header.append(line)
            if line == "end_header":
                break
        body = fh.read()
    fmt = next(h.split()[1] for h in header if h.startswith("format"))
    n_vert = n_face = 0
    vprops, current = [], None
    face_types = ("uchar", "int")
    for h in header:
        p = h.split()
        if p[:2] == ["element", "vertex"]:
            n_vert, current = int(p[2]), "vertex"
        elif p[:2] == ["element", "face"]:
            n_face, current = int(p[2]), "face"
        elif p and p[0] == "property" and current == "vertex":
            vprops.append((p[2], p[1]))
        elif p and p[0] == "property" and current == "face" and p[1] == "list":
            face_types = (p[2], p[3])
    names = [n for n, _ in vprops]
    xyz = [names.index(k) for k in "xyz"]
    if fmt == "ascii":
        rows = body.decode("ascii").split("\n")
        rows = [r for r in rows if r.strip()]
        vdata = np.array([[float(x) for x in r.split()] for r in rows[:n_vert]]).reshape(-1, len(names))
        faces = []
        for r in rows[n_vert : n_vert + n_face]:
            idx = [int(x) for x in r.split()]
            poly = idx[1 : 1 + idx[0]]
            for k in range(1, len(poly) - 1):
                faces.append([poly[0], poly[k], poly[k + 1]])
        return Mesh(vdata[:, xyz], np.array(faces, dtype=np.int64))
    if fmt != "binary_little_endian":
        raise ValueError(f"unsupported PLY format {fmt}")
    np_types = {"float": "<f4", "float32": "<f4", "double": "<f8", "uchar": "u1", "uint8": "u1",
                "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4", "short": "<i2", "ushort": "<u2"}
    vdtype = np.dtype([(n, np_types[t]) for n, t in vprops])
    vdata = np.frombuffer(body, dtype=vdtype, count=n_vert)
    verts = np.stack([vdata[k].astype(float) for k in "xyz"], axis=1)
    off = vdtype.itemsize * n_vert
    ct, it = np.dtype(np_types[face_types[0]]), np.dtype(np_types[face_types[1]])
    faces = []
    for _ in range(n_face):
        n = int(np.frombuffer(body, ct, 1, off)[0])
        off += ct.itemsize
        poly = np.frombuffer(body, it, n, off)
        off += it.itemsize * n
        for k in range(1, n - 1):
            faces.append([poly[0], poly[k], poly[k + 1]])
    return Mesh(verts, np.array(faces, dtype=np.int64))


def save_obj(mesh, path):
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# ---------------------------------------------------------------------------
# inside tests
# ---------------------------------------------------------------------------


def ray_parity_inside(points, mesh, direction=PARITY_DIRECTION, chunk=4096):
    """Inside test by counting ray/triangle crossings (Moller-Trumbore)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    d = np.asarray(direction, dtype=float)
    tri = mesh.triangles
    a, e1, e2 = tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    h = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(det) > 1e-12
    a, e1, e2, h, det = a[ok], e1[ok], e2[ok], h[ok], det[ok]
    inv = 1.0 / det
    # u, v, t are affine in the query point: s . X * inv with s = p - a
    U = h * inv[:, None]
    V = np.cross(e1, d) * inv[:, None]
    W = np.cross(e1, e2) * inv[:, None]
    u0 = np.einsum("ij,ij->i", a, U)
    v0 = np.einsum("ij,ij->i", a, V)
    w0 = np.einsum("ij,ij->i", a, W)
    out = np.zeros(len(points), dtype=bool)
    step = max(1, chunk * 256 // max(len(a), 1))
    for s in range(0, len(points), step):
        p = points[s : s + step]
        u = p @ U.T - u0
        v = p @ V.T - v0
        t = p @ W.T - w0
        hit = (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
        out[s : s + step] = (hit.sum(axis=1) % 2) == 1
    return out


def winding_numbers(points, mesh, chunk=2_000_000):
    """Generalised winding number via signed solid angles (Van Oosterom-Strackee)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    tri = mesh.triangles
    out = np.empty(len(points))
    step = max(1, chunk // max(len(tri), 1))
    for s in range(0, len(points), step):
        p = points[s : s + step, None, :]
        a, b, c = tri[None, :, 0] - p, tri[None, :, 1] - p, tri[None, :, 2] - p
        la, lb, lc = (np.linalg.norm(x, axis=2) for x in (a, b, c))
        num = np.einsum("ijk,ijk->ij", a, np.cross(b, c))
        den = (
            la * lb * lc
            + np.einsum("ijk,ijk->ij", a, b) * lc
            + np.einsum("ijk,ijk->ij", a, c) * lb
            + np.einsum("ijk,ijk->ij", b, c) * la
        )
        out[s : s + step] = 2.0 * np.arctan2(num, den).sum(axis=1) / (4.0 * np.pi)
    return out


# ---------------------------------------------------------------------------
# point / triangle distance
# ---------------------------------------------------------------------------


def closest_point_on_triangles(p, a, b, c):
    """Row-wise closest point of p[i] on triangle (a[i], b[i], c[i]).

    Vectorised region classification after Ericson, Real-Time Collision
    Detection (2004), ClosestPtPointTriangle.
    """
    ab, ac = b - a, c - a
    ap, bp, cp = p - a, p - b, p - c
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        q = a + ab * (vb * denom)[:, None] + ac * (vc * denom)[:, None]
        # assigned from lowest to highest priority; earlier regions win
        m = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        q = np.where(m[:, None], b + (c - b) * w[:, None], q)
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        w = d2 / (d2 - d6)
        q = np.where(m[:, None], a + ac * w[:, None], q)
        m = (d6 >= 0) & (d5 <= d6)
        q = np.where(m[:, None], c, q)
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        w = d1 / (d1 - d3)
        q = np.where(m[:, None], a + ab * w[:, None], q)
        m = (d3 >= 0) & (d4 <= d3)
        q = np.where(m[:, None], b, q)
        m = (d1 <= 0) & (d2 <= 0)
        q = np.where(m[:, None], a, q)
    return q


class TriangleBVH:
    """Bounding-volume hierarchy over mesh triangles for nearest-surface queries.

    Triangles are split recursively at the centroid median of the longest box
    axis.  Queries are batched: an upper bound from the nearest triangle
    centroid prunes every leaf whose box lies farther away, and only the
    surviving leaves are searched exhaustively.  The minimum is therefore the
    same as a full scan over all triangles.
    """

    def __init__(self, mesh, leaf_size=8):
        self.mesh = mesh
        tri = mesh.triangles
        self._tri = tri
        cen = tri.mean(axis=1)
        leaves = []
        stack = [np.arange(len(tri))]
        while stack:
            idx = stack.pop()
            if len(idx) <= leaf_size:
                leaves.append(idx)
                continue
            pts = cen[idx]
            axis = int(np.argmax(pts.max(axis=0) - pts.min(axis=0)))
            order = idx[np.argsort(pts[:, axis], kind="stable")]
            half = len(order) // 2
            stack.extend([order[half:], order[:half]])
        self.leaf_table = np.full((len(leaves), leaf_size), -1, dtype=np.int64)
        self.box_min = np.empty((len(leaves), 3))
        self.box_max = np.empty((len(leaves), 3))
        for i, idx in enumerate(leaves):
            self.leaf_table[i, : len(idx)] = idx
            corners = tri[idx].reshape(-1, 3)
            self.box_min[i] = corners.min(axis=0)
            self.box_max[i] = corners.max(axis=0)
        self._kd = cKDTree(cen)

    def _dist(self, p, t):
        tri = self._tri[t]
        q = closest_point_on_triangles(p, tri[:, 0], tri[:, 1], tri[:, 2])
        return np.linalg.norm(p - q, axis=1), q

    def query(self, points, chunk=2048):
        """Return (distance, triangle index, closest point) for each point."""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        n = len(points)
        dist = np.empty(n)
        tri_idx = np.empty(n, dtype=np.int64)
        closest = np.empty((n, 3))
        if n == 0:
            return dist, tri_idx, closest
        _, seed = self._kd.query(points)
        ub, _ = self._dist(points, seed)
        for s in range(0, n, chunk):
            p = points[s : s + chunk]
            gap = np.maximum(np.maximum(self.box_min[None] - p[:, None], p[:, None] - self.box_max[None]), 0.0)
            lb = np.linalg.norm(gap, axis=2)
            pi, li = np.nonzero(lb <= ub[s : s + chunk, None] * (1 + 1e-12) + 1e-12)
            cand = self.leaf_table[li]
            pi = np.repeat(pi, cand.shape[1])
            ti = cand.ravel()
            keep = ti >= 0
            pi, ti = pi[keep], ti[keep]
            d, q = self._dist(p[pi], ti)
            order = np.lexsort((ti, d, pi))
            first = order[np.r_[True, pi[order][1:] != pi[order][:-1]]]
            rows = pi[first]
            dist[s + rows] = d[first]
            tri_idx[s + rows] = ti[first]
            closest[s + rows] = q[first]
        return dist, tri_idx, closest


def signed_distance(points, mesh, bvh=None):
    """Signed distance to a watertight mesh, negative inside."""
    check_watertight(mesh)
    bvh = bvh or TriangleBVH(mesh)
    points = np.asarray(points, dtype=float)
    single = points.ndim == 1
    d, _, _ = bvh.query(points.reshape(-1, 3))
    inside = ray_parity_inside(points.reshape(-1, 3), mesh)
    sd = np.where(inside, -d, d)
    return float(sd[0]) if single else sd
