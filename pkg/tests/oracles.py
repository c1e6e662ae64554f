"""Brute-force reference implementations, written independently of the package.

Slow and simple on purpose: plain loops, textbook formulas, no shared helpers
from graspfit beyond data containers.
"""

import numpy as np


def rot(axis, angle):
    """Rotation matrix about a unit axis, via the quaternion formula."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    w, (x, y, z) = np.cos(angle / 2), a * np.sin(angle / 2)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def fk_chain(model, global_R, global_t, angles):
    """World position and rotation of every joint by explicit matrix chaining."""
    angles = np.asarray(angles, dtype=float).reshape(15, 3)
    Rw = [None] * model.n_joints
    pw = [None] * model.n_joints
    Rw[0], pw[0] = np.asarray(global_R, dtype=float), np.asarray(global_t, dtype=float)
    for j in range(1, model.n_joints):
        fl, ab, tw = model.axes[j]
        a = angles[j - 1]
        local = rot(tw, a[2]) @ rot(ab, a[1]) @ rot(fl, a[0])
        p = model.parents[j]
        pw[j] = pw[p] + Rw[p] @ model.offsets[j]
        Rw[j] = Rw[p] @ local
    return np.array(pw), np.array(Rw)


def fingertip_chain(model, global_R, global_t, angles):
    pw, Rw = fk_chain(model, global_R, global_t, angles)
    return np.array([pw[j] + Rw[j] @ off for j, off in zip(model.tip_joint, model.tip_offset)])


def repulsion_loop(hc, hr, oc, orad, t):
    """Double loop over sphere pairs: energy and gradients w.r.t. both center sets."""
    E = 0.0
    gh = np.zeros((len(hc), 3))
    go = np.zeros((len(oc), 3))
    for i in range(len(hc)):
        for j in range(len(oc)):
            diff = np.asarray(hc[i], dtype=float) - np.asarray(oc[j], dtype=float)
            d = float(np.sqrt(diff @ diff))
            v = hr[i] + orad[j] - d - t
            if v > 0:
                E += v
                if d > 0:
                    gh[i] -= diff / d
                    go[j] += diff / d
    return E, gh, go


def _seg_dist(p, a, b):
    ab = b - a
    s = np.clip(np.einsum("...k,...k", p - a, ab) / np.einsum("...k,...k", ab, ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + s[..., None] * ab), axis=-1)


def point_triangle_distance(p, a, b, c):
    """Plane projection if it lands inside the triangle, else the nearest edge.

    ``a``, ``b``, ``c`` may be stacks of triangles; returns one distance per triangle.
    """
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    h = np.einsum("...k,...k", p - a, n)
    q = p - h[..., None] * n
    # sub-triangle normals all agree with n when q is inside
    inside = np.ones(np.shape(h), dtype=bool)
    for v0, v1 in ((a, b), (b, c), (c, a)):
        inside &= np.einsum("...k,...k", np.cross(v1 - v0, q - v0), n) >= 0
    edge = np.minimum(np.minimum(_seg_dist(p, a, b), _seg_dist(p, b, c)), _seg_dist(p, c, a))
    return np.where(inside, np.abs(h), edge)


def unsigned_distance(p, mesh):
    tri = mesh.vertices[mesh.faces]
    return float(point_triangle_distance(p, tri[:, 0], tri[:, 1], tri[:, 2]).min())


def winding_number(p, mesh):
    """Generalized winding number by the van Oosterom-Strackee solid angle."""
    tri = mesh.vertices[mesh.faces] - p
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    la, lb, lc = (np.linalg.norm(v, axis=1) for v in (a, b, c))
    dot = lambda u, v: np.einsum("ij,ij->i", u, v)
    num = dot(a, np.cross(b, c))
    den = la * lb * lc + dot(a, b) * lc + dot(b, c) * la + dot(c, a) * lb
    return float((2.0 * np.arctan2(num, den)).sum() / (4.0 * np.pi))


def signed_distance(p, mesh):
    d = unsigned_distance(p, mesh)
    return -d if winding_number(p, mesh) > 0.5 else d


def ray_triangle_depth(direction, a, b, c):
    """Moller-Trumbore for a ray from the origin against stacked triangles; inf on a miss."""
    e1, e2 = b - a, c - a
    pv = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, pv)
    ok = np.abs(det) > 1e-12
    det = np.where(ok, det, 1.0)
    tv = -a
    u = np.einsum("ij,ij->i", tv, pv) / det
    qv = np.cross(tv, e1)
    v = (qv @ direction) / det
    t = np.einsum("ij,ij->i", e2, qv) / det
    hit = ok & (u >= 0) & (u <= 1) & (v >= 0) & (u + v <= 1) & (t > 0)
    return np.where(hit, t, np.inf)


def raycast_depth(meshes, camera):
    """Per-pixel camera-frame depth and index of the nearest mesh (-1 for none)."""
    H, W = camera.height, camera.width
    R, t = camera.extrinsic[:3, :3], camera.extrinsic[:3, 3]
    depth = np.full((H, W), np.inf)
    which = np.full((H, W), -1)
    tris = [m.vertices[m.faces] @ R.T + t for m in meshes]
    for i in range(H):
        for j in range(W):
            # z component 1, so the ray parameter is the depth
            d = np.array([(j + 0.5 - camera.cx) / camera.fx, (i + 0.5 - camera.cy) / camera.fy, 1.0])
            for k, tri in enumerate(tris):
                s = ray_triangle_depth(d, tri[:, 0], tri[:, 1], tri[:, 2]).min()
                if s < depth[i, j]:
                    depth[i, j] = s
                    which[i, j] = k
    return depth, which


def central_difference(f, x, h):
    x = np.asarray(x, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), x.shape)
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h[i]
        g[i] = (f(x + e) - f(x - e)) / (2 * h[i])
    return g


def convex_inside(points, mesh):
    """Inside test for a convex mesh: behind every face plane (faces wound outward)."""
    tri = mesh.vertices[mesh.faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    off = np.einsum("ij,ij->i", n, tri[:, 0])
    return np.all(points @ n.T <= off, axis=1)


def lblock_inside(points, size=100.0, thickness=40.0, depth=60.0):
    """Analytic inside test for the bundled extruded L, centred as in shapes.extruded_l."""
    h = size / 2
    x, y, z = points[:, 0] + h, points[:, 1] + h, points[:, 2]
    in_z = np.abs(z) <= depth / 2
    leg1 = (x >= 0) & (x <= size) & (y >= 0) & (y <= thickness)
    leg2 = (x >= 0) & (x <= thickness) & (y >= 0) & (y <= size)
    return in_z & (leg1 | leg2)


def rot_many(axes, angles):
    """Quaternion-formula rotations, one per row of ``axes`` (unit or zero) and ``angles``."""
    a = np.asarray(axes, dtype=float)
    w = np.cos(angles / 2)
    x, y, z = (a * np.sin(angles / 2)[:, None]).T
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], axis=-1),
        np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], axis=-1),
        np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], axis=-1),
    ], axis=1)


def axis_angle_many(r):
    r = np.asarray(r, dtype=float)
    theta = np.linalg.norm(r, axis=1)
    axis = r / np.where(theta > 0, theta, 1.0)[:, None]
    return rot_many(axis, theta)


def batch_terms(model, hand_spheres, obj_spheres, targets, X, t):
    """(E_phy, E_kp, E_limit) for every packed 57-vector row of X, by explicit chaining."""
    X = np.atleast_2d(X)
    n = len(X)
    angles = X[:, 6:51].reshape(n, 15, 3)
    Rw = [None] * model.n_joints
    pw = [None] * model.n_joints
    Rw[0], pw[0] = axis_angle_many(X[:, 0:3]), X[:, 3:6]
    for j in range(1, model.n_joints):
        fl, ab, tw = model.axes[j]
        a = angles[:, j - 1]
        local = (rot_many(np.tile(tw, (n, 1)), a[:, 2]) @ rot_many(np.tile(ab, (n, 1)), a[:, 1])
                 @ rot_many(np.tile(fl, (n, 1)), a[:, 0]))
        p = model.parents[j]
        pw[j] = pw[p] + np.einsum("nab,b->na", Rw[p], model.offsets[j])
        Rw[j] = Rw[p] @ local
    Rw, pw = np.stack(Rw, axis=1), np.stack(pw, axis=1)  # (n, 16, 3, 3), (n, 16, 3)

    rest = np.zeros((model.n_joints, 3))
    for j in range(1, model.n_joints):
        rest[j] = rest[model.parents[j]] + model.offsets[j]
    js = hand_spheres.joints
    hc = np.einsum("nsab,sb->nsa", Rw[:, js], hand_spheres.centers - rest[js]) + pw[:, js]
    Ro = axis_angle_many(X[:, 51:54])
    oc = np.einsum("nab,sb->nsa", Ro, obj_spheres.centers) + X[:, None, 54:57]
    dist = np.sqrt(sum((hc[:, :, None, k] - oc[:, None, :, k]) ** 2 for k in range(3)))
    slack = hand_spheres.radii[:, None] + obj_spheres.radii[None, :] - dist - t
    phy = np.where(slack > 0, slack, 0.0).sum(axis=(1, 2))

    tips = pw[:, model.tip_joint] + np.einsum("nkab,kb->nka", Rw[:, model.tip_joint], model.tip_offset)
    kp_all = np.concatenate([pw, tips], axis=1)
    idx = np.array(sorted(targets))
    tgt = np.array([targets[k] for k in idx])
    kp = ((kp_all[:, idx] - tgt) ** 2).sum(axis=(1, 2))

    lim = model.limits[1:].reshape(-1, 2)
    a = X[:, 6:51]
    over = np.maximum(a - lim[:, 1], 0.0) + np.maximum(lim[:, 0] - a, 0.0)
    return np.stack([phy, kp, (over**2).sum(axis=1)], axis=1)
