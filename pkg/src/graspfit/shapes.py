"""Closed triangle-mesh primitives used for bundled objects and the procedural hand."""

import numpy as np

from .geometry import Mesh


def _orient_outward(vertices, faces, inner_points):
    """Flip faces whose normal points toward the nearest interior reference point."""
    tri = vertices[faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    cen = tri.mean(axis=1)
    ref = inner_points(cen)
    flip = np.einsum("ij,ij->i", n, cen - ref) < 0
    faces = faces.copy()
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces


def box(size=(100.0, 100.0, 100.0), center=(0.0, 0.0, 0.0)):
    sx, sy, sz = np.asarray(size, dtype=float) / 2
    v = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)])
    f = np.array([
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
    ])
    f = _orient_outward(v, f, lambda c: np.zeros_like(c))
    return Mesh(v + np.asarray(center, dtype=float), f)


def icosphere(radius=50.0, subdivisions=3, center=(0.0, 0.0, 0.0)):
    t = (1.0 + 5**0.5) / 2.0
    v = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    v = [np.array(p, dtype=float) / np.linalg.norm(p) for p in v]
    for _ in range(subdivisions):
        cache, nf = {}, []

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = v[i] + v[j]
                v.append(m / np.linalg.norm(m))
                cache[key] = len(v) - 1
            return cache[key]

        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        f = nf
    v = np.array(v) * radius
    f = _orient_outward(v, np.array(f), lambda c: np.zeros_like(c))
    return Mesh(v + np.asarray(center, dtype=float), f)


def cylinder(radius=33.0, height=180.0, segments=24, semi_minor=None):
    """Capped z-aligned cylinder centred at the origin; elliptic if ``semi_minor`` is set."""
    rb = radius if semi_minor is None else semi_minor
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), rb * np.sin(ang)], axis=1)
    h = height / 2
    v = np.vstack([
        np.c_[ring, np.full(segments, -h)],
        np.c_[ring, np.full(segments, h)],
        [[0, 0, -h], [0, 0, h]],
    ])
    bot, top = 2 * segments, 2 * segments + 1
    f = []
    for k in range(segments):
        k1 = (k + 1) % segments
        f += [[k, k1, segments + k1], [k, segments + k1, segments + k]]
        f += [[bot, k1, k], [top, segments + k, segments + k1]]
    f = _orient_outward(v, np.array(f), lambda c: np.zeros_like(c))
    return Mesh(v, f)


def extruded_l(size=100.0, thickness=40.0, depth=60.0):
    """Non-convex L-shaped prism (two boxes' union), z-extruded."""
    s, t, d = size, thickness, depth / 2
    outline = np.array([[0, 0], [s, 0], [s, t], [t, t], [t, s], [0, s]], dtype=float) - s / 2
    n = len(outline)
    v = np.vstack([np.c_[outline, np.full(n, -d)], np.c_[outline, np.full(n, d)]])
    f = []
    for k in range(n):
        k1 = (k + 1) % n
        # outline is counter-clockwise, so this winding faces outward
        f += [[k, k1, n + k1], [k, n + k1, n + k]]
    # caps: triangulate the L as 4 triangles
    cap = [[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 5]]
    for a, b, c in cap:
        f.append([a, c, b])
        f.append([n + a, n + b, n + c])
    return Mesh(v, np.array(f))


def capsule(a, b, radius, u=None, segments=10, lat_steps=2):
    """Closed capsule around segment a-b.  ``u`` fixes the azimuth origin.

    Rings sit at latitudes k*90/lat_steps degrees on each hemisphere, so the
    vertex count is 2 + 2*(lat_steps)*segments; the two poles lie exactly on
    the segment's extension at distance ``radius``.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    w = b - a
    w = w / np.linalg.norm(w)
    if u is None:
        helper = np.array([1.0, 0.0, 0.0]) if abs(w[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = helper
    u = np.asarray(u, dtype=float) - np.dot(u, w) * w
    u /= np.linalg.norm(u)
    v_ = np.cross(w, u)
    lats = [np.pi / 2 * (k / lat_steps) for k in range(-lat_steps + 1, 1)]  # bottom cap rings, up to equator
    ang = 2 * np.pi * np.arange(segments) / segments
    circle = np.cos(ang)[:, None] * u + np.sin(ang)[:, None] * v_
    verts = [a - radius * w]
    for phi in lats:
        verts.extend(a + radius * (np.cos(phi) * circle + np.sin(phi) * w))
    for phi in [-x for x in lats[::-1]]:
        verts.extend(b + radius * (np.cos(phi) * circle + np.sin(phi) * w))
    verts.append(b + radius * w)
    verts = np.array(verts)
    n_rings = 2 * lat_steps
    faces = []
    ring = lambda i, k: 1 + i * segments + (k % segments)
    for k in range(segments):
        faces.append([0, ring(0, k + 1), ring(0, k)])
    for i in range(n_rings - 1):
        for k in range(segments):
            faces += [[ring(i, k), ring(i, k + 1), ring(i + 1, k + 1)], [ring(i, k), ring(i + 1, k + 1), ring(i + 1, k)]]
    top = len(verts) - 1
    for k in range(segments):
        faces.append([top, ring(n_rings - 1, k), ring(n_rings - 1, k + 1)])
    faces = np.array(faces)

    def axis_point(c):
        s = np.clip((c - a) @ (b - a) / np.dot(b - a, b - a), 0.0, 1.0)
        return a + s[:, None] * (b - a)

    return Mesh(verts, _orient_outward(verts, faces, axis_point))
