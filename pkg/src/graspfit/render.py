"""Z-buffered software rasterizer for hard class labels and depth.

Pixel (row i, column j) samples the image point (j + 0.5, i + 0.5).  Depth is
the camera-frame z of the nearest surface, interpolated perspective-correctly
(1/z is affine in screen space).  No culling, no anti-aliasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import apply_transform, rigid

OBJECT, PERSON, BACKGROUND = 0, 1, 2
CLASSES = ("object", "person", "background")
PGM_LABEL_VALUE = {BACKGROUND: 0, OBJECT: 128, PERSON: 255}
NEAR = 1e-3  # mm


class DegenerateCamera(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: np.ndarray = field(default_factory=lambda: np.eye(4))  # world -> camera

    def __post_init__(self):
        object.__setattr__(self, "extrinsic", np.asarray(self.extrinsic, dtype=float).reshape(4, 4))
        self.validate()

    def validate(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DegenerateCamera("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise DegenerateCamera("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DegenerateCamera("principal point outside the image")

    def project(self, points_world):
        pc = apply_transform(self.extrinsic, points_world)
        z = pc[:, 2]
        return np.stack([self.fx * pc[:, 0] / z + self.cx, self.fy * pc[:, 1] / z + self.cy], axis=1), z


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """World->camera extrinsic for a camera at ``eye`` looking at ``target`` (+z forward, +y down)."""
    eye, target, up = (np.asarray(v, dtype=float) for v in (eye, target, up))
    fwd = target - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return rigid(R, -R @ eye)


@dataclass(frozen=True)
class LabelImage:
    labels: np.ndarray  # (H, W) uint8 class codes
    depth: np.ndarray  # (H, W) float mm, +inf on background

    def one_hot(self):
        return np.stack([self.labels == c for c in range(3)]).astype(float)


def rasterize(hand_mesh, object_mesh, camera):
    """Label/depth image of the hand (person) and object meshes seen by ``camera``."""
    camera.validate()
    W, H = camera.width, camera.height
    labels = np.full(H * W, BACKGROUND, dtype=np.uint8)
    depth = np.full(H * W, np.inf)
    # object first: the stable depth sort below then gives it exact depth ties
    parts = [(m, c) for m, c in ((object_mesh, OBJECT), (hand_mesh, PERSON)) if m is not None and len(m.faces)]
    if not parts:
        return LabelImage(labels.reshape(H, W), depth.reshape(H, W))
    uv_all, z_all, tris, cls = [], [], [], []
    off = 0
    for mesh, c in parts:
        uv, z = camera.project(mesh.vertices)
        uv_all.append(uv)
        z_all.append(z)
        tris.append(mesh.faces + off)
        cls.append(np.full(len(mesh.faces), c, dtype=np.uint8))
        off += len(mesh.vertices)
    uv, z = np.vstack(uv_all), np.concatenate(z_all)
    tri, cls = np.vstack(tris), np.concatenate(cls)
    zt = z[tri]
    keep = np.all(zt > NEAR, axis=1)
    tri, cls, zt = tri[keep], cls[keep], zt[keep]
    p0, p1, p2 = uv[tri[:, 0]], uv[tri[:, 1]], uv[tri[:, 2]]
    area = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
    lo = np.minimum(np.minimum(p0, p1), p2)
    hi = np.maximum(np.maximum(p0, p1), p2)
    j0 = np.clip(np.ceil(lo[:, 0] - 0.5), 0, W).astype(np.int64)
    j1 = np.clip(np.floor(hi[:, 0] - 0.5), -1, W - 1).astype(np.int64)
    i0 = np.clip(np.ceil(lo[:, 1] - 0.5), 0, H).astype(np.int64)
    i1 = np.clip(np.floor(hi[:, 1] - 0.5), -1, H - 1).astype(np.int64)
    bw = np.maximum(j1 - j0 + 1, 0)
    bh = np.maximum(i1 - i0 + 1, 0)
    idx = np.flatnonzero((np.abs(area) > 1e-12) & (bw > 0) & (bh > 0))
    if len(idx) == 0:
        return LabelImage(labels.reshape(H, W), depth.reshape(H, W))
    # barycentrics and 1/z are affine in screen space: per-triangle a*x + b*y + c
    q0, q1, q2, inv_a = p0[idx], p1[idx], p2[idx], 1.0 / area[idx]
    iz = 1.0 / zt[idx]
    coef = np.empty((10, len(idx)))
    coef[0] = (q1[:, 1] - q2[:, 1]) * inv_a
    coef[1] = (q2[:, 0] - q1[:, 0]) * inv_a
    coef[2] = (q1[:, 0] * q2[:, 1] - q2[:, 0] * q1[:, 1]) * inv_a
    coef[3] = (q2[:, 1] - q0[:, 1]) * inv_a
    coef[4] = (q0[:, 0] - q2[:, 0]) * inv_a
    coef[5] = (q2[:, 0] * q0[:, 1] - q0[:, 0] * q2[:, 1]) * inv_a
    coef[6] = iz[:, 0] - iz[:, 2]
    coef[7] = iz[:, 1] - iz[:, 2]
    coef[8] = iz[:, 2]
    coef[9] = idx
    counts = bw[idx] * bh[idx]
    k = np.repeat(np.arange(len(idx)), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(len(k)) - start
    bwk = bw[idx][k]
    jj = j0[idx][k] + local % bwk
    ii = i0[idx][k] + local // bwk
    px, py = jj + 0.5, ii + 0.5
    c = coef[:6, k]
    w0 = c[0] * px + c[1] * py + c[2]
    w1 = c[3] * px + c[4] * py + c[5]
    inside = (w0 >= 0) & (w1 >= 0) & (w0 + w1 <= 1.0)
    k, w0, w1 = k[inside], w0[inside], w1[inside]
    c = coef[6:, k]
    d = 1.0 / (w0 * c[0] + w1 * c[1] + c[2])
    pix = ii[inside] * W + jj[inside]
    order = np.lexsort((d, pix))
    first = order[np.r_[True, pix[order][1:] != pix[order][:-1]]]
    labels[pix[first]] = cls[c[3, first].astype(np.int64)]
    depth[pix[first]] = d[first]
    return LabelImage(labels.reshape(H, W), depth.reshape(H, W))


# ---------------------------------------------------------------------------
# PGM export
# ---------------------------------------------------------------------------


def write_pgm(path, image, maxval):
    image = np.asarray(image)
    H, W = image.shape
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{W} {H}\n{maxval}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image, dtype=dtype).tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    W, H, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pos += 1  # single whitespace after maxval
    dtype = ">u2" if maxval > 255 else "u1"
    img = np.frombuffer(data, dtype=dtype, count=W * H, offset=pos).reshape(H, W)
    return img.astype(np.int64), maxval


def depth_to_pgm(image, path):
    d = image.depth
    q = np.where(np.isfinite(d), np.clip(np.rint(d * 10.0), 1, 65535), 0)
    write_pgm(path, q.astype(np.int64), 65535)


def labels_to_pgm(image, path):
    out = np.zeros(image.labels.shape, dtype=np.int64)
    for c, v in PGM_LABEL_VALUE.items():
        out[image.labels == c] = v
    write_pgm(path, out, 255)


def labels_from_pgm(path):
    img, _ = read_pgm(path)
    inv = {v: c for c, v in PGM_LABEL_VALUE.items()}
    if not np.isin(img, list(inv)).all():
        raise ValueError(f"{path}: unexpected label value")
    out = np.empty(img.shape, dtype=np.uint8)
    for v, c in inv.items():
        out[img == v] = c
    return out


def merge_layers(first, second):
    """Per-pixel nearer of two renderings; ``first`` wins exact depth ties.

    Rendering two meshes separately and merging gives the same image as
    rasterizing them together with ``first``'s mesh listed first.
    """
    take = second.depth < first.depth
    return LabelImage(np.where(take, second.labels, first.labels), np.where(take, second.depth, first.depth))
