"""Articulated hand with anatomically aligned joint axes.

The skeleton follows the MANO joint topology (wrist + three joints for each
of index, middle, pinky, ring, thumb, in that order).  Every articulated joint
carries an orthonormal frame whose rows are the flexion, abduction and twist
axes, built from the bone direction and a palmar reference normal so that
angle limits have an anatomical meaning.

Rest frames are world aligned: the rest offset of a joint is simply the
difference of rest positions, and a joint's local rotation acts about its
own centre.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources

import numpy as np

from .geometry import (
    Mesh, apply_transform, axis_rotation, concatenate, left_jacobian, rigid, rodrigues, rodrigues_many,
)

N_JOINTS = 16
N_ANGLES = 45
FINGERS = ("thumb", "index", "middle", "ring", "pinky")
# first joint of each finger chain in MANO order
FINGER_ROOT = {"index": 1, "middle": 4, "pinky": 7, "ring": 10, "thumb": 13}
N_KEYPOINTS = N_JOINTS + len(FINGERS)
AXES = ("flexion", "abduction", "twist")


class BadIndex(IndexError):
    pass


@dataclass(frozen=True)
class HandModel:
    parents: np.ndarray  # (16,), parents[0] == -1
    offsets: np.ndarray  # (16, 3) rest offset from parent, mm
    axes: np.ndarray  # (16, 3, 3) rows: flexion, abduction, twist
    limits: np.ndarray  # (16, 3, 2) radians; row 0 unused
    tip_joint: np.ndarray  # (5,) joint carrying each fingertip, FINGERS order
    tip_offset: np.ndarray  # (5, 3) rest offset of the fingertip from that joint
    mesh: Mesh
    weights: np.ndarray  # (V, 16)
    sphere_centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    sphere_radii: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sphere_joints: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    name: str = "hand"

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=np.int64)
        if parents[0] != -1 or np.any(parents[1:] < 0) or np.any(parents[1:] >= np.arange(1, len(parents))):
            raise ValueError("joint parents must form a tree rooted at joint 0 with parent < child")
        axes = np.asarray(self.axes, dtype=float)
        gram = np.einsum("jab,jcb->jac", axes, axes)
        if np.abs(gram - np.eye(3)).max() > 1e-9:
            raise ValueError("joint axis frames must be orthonormal")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or np.abs(w.sum(axis=1) - 1).max() > 1e-9:
            raise ValueError("skin weights must be nonnegative rows summing to 1")
        lim = np.asarray(self.limits, dtype=float)
        if np.any(lim[..., 0] > lim[..., 1]):
            raise ValueError("joint limits need min <= max")
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", np.asarray(self.offsets, dtype=float))
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "limits", lim)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "tip_joint", np.asarray(self.tip_joint, dtype=np.int64))
        object.__setattr__(self, "tip_offset", np.asarray(self.tip_offset, dtype=float))

    @property
    def n_joints(self):
        return len(self.parents)

    @cached_property
    def rest_joints(self):
        pos = np.zeros((self.n_joints, 3))
        for j in range(1, self.n_joints):
            pos[j] = pos[self.parents[j]] + self.offsets[j]
        pos.flags.writeable = False
        return pos

    @cached_property
    def depth_levels(self):
        """Non-root joints grouped by depth, so each group only depends on earlier ones."""
        depth = np.zeros(self.n_joints, dtype=np.int64)
        for j in range(1, self.n_joints):
            depth[j] = depth[self.parents[j]] + 1
        return tuple(np.flatnonzero(depth == k) for k in range(1, int(depth.max(initial=0)) + 1))

    @property
    def angle_limits(self):
        """(45, 2) limits matching the packed joint-angle vector."""
        return self.limits[1:].reshape(-1, 2)

    def children(self, j):
        return [c for c in range(self.n_joints) if self.parents[c] == j]


@dataclass(frozen=True)
class HandPose:
    global_rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    global_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    joint_angles: np.ndarray = field(default_factory=lambda: np.zeros(N_ANGLES))

    def __post_init__(self):
        for name, n in (("global_rotation", 3), ("global_translation", 3), ("joint_angles", N_ANGLES)):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have {n} entries, got {arr.size}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class ObjectPose:
    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("rotation", "translation"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            if arr.shape != (3,) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be 3 finite values")
            object.__setattr__(self, name, arr)

    def matrix(self):
        return rigid(rodrigues(self.rotation), self.translation)


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------


def local_rotation(axes, angles):
    """Twist . abduction . flexion; flexion acts first on a vector."""
    flex, abd, twist = axes
    return axis_rotation(twist, angles[2]) @ axis_rotation(abd, angles[1]) @ axis_rotation(flex, angles[0])


def _axis_rotations(model, pose):
    """Per-joint (flexion, abduction, twist) rotation matrices, shape (15, 3, 3, 3)."""
    angles = pose.joint_angles.reshape(-1, 3)
    r = model.axes[1:] * angles[:, :, None]
    return rodrigues_many(r.reshape(-1, 3)).reshape(-1, 3, 3, 3)


def forward_kinematics(model, pose):
    """World transforms (16, 4, 4); column 3 of each is the joint's world position."""
    R = _axis_rotations(model, pose)
    local = R[:, 2] @ R[:, 1] @ R[:, 0]
    T = np.zeros((model.n_joints, 4, 4))
    T[:, 3, 3] = 1.0
    T[1:, :3, :3] = local
    T[1:, :3, 3] = model.offsets[1:]
    T[0] = rigid(rodrigues(pose.global_rotation), pose.global_translation)
    for level in model.depth_levels:
        T[level] = T[model.parents[level]] @ T[level]
    return T


def skinning_transforms(model, transforms):
    """Per-joint maps from rest-space coordinates to world coordinates."""
    rest = model.rest_joints
    M = np.array(transforms, dtype=float).copy()
    M[:, :3, 3] = M[:, :3, 3] - np.einsum("jab,jb->ja", M[:, :3, :3], rest)
    return M


def skin(model, transforms):
    """Linear-blend skinning of the rest mesh by FK transforms."""
    transforms = np.asarray(transforms, dtype=float)
    if len(transforms) != model.n_joints:
        raise ValueError("need one transform per joint")
    M = skinning_transforms(model, transforms)
    blend = np.einsum("vj,jab->vab", model.weights, M[:, :3, :])
    v = model.mesh.vertices
    posed = np.einsum("vab,vb->va", blend[:, :, :3], v) + blend[:, :, 3]
    return Mesh(posed, model.mesh.faces)


def keypoints(model, transforms):
    """21 world keypoints: the 16 joints followed by the fingertips in FINGERS order."""
    joints = transforms[:, :3, 3]
    tips = np.einsum("kab,kb->ka", transforms[model.tip_joint, :3, :3], model.tip_offset) + transforms[
        model.tip_joint, :3, 3
    ]
    return np.vstack([joints, tips])


def keypoint_joints(model):
    return np.concatenate([np.arange(model.n_joints), model.tip_joint])


def fingertips(model, pose):
    return keypoints(model, forward_kinematics(model, pose))[model.n_joints :]


def world_axes(model, pose, transforms):
    """World direction of every rotational DOF at this pose, shape (16, 3, 3)."""
    R = _axis_rotations(model, pose)
    Rp = transforms[model.parents[1:], :3, :3]
    flex, abd, twist = model.axes[1:, 0], model.axes[1:, 1], model.axes[1:, 2]
    out = np.zeros((model.n_joints, 3, 3))
    mv = lambda M, v: np.einsum("jab,jb->ja", M, v)
    out[1:, 0] = mv(Rp, mv(R[:, 2], mv(R[:, 1], flex)))
    out[1:, 1] = mv(Rp, mv(R[:, 2], abd))
    out[1:, 2] = mv(Rp, twist)
    return out


def pull_back(model, pose, transforms, points, attach, grads, waxes=None):
    """Chain-rule gradient of an energy from per-point world gradients.

    ``points`` are world positions rigidly attached to joints ``attach`` and
    ``grads`` their energy gradients.  Returns (rotation-tangent gradient,
    translation gradient, joint-angle gradient (45,)).  The rotation gradient
    is with respect to a world-frame left increment of the global rotation.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    grads = np.asarray(grads, dtype=float).reshape(-1, 3)
    n = model.n_joints
    S0 = np.zeros((n, 3))
    S1 = np.zeros((n, 3))
    np.add.at(S0, attach, grads)
    np.add.at(S1, attach, np.cross(points, grads))
    for j in range(n - 1, 0, -1):
        S0[model.parents[j]] += S0[j]
        S1[model.parents[j]] += S1[j]
    origins = transforms[:, :3, 3]
    M = S1 - np.cross(origins, S0)
    if waxes is None:
        waxes = world_axes(model, pose, transforms)
    g_angles = np.einsum("jab,jb->ja", waxes[1:], M[1:]).reshape(-1)
    g_trans = S0[0]
    g_rot = M[0]  # origins[0] is the global translation
    return g_rot, g_trans, g_angles


def tangent_to_axis_angle(r, g_tangent):
    """Convert a left-increment rotation gradient to a gradient in axis-angle coordinates."""
    return left_jacobian(r).T @ g_tangent


def limit_penalty(model, pose):
    """Sum of squared hinge violations of the joint-angle limits and its gradient."""
    lim = model.angle_limits
    a = pose.joint_angles
    viol = np.maximum(a - lim[:, 1], 0.0) + np.minimum(a - lim[:, 0], 0.0)
    return float(np.dot(viol, viol)), 2.0 * viol


def limit_violation(model, pose):
    """Per-angle distance beyond the limits (radians, >= 0)."""
    lim = model.angle_limits
    a = pose.joint_angles
    return np.maximum(a - lim[:, 1], 0.0) + np.maximum(lim[:, 0] - a, 0.0)


# ---------------------------------------------------------------------------
# model file
# ---------------------------------------------------------------------------

_FMT = "graspfit-hand 1"


def _g(x):
    return repr(float(x))


def save_hand_model(model, path):
    lines = [
        "# graspfit hand model",
        "# sections: joints, limits, tips, spheres, vertices, faces, weights",
        "# rest frames are world aligned; lengths in mm, angles in radians",
        f"format {_FMT}",
        f"name {model.name}",
        f"joints {model.n_joints}",
        "# index parent offset(3) flexion_axis(3) abduction_axis(3) twist_axis(3)",
    ]
    for j in range(model.n_joints):
        vals = list(model.offsets[j]) + list(model.axes[j].reshape(-1))
        lines.append(f"{j} {model.parents[j]} " + " ".join(_g(v) for v in vals))
    lines.append(f"limits {model.n_joints - 1}")
    lines.append("# joint flex_min flex_max abd_min abd_max twist_min twist_max")
    for j in range(1, model.n_joints):
        lines.append(f"{j} " + " ".join(_g(v) for v in model.limits[j].reshape(-1)))
    lines.append(f"tips {len(model.tip_joint)}")
    lines.append("# finger joint offset(3)")
    for k, j in enumerate(model.tip_joint):
        lines.append(f"{FINGERS[k]} {j} " + " ".join(_g(v) for v in model.tip_offset[k]))
    lines.append(f"spheres {len(model.sphere_radii)}")
    lines.append("# joint center(3) radius, rest frame")
    for c, r, j in zip(model.sphere_centers, model.sphere_radii, model.sphere_joints):
        lines.append(f"{j} {_g(c[0])} {_g(c[1])} {_g(c[2])} {_g(r)}")
    lines.append(f"vertices {len(model.mesh.vertices)}")
    lines += [" ".join(_g(x) for x in v) for v in model.mesh.vertices]
    lines.append(f"faces {len(model.mesh.faces)}")
    lines += [" ".join(str(int(i)) for i in f) for f in model.mesh.faces]
    lines.append(f"weights {len(model.weights)}")
    lines.append("# per vertex: count then (joint weight) pairs")
    for row in model.weights:
        nz = np.nonzero(row)[0]
        lines.append(f"{len(nz)} " + " ".join(f"{j} {_g(row[j])}" for j in nz))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _sections(path):
    with open(path) as fh:
        rows = [ln.split("#", 1)[0].split() for ln in fh]
    rows = [r for r in rows if r]
    out, i = {}, 0
    while i < len(rows):
        key = rows[i][0]
        if key in ("format", "name"):
            out[key] = " ".join(rows[i][1:])
            i += 1
            continue
        n = int(rows[i][1])
        out[key] = rows[i + 1 : i + 1 + n]
        i += 1 + n
    return out


def load_hand_model(path):
    sec = _sections(path)
    if sec.get("format") != _FMT:
        raise ValueError(f"{path}: not a hand model file (format line missing)")
    jrows = sec["joints"]
    n = len(jrows)
    parents = np.array([int(r[1]) for r in jrows])
    vals = np.array([[float(x) for x in r[2:]] for r in jrows])
    offsets, axes = vals[:, :3], vals[:, 3:12].reshape(n, 3, 3)
    limits = np.zeros((n, 3, 2))
    for r in sec["limits"]:
        limits[int(r[0])] = np.array([float(x) for x in r[1:7]]).reshape(3, 2)
    tips = sorted(sec["tips"], key=lambda r: FINGERS.index(r[0]))
    tip_joint = np.array([int(r[1]) for r in tips])
    tip_offset = np.array([[float(x) for x in r[2:5]] for r in tips])
    sph = np.array([[float(x) for x in r] for r in sec.get("spheres", [])]).reshape(-1, 5)
    verts = np.array([[float(x) for x in r] for r in sec["vertices"]])
    faces = np.array([[int(x) for x in r] for r in sec["faces"]])
    weights = np.zeros((len(verts), n))
    for v, r in enumerate(sec["weights"]):
        k = int(r[0])
        for t in range(k):
            weights[v, int(r[1 + 2 * t])] = float(r[2 + 2 * t])
    return HandModel(
        parents=parents, offsets=offsets, axes=axes, limits=limits,
        tip_joint=tip_joint, tip_offset=tip_offset, mesh=Mesh(verts, faces), weights=weights,
        sphere_centers=sph[:, 1:4], sphere_radii=sph[:, 4], sphere_joints=sph[:, 0].astype(np.int64),
        name=sec.get("name", "hand"),
    )


_DEFAULT = None


def load_default_hand():
    global _DEFAULT
    if _DEFAULT is None:
        with resources.as_file(resources.files("graspfit") / "data" / "default_hand.txt") as p:
            _DEFAULT = load_hand_model(p)
    return _DEFAULT


# ---------------------------------------------------------------------------
# procedural default hand
# ---------------------------------------------------------------------------

DEG = np.pi / 180.0
FINGER_LIMITS = np.array([[-10, 100], [-25, 25], [-15, 15]]) * DEG
THUMB_CMC_LIMITS = np.array([[-30, 100], [-40, 40], [-30, 30]]) * DEG

# (mcp position, splay angle about the palm normal in degrees, bone lengths, capsule radii)
_FINGER_SPECS = {
    "index": ((88.0, 0.0, 24.0), 8.0, (40.0, 24.0, 20.0), (9.0, 8.5, 8.0)),
    "middle": ((92.0, 0.0, 4.0), 0.0, (44.0, 28.0, 21.0), (9.5, 9.0, 8.5)),
    "pinky": ((78.0, 0.0, -32.0), -14.0, (32.0, 20.0, 18.0), (7.5, 7.0, 6.5)),
    "ring": ((86.0, 0.0, -15.0), -6.0, (41.0, 27.0, 20.0), (9.0, 8.5, 8.0)),
}
_THUMB = ((20.0, -8.0, 22.0), (1.0, -0.35, 0.9), (40.0, 32.0, 26.0), (11.0, 10.0, 9.0))
_PALMAR = np.array([0.0, -1.0, 0.0])
_THUMB_PALMAR_HINT = np.array([0.0, -0.6, -1.0])


def bone_frame(direction, palmar):
    """Rows (flexion, abduction, twist): flexion is perpendicular to the bone and
    the palmar normal, so positive flexion curls the bone toward the palm."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    n = np.asarray(palmar, dtype=float) - np.dot(palmar, d) * d
    n = n / np.linalg.norm(n)
    flex = np.cross(d, n)
    flex /= np.linalg.norm(flex)
    n = np.cross(flex, d)  # re-orthogonalise exactly
    return np.array([flex, n, d])


def build_default_hand(segments=10, lat_steps=2):
    """Procedural low-poly hand: one rigidly skinned capsule per bone."""
    from . import shapes
    from .spherize import capsule_spheres

    parents = np.full(N_JOINTS, -1)
    rest = np.zeros((N_JOINTS, 3))
    axes = np.tile(np.eye(3), (N_JOINTS, 1, 1))
    limits = np.zeros((N_JOINTS, 3, 2))
    tip_joint = np.zeros(5, dtype=np.int64)
    tip_offset = np.zeros((5, 3))
    capsules = []  # (joint, a, b, radius, u)

    def chain(name, root, start, direction, lengths, radii, palmar):
        d = np.asarray(direction, dtype=float)
        d /= np.linalg.norm(d)
        frame = bone_frame(d, palmar)
        pos = np.asarray(start, dtype=float)
        for k in range(3):
            j = root + k
            parents[j] = 0 if k == 0 else j - 1
            rest[j] = pos
            axes[j] = frame
            limits[j] = FINGER_LIMITS
            end = pos + lengths[k] * d
            if k == 2:
                capsules.append((j, pos, pos + (lengths[k] - radii[k]) * d, radii[k], frame[1]))
                tip_joint[FINGERS.index(name)] = j
                tip_offset[FINGERS.index(name)] = lengths[k] * d
            else:
                capsules.append((j, pos, end, radii[k], frame[1]))
            pos = end

    for name, (mcp, splay, lengths, radii) in _FINGER_SPECS.items():
        a = splay * DEG
        d = np.array([np.cos(a), 0.0, np.sin(a)])
        chain(name, FINGER_ROOT[name], mcp, d, lengths, radii, _PALMAR)
        base = np.array([12.0, 0.0, 0.55 * mcp[2]])
        capsules.append((0, base, np.asarray(mcp), radii[0] + 1.5, np.array([0.0, 1.0, 0.0])))
    cmc, tdir, tlen, trad = _THUMB
    chain("thumb", FINGER_ROOT["thumb"], cmc, tdir, tlen, trad, _THUMB_PALMAR_HINT)
    limits[FINGER_ROOT["thumb"]] = THUMB_CMC_LIMITS
    capsules.append((0, np.array([4.0, 0.0, -22.0]), np.array([4.0, 0.0, 18.0]), 12.0, np.array([0.0, 1.0, 0.0])))

    meshes, weights, centers, radii_out, sjoints = [], [], [], [], []
    for j, a, b, r, u in capsules:
        m = shapes.capsule(a, b, r, u=u, segments=segments, lat_steps=lat_steps)
        meshes.append(m)
        w = np.zeros((len(m.vertices), N_JOINTS))
        w[:, j] = 1.0
        weights.append(w)
        c, rr = capsule_spheres(m, a, b, count=4)
        centers.append(c)
        radii_out.append(rr)
        sjoints.append(np.full(len(rr), j))

    offsets = rest - np.where(parents[:, None] >= 0, rest[np.maximum(parents, 0)], 0.0)
    offsets[0] = rest[0]
    return HandModel(
        parents=parents, offsets=offsets, axes=axes, limits=limits,
        tip_joint=tip_joint, tip_offset=tip_offset,
        mesh=concatenate(meshes), weights=np.vstack(weights),
        sphere_centers=np.vstack(centers), sphere_radii=np.concatenate(radii_out),
        sphere_joints=np.concatenate(sjoints).astype(np.int64), name="default_right_hand",
    )


def posed_points(model, transforms, rest_points, attach):
    """Rigidly carry rest-space points attached to joints into the world."""
    M = skinning_transforms(model, transforms)
    return np.einsum("nab,nb->na", M[attach, :3, :3], rest_points) + M[attach, :3, 3]


def object_points(pose, points):
    return apply_transform(pose.matrix(), points)
