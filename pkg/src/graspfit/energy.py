"""Energy terms for hand-object fitting and their gradients.

Parameter vector layout (57 entries), shared with :mod:`graspfit.optimize`:

    0-2    hand global rotation (axis-angle, rad)
    3-5    hand global translation (mm)
    6-50   joint angles, joint-major, (flexion, abduction, twist) per joint
    51-53  object rotation (axis-angle, rad)
    54-56  object translation (mm)

Terms: ``mask`` (silhouette agreement with per-camera class confidences),
``phy`` (sphere repulsion with allowed penetration t), ``limit`` (squared
hinge on joint limits) and ``kp`` (squared keypoint distances).
"""

from __future__ import annotations

import fnmatch
import struct
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from . import hand_model as hm
from .geometry import left_jacobian, rodrigues
from .hand_model import BadIndex, HandPose, ObjectPose
from .render import BACKGROUND, OBJECT, PERSON, merge_layers, rasterize, read_pgm, write_pgm
from .spherize import hand_sphere_set, pose_spheres

N_PARAMS = 57
HAND_ROT = slice(0, 3)
HAND_TRANS = slice(3, 6)
ANGLES = slice(6, 51)
OBJ_ROT = slice(51, 54)
OBJ_TRANS = slice(54, 57)

TERMS = ("mask", "phy", "limit", "kp")
P_MIN = 1e-6
SIMPLEX_TOL = 1e-4
DEFAULT_PENETRATION = 2.0  # mm
SILHOUETTE_FORMS = ("nll", "dot", "l2")


class DimensionMismatch(ValueError):
    pass


# ---------------------------------------------------------------------------
# confidence maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfidenceMaps:
    """Per-pixel class probabilities, shape (3, H, W) in (object, person, background) order."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 3 or p.shape[0] != 3:
            raise DimensionMismatch("confidence maps must have shape (3, H, W)")
        if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
            raise ValueError("confidence values must lie in [0, 1]")
        if np.abs(p.sum(axis=0) - 1.0).max() > SIMPLEX_TOL:
            raise ValueError("per-pixel confidences must sum to 1")
        object.__setattr__(self, "probs", p)

    @property
    def shape(self):
        return self.probs.shape[1:]

    @classmethod
    def from_labels(cls, labels):
        return cls(np.stack([labels == c for c in (OBJECT, PERSON, BACKGROUND)]).astype(float))


def save_confidence_raw(maps, path):
    """Raw planar float32: u32 width, u32 height (little endian), then three planes."""
    h, w = maps.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", w, h))
        fh.write(np.ascontiguousarray(maps.probs, dtype="<f4").tobytes())


def load_confidence_raw(path):
    with open(path, "rb") as fh:
        w, h = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != 3 * w * h:
        raise DimensionMismatch(f"{path}: expected {3 * w * h} floats, found {data.size}")
    p = data.reshape(3, h, w).astype(float)
    # float32 storage can leave the simplex by ~1e-7; renormalize
    return ConfidenceMaps(p / p.sum(axis=0, keepdims=True))


def save_confidence_pgm(maps, paths):
    """Write object, person and background planes as 16-bit PGMs (value / 65535)."""
    for plane, path in zip(maps.probs, paths):
        write_pgm(path, np.rint(plane * 65535).astype(np.int64), 65535)


def load_confidence_pgm(paths):
    planes = []
    for path in paths:
        img, maxval = read_pgm(path)
        planes.append(img / float(maxval))
    if len({p.shape for p in planes}) != 1:
        raise DimensionMismatch("confidence planes differ in size")
    p = np.stack(planes)
    s = p.sum(axis=0, keepdims=True)
    if np.any(s == 0):
        raise ValueError("confidence planes are all zero at some pixel")
    # 16-bit quantization breaks the simplex by up to 1.5/65535
    return ConfidenceMaps(p / s)


# ---------------------------------------------------------------------------
# segmenter class remap
# ---------------------------------------------------------------------------


def load_remap_rules(path=None):
    """Ordered (glob pattern, class) rules; first match wins, unmatched -> background."""
    if path is None:
        text = (resources.files("graspfit") / "data" / "segmenter_remap.txt").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    rules = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in ("object", "person", "background"):
            raise ValueError(f"remap rules line {n}: expected '<pattern> object|person|background'")
        rules.append((parts[0], parts[1]))
    return rules


def remap_matrix(class_names, rules):
    """(3, N) 0/1 matrix summing N segmenter classes into object/person/background."""
    target = {"object": OBJECT, "person": PERSON, "background": BACKGROUND}
    M = np.zeros((3, len(class_names)))
    for i, name in enumerate(class_names):
        cls = "background"
        for pat, c in rules:
            if fnmatch.fnmatchcase(name, pat):
                cls = c
                break
        M[target[cls], i] = 1.0
    return M


def remap_confidences(probs, class_names, rules):
    """Collapse (N, H, W) segmenter probabilities to 3-class ConfidenceMaps."""
    probs = np.asarray(probs, dtype=float)
    if probs.shape[0] != len(class_names):
        raise DimensionMismatch("one probability plane per class name required")
    M = remap_matrix(class_names, rules)
    return ConfidenceMaps(np.tensordot(M, probs, axes=1))


# ---------------------------------------------------------------------------
# individual terms
# ---------------------------------------------------------------------------


def silhouette_energy(maps, rendered, form="nll"):
    """Silhouette disagreement summed over cameras and pixels.

    ``nll``: -sum log max(S(c*), P_MIN), c* the rendered class.
    ``dot``: -sum S(c*), the negated agreement score.
    ``l2``:  sum over classes of (S(c) - onehot(c*))^2.
    """
    if form not in SILHOUETTE_FORMS:
        raise ValueError(f"unknown silhouette form {form!r}")
    if len(maps) != len(rendered):
        raise DimensionMismatch("one rendering per confidence map required")
    total = 0.0
    for m, r in zip(maps, rendered):
        labels = r.labels if hasattr(r, "labels") else np.asarray(r)
        if labels.shape != m.shape:
            raise DimensionMismatch(f"rendering {labels.shape} vs maps {m.shape}")
        p = np.take_along_axis(m.probs, labels[None].astype(np.int64), axis=0)[0]
        if form == "nll":
            total -= np.log(np.maximum(p, P_MIN)).sum()
        elif form == "dot":
            total -= p.sum()
        else:
            total += (m.probs**2).sum() - 2.0 * p.sum() + p.size
    return float(total)


def repulsion_energy(hand, obj, t=DEFAULT_PENETRATION):
    """Sum over sphere pairs of max(0, r_h + r_o - |c_h - c_o| - t).

    Returns (E, dE/d hand centers, dE/d object centers).
    """
    if t < 0:
        raise ValueError("allowed penetration must be >= 0")
    hc, oc = hand.centers, obj.centers
    reach = hand.radii[:, None] + obj.radii[None, :] - t
    # cheap screen with the expanded square distance; the 1 mm margin dwarfs
    # its rounding error, and the survivors are measured exactly below
    d2 = np.einsum("ij,ij->i", hc, hc)[:, None] + np.einsum("ij,ij->i", oc, oc)[None, :] - 2.0 * (hc @ oc.T)
    i, j = np.nonzero((reach > 0) & (d2 < (reach + 1.0) ** 2))
    d = hc[i] - oc[j]
    dist = np.sqrt(np.einsum("ij,ij->i", d, d))
    slack = reach[i, j] - dist
    keep = slack > 0
    i, j, d, dist = i[keep], j[keep], d[keep], dist[keep]
    E = float(slack[keep].sum())
    gh = np.zeros_like(hc, dtype=float)
    go = np.zeros_like(oc, dtype=float)
    if len(i):
        # coincident centres have no direction; their pair contributes no gradient
        u = np.where((dist > 0)[:, None], d / np.where(dist > 0, dist, 1.0)[:, None], 0.0)
        np.add.at(gh, i, -u)
        np.add.at(go, j, u)
    return E, gh, go


def keypoint_energy(posed, targets):
    """Sum of squared distances between selected keypoints and targets.

    ``targets`` maps keypoint index to a 3-vector.  Returns (E, gradient
    with the shape of ``posed``).
    """
    posed = np.asarray(posed, dtype=float)
    grad = np.zeros_like(posed)
    if not targets:
        return 0.0, grad
    idx = np.array([int(k) for k in targets])
    bad = (idx < 0) | (idx >= len(posed))
    if bad.any():
        raise BadIndex(f"keypoint index {idx[bad][0]} outside 0..{len(posed) - 1}")
    r = posed[idx] - np.array([np.asarray(v, dtype=float) for v in targets.values()])
    np.add.at(grad, idx, 2.0 * r)
    return float(np.einsum("ij,ij->", r, r)), grad


# ---------------------------------------------------------------------------
# packed state
# ---------------------------------------------------------------------------


def pack(hand_pose, object_pose):
    x = np.empty(N_PARAMS)
    x[HAND_ROT] = hand_pose.global_rotation
    x[HAND_TRANS] = hand_pose.global_translation
    x[ANGLES] = hand_pose.joint_angles
    x[OBJ_ROT] = object_pose.rotation
    x[OBJ_TRANS] = object_pose.translation
    return x


def unpack(x):
    x = np.asarray(x, dtype=float)
    if x.shape != (N_PARAMS,):
        raise ValueError(f"state vector must have {N_PARAMS} entries")
    return HandPose(x[HAND_ROT], x[HAND_TRANS], x[ANGLES]), ObjectPose(x[OBJ_ROT], x[OBJ_TRANS])


# ---------------------------------------------------------------------------
# total energy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyConfig:
    weights: dict = field(default_factory=lambda: {"mask": 0.01, "phy": 5.0, "limit": 1e4, "kp": 1.0})
    penetration: float = DEFAULT_PENETRATION
    silhouette_form: str = "nll"
    silhouette_fd: bool = False
    # central-difference steps per block for the piecewise-constant silhouette
    fd_steps: tuple = (0.01, 1.0, 0.02, 0.01, 1.0)

    def __post_init__(self):
        w = {k: 0.0 for k in TERMS}
        for k, v in dict(self.weights).items():
            if k not in w:
                raise ValueError(f"unknown energy term {k!r}")
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"weight {k!r} must be finite and >= 0")
            w[k] = float(v)
        object.__setattr__(self, "weights", w)
        if self.silhouette_form not in SILHOUETTE_FORMS:
            raise ValueError(f"unknown silhouette form {self.silhouette_form!r}")
        if self.penetration < 0:
            raise ValueError("penetration must be >= 0")

    def with_weights(self, **kw):
        return replace(self, weights={**self.weights, **kw})


@dataclass(frozen=True)
class Scene:
    """Everything the energy needs besides the 57 parameters."""

    model: hm.HandModel
    object_mesh: object  # Mesh in the object's rest frame
    object_spheres: object  # SphereSet in the object's rest frame
    cameras: tuple = ()
    maps: tuple = ()  # ConfidenceMaps per camera
    targets: dict = field(default_factory=dict)  # keypoint index -> 3-vector mm
    _layers: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(self.cameras) != len(self.maps):
            raise DimensionMismatch("one confidence map per camera required")
        for cam, m in zip(self.cameras, self.maps):
            if m.shape != (cam.height, cam.width):
                raise DimensionMismatch(f"maps {m.shape} vs camera {(cam.height, cam.width)}")
        for k in self.targets:
            if not (0 <= int(k) < hm.N_KEYPOINTS):
                raise BadIndex(f"keypoint index {k} outside 0..{hm.N_KEYPOINTS - 1}")


@dataclass(frozen=True)
class EnergyReport:
    terms: dict
    weights: dict
    total: float
    gradient: np.ndarray


def _object_layers(scene, obj_pose):
    # the object is often held fixed while the hand moves; keep its renderings
    key = np.concatenate([obj_pose.rotation, obj_pose.translation]).tobytes()
    cache = scene._layers
    if key not in cache:
        if len(cache) >= 8:
            cache.clear()
        mesh = scene.object_mesh.transformed(obj_pose.matrix())
        cache[key] = [rasterize(None, mesh, cam) for cam in scene.cameras]
    return cache[key]


def render_scene(scene, x):
    """Label images of the posed hand and object for every scene camera."""
    hand_pose, obj_pose = unpack(x)
    T = hm.forward_kinematics(scene.model, hand_pose)
    hand_mesh = hm.skin(scene.model, T)
    layers = _object_layers(scene, obj_pose)
    return [merge_layers(obj, rasterize(hand_mesh, None, cam)) for obj, cam in zip(layers, scene.cameras)]


def _silhouette(scene, x, cfg):
    return silhouette_energy(scene.maps, render_scene(scene, x), cfg.silhouette_form)


def silhouette_lower_bound(scene, cfg):
    """Smallest value the silhouette term can take for this scene."""
    if cfg.silhouette_form == "dot":
        return -float(sum(m.probs[0].size for m in scene.maps))
    return 0.0


def smooth_energy(x, scene, cfg, tangent=False):
    """All analytically differentiated terms: (terms dict without mask, gradient)."""
    x = np.asarray(x, dtype=float)
    w = cfg.weights
    hand_pose, obj_pose = unpack(x)
    model = scene.model
    terms = {k: 0.0 for k in TERMS}
    grad = np.zeros(N_PARAMS)
    T = hm.forward_kinematics(model, hand_pose)

    pts, attach, g = [], [], []
    if w["kp"] > 0 and scene.targets:
        kp = hm.keypoints(model, T)
        terms["kp"], gk = keypoint_energy(kp, scene.targets)
        pts.append(kp)
        attach.append(hm.keypoint_joints(model))
        g.append(w["kp"] * gk)
    if w["phy"] > 0 and len(model.sphere_radii) and len(scene.object_spheres):
        hs = pose_spheres(hand_sphere_set(model), hm.skinning_transforms(model, T))
        Tobj = obj_pose.matrix()
        os_ = pose_spheres(scene.object_spheres, Tobj)
        terms["phy"], gh, go = repulsion_energy(hs, os_, cfg.penetration)
        pts.append(hs.centers)
        attach.append(hs.joints)
        g.append(w["phy"] * gh)
        go = w["phy"] * go
        g_obj_rot = np.cross(os_.centers - Tobj[:3, 3], go).sum(axis=0)
        grad[OBJ_TRANS] += go.sum(axis=0)
        grad[OBJ_ROT] += g_obj_rot if tangent else left_jacobian(obj_pose.rotation).T @ g_obj_rot
    if pts:
        g_rot, g_trans, g_ang = hm.pull_back(
            model, hand_pose, T, np.vstack(pts), np.concatenate(attach), np.vstack(g)
        )
        grad[HAND_ROT] += g_rot if tangent else hm.tangent_to_axis_angle(hand_pose.global_rotation, g_rot)
        grad[HAND_TRANS] += g_trans
        grad[ANGLES] += g_ang
    if w["limit"] > 0:
        terms["limit"], gl = hm.limit_penalty(model, hand_pose)
        grad[ANGLES] += w["limit"] * gl
    return terms, grad


def total_energy(x, scene, cfg, tangent=False, smooth=None):
    """Weighted energy and its gradient over the packed 57-vector.

    With ``tangent`` the two rotation blocks of the gradient are taken with
    respect to world-frame left increments exp(d) R instead of the
    axis-angle coordinates.  The silhouette contributes to the gradient only
    when ``cfg.silhouette_fd`` is set.  ``smooth`` may carry a precomputed
    :func:`smooth_energy` result for the same arguments.
    """
    x = np.asarray(x, dtype=float)
    w = cfg.weights
    terms, grad = smooth if smooth is not None else smooth_energy(x, scene, cfg, tangent)
    terms = dict(terms)
    grad = grad.copy()
    if w["mask"] > 0 and scene.cameras:
        terms["mask"] = _silhouette(scene, x, cfg)
        if cfg.silhouette_fd:
            grad += w["mask"] * silhouette_fd_gradient(scene, x, cfg, tangent)
    total = float(sum(w[k] * terms[k] for k in TERMS))
    return EnergyReport(terms, dict(w), total, grad)


def _block_steps(cfg):
    h = np.empty(N_PARAMS)
    for sl, s in zip((HAND_ROT, HAND_TRANS, ANGLES, OBJ_ROT, OBJ_TRANS), cfg.fd_steps):
        h[sl] = s
    return h


def apply_increment(x, delta, tangent):
    """x + delta, composing rotation blocks on the left when ``tangent``."""
    y = np.asarray(x, dtype=float) + delta
    if tangent:
        from .geometry import rotation_log

        for sl in (HAND_ROT, OBJ_ROT):
            y[sl] = rotation_log(rodrigues(delta[sl]) @ rodrigues(x[sl]))
    return y


def silhouette_fd_gradient(scene, x, cfg, tangent=False):
    """Central differences of the silhouette term with coarse per-block steps."""
    h = _block_steps(cfg)
    g = np.zeros(N_PARAMS)
    for i in range(N_PARAMS):
        e = np.zeros(N_PARAMS)
        e[i] = h[i]
        if tangent:
            up, dn = apply_increment(x, e, True), apply_increment(x, -e, True)
        else:
            up, dn = x + e, x - e
        g[i] = (_silhouette(scene, up, cfg) - _silhouette(scene, dn, cfg)) / (2 * h[i])
    return g
