"""Synthetic grasp scenes with known ground truth.

A grasp is built by placing the object against the palm and closing each
finger until its spheres touch the object's spheres.  Cameras sit on a
horizontal ring around the object and look at its centre.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial.transform import Rotation

from . import hand_model as hm
from .energy import ConfidenceMaps, Scene, pack, repulsion_energy
from .geometry import load_mesh, rigid, rodrigues, rotation_log
from .render import Camera, look_at, rasterize
from .spherize import hand_sphere_set, pose_spheres, spherize_mesh

BUNDLED_OBJECTS = ("cylinder", "cube", "sphere", "lblock")


@dataclass(frozen=True)
class SyntheticScene:
    object_name: str = "cylinder"
    n_cameras: int = 5
    image_size: int = 64
    ring_radius: float = 600.0  # mm
    focal: float = 128.0  # px
    blur_sigma: float = 0.0  # px
    flip_rate: float = 0.0
    keypoint_sigma: float = 0.0  # mm
    rotation_perturbation: float = 10.0  # deg, hand global
    translation_perturbation: float = 20.0  # mm, hand global
    angle_perturbation: float = 15.0  # deg, each joint angle
    object_rotation_perturbation: float = 0.0  # deg
    object_translation_perturbation: float = 0.0  # mm
    keypoints: tuple = tuple(range(hm.N_KEYPOINTS))

    def __post_init__(self):
        if self.n_cameras < 1:
            raise ValueError("need at least one camera")
        if self.image_size < 1 or self.ring_radius <= 0 or self.focal <= 0:
            raise ValueError("camera ring parameters must be positive")
        for name in ("blur_sigma", "flip_rate", "keypoint_sigma", "rotation_perturbation",
                     "translation_perturbation", "angle_perturbation",
                     "object_rotation_perturbation", "object_translation_perturbation"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if self.flip_rate > 1:
            raise ValueError("flip_rate must be <= 1")
        if self.object_name not in BUNDLED_OBJECTS:
            raise ValueError(f"unknown object {self.object_name!r}")


@dataclass(frozen=True)
class SyntheticData:
    scene: Scene  # energy scene with noisy maps and targets
    x_true: np.ndarray
    x_init: np.ndarray
    labels: tuple = field(default_factory=tuple)  # ground-truth label images per camera


_OBJECT_CACHE = {}


def bundled_object(name):
    """(mesh, rest-frame sphere set) of a bundled object, spherized once per process."""
    if name not in _OBJECT_CACHE:
        path = resources.files("graspfit") / "data" / "meshes" / f"{name}.obj"
        mesh = load_mesh(str(path))
        spheres, _ = spherize_mesh(mesh, max_spheres=1000)
        _OBJECT_CACHE[name] = (mesh, spheres)
    return _OBJECT_CACHE[name]


def ring_cameras(n, radius=600.0, size=64, focal=128.0, target=(0.0, 0.0, 0.0)):
    target = np.asarray(target, dtype=float)
    cams = []
    for k in range(n):
        a = 2 * np.pi * k / n
        eye = target + radius * np.array([np.cos(a), np.sin(a), 0.25])
        c = (size - 1) / 2.0
        cams.append(Camera(focal, focal, c, c, size, size, look_at(eye, target)))
    return tuple(cams)


# ---------------------------------------------------------------------------
# ground-truth grasp
# ---------------------------------------------------------------------------


def _overlap(model, pose, obj_spheres_world, joints=None):
    T = hm.forward_kinematics(model, pose)
    hs = pose_spheres(hand_sphere_set(model), hm.skinning_transforms(model, T))
    if joints is not None:
        keep = np.isin(hs.joints, joints)
        hs = type(hs)(hs.centers[keep], hs.radii[keep], hs.joints[keep])
    return repulsion_energy(hs, obj_spheres_world, 0.0)[0]


def _bisect(f, lo, hi, iters=30):
    """Point next to the switch of f, on the side of ``lo`` (f(lo) False, f(hi) True)."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid):
            hi = mid
        else:
            lo = mid
    return lo


def make_grasp(model, obj_spheres, rng):
    """Hand pose and object-in-hand transform for a closed power grasp.

    The object is slid along the palm normal until it rests against the
    palm, then every finger closes by a random flexion profile until it
    touches.  Returns (hand joint angles, 4x4 object pose in the hand frame).
    """
    angles = np.zeros((15, 3))
    for j in range(15):
        lim = model.limits[j + 1]
        angles[j, 1] = rng.uniform(-0.3, 0.3) * lim[1, 1]
        angles[j, 2] = rng.uniform(-0.2, 0.2) * lim[2, 1]
    # object axis across the fingers, centred below the finger roots
    R = Rotation.from_euler("x", rng.uniform(-0.15, 0.15)).as_matrix()
    center = np.array([rng.uniform(55.0, 75.0), 0.0, rng.uniform(-8.0, 2.0)])

    def obj_at(y):
        T = rigid(R, center + [0.0, y, 0.0])
        return pose_spheres(obj_spheres, T), T

    pose = hm.HandPose(joint_angles=angles.reshape(-1))
    # slide in from the palmar side until the first sphere contact
    y = _bisect(lambda yy: _overlap(model, pose, obj_at(-yy)[0]) > 0, 400.0, 0.0)
    world_spheres, T_obj = obj_at(-y)

    for name in hm.FINGERS:
        root = hm.FINGER_ROOT[name]
        idx = np.arange(root, root + 3)
        profile = rng.uniform(0.6, 1.0, size=3)
        flex_max = model.limits[idx, 0, 1] * 0.95

        def with_s(s):
            a = angles.copy()
            a[idx - 1, 0] = s * profile * flex_max
            return a

        def touches(s):
            p = hm.HandPose(joint_angles=with_s(s).reshape(-1))
            return _overlap(model, p, world_spheres, joints=idx) > 0

        s = 1.0 if not touches(1.0) else _bisect(touches, 0.0, 1.0)
        angles = with_s(s)
    return angles.reshape(-1), T_obj


# ---------------------------------------------------------------------------
# observations
# ---------------------------------------------------------------------------


def _noisy_maps(labels, cfg, rng):
    maps = []
    for lab in labels:
        lab = lab.copy()
        if cfg.flip_rate > 0:
            flip = rng.random(lab.shape) < cfg.flip_rate
            lab[flip] = (lab[flip] + rng.integers(1, 3, size=int(flip.sum()))) % 3
        onehot = np.stack([lab == c for c in range(3)]).astype(float)
        if cfg.blur_sigma > 0:
            onehot = np.stack([gaussian_filter(p, cfg.blur_sigma, mode="nearest") for p in onehot])
            onehot = np.clip(onehot, 0.0, None)
            onehot /= onehot.sum(axis=0, keepdims=True)
        maps.append(ConfidenceMaps(onehot))
    return tuple(maps)


def _perturb_rotation(r, max_deg, rng):
    if max_deg == 0:
        return np.array(r, dtype=float)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    d = axis * np.deg2rad(rng.uniform(0.0, max_deg))
    return rotation_log(rodrigues(d) @ rodrigues(r))


def _perturb_vector(v, max_len, rng):
    if max_len == 0:
        return np.array(v, dtype=float)
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    return v + u * rng.uniform(0.0, max_len)


def generate(cfg, seed, model=None):
    """Ground truth, observations and a perturbed start for one synthetic frame."""
    rng = np.random.default_rng(seed)
    model = model or hm.load_default_hand()
    mesh, obj_spheres = bundled_object(cfg.object_name)
    angles, T_ho = make_grasp(model, obj_spheres, rng)

    # world: object centred at the origin with a random orientation
    R_wo = Rotation.random(random_state=rng).as_matrix()
    T_wo = rigid(R_wo, rng.uniform(-10.0, 10.0, size=3))
    T_wh = T_wo @ np.linalg.inv(T_ho)
    hand = hm.HandPose(rotation_log(T_wh[:3, :3]), T_wh[:3, 3], angles)
    obj = hm.ObjectPose(rotation_log(T_wo[:3, :3]), T_wo[:3, 3])
    x_true = pack(hand, obj)

    cams = ring_cameras(cfg.n_cameras, cfg.ring_radius, cfg.image_size, cfg.focal)
    T = hm.forward_kinematics(model, hand)
    hand_mesh = hm.skin(model, T)
    obj_mesh = mesh.transformed(obj.matrix())
    labels = tuple(rasterize(hand_mesh, obj_mesh, c).labels for c in cams)
    maps = _noisy_maps(labels, cfg, rng)

    kp = hm.keypoints(model, T)
    noise = rng.normal(scale=cfg.keypoint_sigma, size=kp.shape) if cfg.keypoint_sigma > 0 else np.zeros_like(kp)
    targets = {int(k): kp[k] + noise[k] for k in cfg.keypoints}

    x0 = x_true.copy()
    x0[0:3] = _perturb_rotation(x_true[0:3], cfg.rotation_perturbation, rng)
    x0[3:6] = _perturb_vector(x_true[3:6], cfg.translation_perturbation, rng)
    if cfg.angle_perturbation > 0:
        x0[6:51] += np.deg2rad(rng.uniform(-cfg.angle_perturbation, cfg.angle_perturbation, size=45))
    x0[51:54] = _perturb_rotation(x_true[51:54], cfg.object_rotation_perturbation, rng)
    x0[54:57] = _perturb_vector(x_true[54:57], cfg.object_translation_perturbation, rng)

    scene = Scene(model, mesh, obj_spheres, cams, maps, targets)
    return SyntheticData(scene, x_true, x0, labels)
