"""On-disk refinement inputs.

A frames directory holds a static camera rig and any number of frames::

    object.obj          object mesh in its rest frame
    object.spheres      optional sphere set for the object (spherized on load otherwise)
    cameras.txt         per line: fx fy cx cy width height, then the 4x4 world->camera matrix row-major
    init.txt            pose file: frame id then 57 floats, the starting state of each frame
    <frame>/cam<k>.conf confidence maps of camera k, raw float32 (see energy.save_confidence_raw)
    <frame>/keypoints.txt  per line: keypoint index x y z (mm)
"""

from __future__ import annotations

import os

import numpy as np

from .energy import Scene, load_confidence_raw, save_confidence_raw
from .geometry import load_mesh, save_obj
from .optimize import load_poses, save_poses
from .render import Camera
from .spherize import load_spheres, save_spheres, spherize_mesh


def save_cameras(cameras, path):
    with open(path, "w") as fh:
        for c in cameras:
            vals = [c.fx, c.fy, c.cx, c.cy] + [float(v) for v in c.extrinsic.reshape(-1)]
            fh.write(" ".join(repr(float(v)) for v in vals[:4]) + f" {c.width} {c.height} "
                     + " ".join(repr(v) for v in vals[4:]) + "\n")


def load_cameras(path):
    cams = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            if len(parts) != 22:
                raise ValueError(f"{path}:{n}: expected 22 values, got {len(parts)}")
            v = [float(p) for p in parts]
            cams.append(Camera(v[0], v[1], v[2], v[3], int(parts[4]), int(parts[5]), np.array(v[6:]).reshape(4, 4)))
    return tuple(cams)


def save_keypoints(targets, path):
    with open(path, "w") as fh:
        for k in sorted(targets):
            fh.write(f"{k} " + " ".join(repr(float(v)) for v in targets[k]) + "\n")


def load_keypoints(path):
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ValueError(f"{path}:{n}: expected 'index x y z'")
            out[int(parts[0])] = np.array([float(p) for p in parts[1:]])
    return out


def write_frames(root, object_mesh, object_spheres, cameras, frames):
    """``frames`` is a list of (frame id, maps per camera, keypoint targets, initial state)."""
    os.makedirs(root, exist_ok=True)
    save_obj(object_mesh, os.path.join(root, "object.obj"))
    save_spheres(object_spheres, os.path.join(root, "object.spheres"))
    save_cameras(cameras, os.path.join(root, "cameras.txt"))
    for frame, maps, targets, _ in frames:
        d = os.path.join(root, frame)
        os.makedirs(d, exist_ok=True)
        for k, m in enumerate(maps):
            save_confidence_raw(m, os.path.join(d, f"cam{k}.conf"))
        save_keypoints(targets, os.path.join(d, "keypoints.txt"))
    save_poses({f: x for f, _, _, x in frames}, os.path.join(root, "init.txt"))


def load_object(root):
    mesh = load_mesh(os.path.join(root, "object.obj"))
    sp = os.path.join(root, "object.spheres")
    spheres = load_spheres(sp)[0] if os.path.exists(sp) else spherize_mesh(mesh)[0]
    return mesh, spheres


def frame_ids(root):
    return sorted(load_poses(os.path.join(root, "init.txt")))


def load_frame(root, frame, model, obj=None):
    """(Scene, initial state) of one frame."""
    mesh, spheres = obj or load_object(root)
    cams = load_cameras(os.path.join(root, "cameras.txt"))
    d = os.path.join(root, frame)
    maps = tuple(load_confidence_raw(os.path.join(d, f"cam{k}.conf")) for k in range(len(cams)))
    targets = load_keypoints(os.path.join(d, "keypoints.txt"))
    x0 = load_poses(os.path.join(root, "init.txt"))[frame]
    return Scene(model, mesh, spheres, cams, maps, targets), x0
