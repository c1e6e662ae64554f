"""Grasp-quality evaluation: contact maps, penetration statistics, fingertip accuracy.

A hand vertex is in contact when its unsigned distance to the object surface
is below the threshold (4 mm by default).  Penetration of a frame is the mean
depth of the hand vertices lying inside the object; across frames it is
pooled as mean and standard deviation of the per-frame means.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import hand_model as hm
from .geometry import Mesh, TriangleBVH, check_watertight, ray_parity_inside, signed_distance  # noqa: F401

CONTACT_THRESHOLD = 4.0  # mm


class MixedTopology(ValueError):
    pass


class MissingFrame(KeyError):
    pass


@dataclass(frozen=True)
class ContactMap:
    contact: np.ndarray  # per hand vertex: flag (single frame) or fraction of frames
    penetration_mean: float  # mm
    penetration_std: float  # mm
    frame_means: tuple = ()  # per-frame mean penetration, mm
    signed_distance: np.ndarray | None = None  # single-frame maps only

    def __post_init__(self):
        c = np.asarray(self.contact, dtype=float)
        if np.any(c < 0) or np.any(c > 1):
            raise ValueError("contact fractions must lie in [0, 1]")
        if self.penetration_mean < 0 or self.penetration_std < 0:
            raise ValueError("penetration statistics must be >= 0")
        object.__setattr__(self, "contact", c)

    @property
    def frames(self):
        return len(self.frame_means)

    @property
    def n_contacts(self):
        return int(np.count_nonzero(self.contact))

    @property
    def total_fraction(self):
        return float(self.contact.mean()) if len(self.contact) else 0.0


def contact_map(hand_mesh, object_mesh, threshold=CONTACT_THRESHOLD, bvh=None):
    """Single-frame contact flags and penetration for posed meshes."""
    check_watertight(object_mesh)
    bvh = bvh or TriangleBVH(object_mesh)
    v = hand_mesh.vertices
    d, _, _ = bvh.query(v)
    inside = ray_parity_inside(v, object_mesh)
    sd = np.where(inside, -d, d)
    depth = d[inside]
    mean = float(depth.mean()) if len(depth) else 0.0
    std = float(depth.std()) if len(depth) else 0.0
    return ContactMap((d < threshold).astype(float), mean, std, (mean,), sd)


def aggregate(maps):
    """Per-vertex contact fraction over frames; penetration as mean/std of frame means."""
    maps = list(maps)
    if not maps:
        raise ValueError("nothing to aggregate")
    n = len(maps[0].contact)
    if any(len(m.contact) != n for m in maps):
        raise MixedTopology("contact maps have different vertex counts")
    frame_means = tuple(x for m in maps for x in m.frame_means)
    if any(m.frames != 1 for m in maps):
        raise ValueError("aggregate takes single-frame maps")
    frac = np.mean([m.contact > 0 for m in maps], axis=0)
    fm = np.array(frame_means)
    return ContactMap(frac, float(fm.mean()), float(fm.std()), frame_means)


# ---------------------------------------------------------------------------
# fingertip accuracy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FingertipEval:
    errors: dict  # frame -> (5,) mm, FINGERS order
    mean: float
    std: float


def fingertip_accuracy(model, predicted, annotations):
    """Euclidean fingertip errors against annotations.

    ``predicted`` maps frame id to a HandPose, ``annotations`` maps frame id to
    a (5, 3) array in FINGERS order.  Statistics pool every (frame, finger).
    """
    errors = {}
    for frame, ann in annotations.items():
        if frame not in predicted:
            raise MissingFrame(frame)
        tips = hm.fingertips(model, predicted[frame])
        errors[frame] = np.linalg.norm(tips - np.asarray(ann, dtype=float), axis=1)
    allerr = np.concatenate(list(errors.values())) if errors else np.zeros(0)
    mean = float(allerr.mean()) if len(allerr) else 0.0
    std = float(allerr.std()) if len(allerr) else 0.0
    return FingertipEval(errors, mean, std)


def save_annotations(annotations, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "finger", "x", "y", "z"])
        for frame in sorted(annotations):
            for finger, p in zip(hm.FINGERS, np.asarray(annotations[frame], dtype=float)):
                w.writerow([frame, finger] + [f"{v:.6f}" for v in p])


def load_annotations(path):
    out = {}
    with open(path) as fh:
        reader = csv.DictReader(fh)
        missing = {"frame", "finger", "x", "y", "z"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for n, row in enumerate(reader, 2):
            if row["finger"] not in hm.FINGERS:
                raise ValueError(f"{path}:{n}: unknown finger {row['finger']!r}")
            tips = out.setdefault(row["frame"], np.full((5, 3), np.nan))
            tips[hm.FINGERS.index(row["finger"])] = [float(row[k]) for k in "xyz"]
    for frame, tips in out.items():
        if np.isnan(tips).any():
            raise ValueError(f"{path}: frame {frame} lacks some fingertips")
    return out


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

FRAME_COLUMNS = ("frame", "contacts", "mean_penetration_mm", "std_penetration_mm")


def save_frame_csv(frames, maps, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRAME_COLUMNS)
        for f, m in zip(frames, maps):
            w.writerow([f, m.n_contacts, f"{m.penetration_mean:.9f}", f"{m.penetration_std:.9f}"])


def load_frame_csv(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [(r["frame"], int(r["contacts"]), float(r["mean_penetration_mm"]), float(r["std_penetration_mm"]))
            for r in rows]


SUMMARY_COLUMNS = ("frames", "mean_penetration_mm", "std_penetration_mm", "total_contact_fraction")


def save_summary_csv(agg, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        w.writerow([agg.frames, f"{agg.penetration_mean:.9f}", f"{agg.penetration_std:.9f}",
                    f"{agg.total_fraction:.9f}"])


def load_summary_csv(path):
    with open(path) as fh:
        row = next(csv.DictReader(fh))
    return {"frames": int(row["frames"]), **{k: float(row[k]) for k in SUMMARY_COLUMNS[1:]}}


def save_vertex_csv(agg, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vertex", "contact_fraction"])
        for i, f in enumerate(agg.contact):
            w.writerow([i, f"{f:.9f}"])


def load_vertex_csv(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["contact_fraction"]) for r in rows])


def contact_colors(fraction):
    """Blue (0, 0, 255) to red (255, 0, 0), linear, red rounded half up."""
    f = np.asarray(fraction, dtype=float)
    red = np.floor(255.0 * f + 0.5).astype(np.int64)
    return np.stack([red, np.zeros_like(red), 255 - red], axis=1)


def export_contact_visual(contact, mesh, path):
    """ASCII PLY of ``mesh`` with per-vertex colours from contact fractions."""
    frac = contact.contact if isinstance(contact, ContactMap) else np.asarray(contact, dtype=float)
    if len(frac) != len(mesh.vertices):
        raise MixedTopology("one contact value per mesh vertex required")
    rgb = contact_colors(frac)
    lines = [
        "ply", "format ascii 1.0",
        f"element vertex {len(mesh.vertices)}",
        "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue",
        f"element face {len(mesh.faces)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    for p, c in zip(mesh.vertices, rgb):
        lines.append(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}")
    for f in mesh.faces:
        lines.append(f"3 {f[0]} {f[1]} {f[2]}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_contact_visual(path):
    """Returns (Mesh, (V, 3) int colours) from a PLY written by :func:`export_contact_visual`."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    end = lines.index("end_header")
    nv = int(next(ln.split()[2] for ln in lines[:end] if ln.startswith("element vertex")))
    nf = int(next(ln.split()[2] for ln in lines[:end] if ln.startswith("element face")))
    vrows = [ln.split() for ln in lines[end + 1 : end + 1 + nv]]
    frows = [ln.split() for ln in lines[end + 1 + nv : end + 1 + nv + nf]]
    v = np.array([[float(x) for x in r[:3]] for r in vrows]).reshape(-1, 3)
    c = np.array([[int(x) for x in r[3:6]] for r in vrows], dtype=np.int64).reshape(-1, 3)
    f = np.array([[int(x) for x in r[1:4]] for r in frows], dtype=np.int64).reshape(-1, 3)
    return Mesh(v, f), c
