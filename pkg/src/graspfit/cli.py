"""Command-line front end: spherize, synth, refine, evaluate, compare.

Exit codes: 0 ok, 2 input error, 3 some frame stopped at the iteration cap
(or on a non-finite energy).
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import contact
from . import hand_model as hm
from .config import ConfigError, dataclass_fields, fill, read_config
from .energy import EnergyConfig, unpack
from .frames import frame_ids, load_frame, load_object, write_frames
from .geometry import NonWatertight, load_mesh
from .optimize import NonFiniteEnergy, OptimizerConfig, load_poses, minimize, save_poses, save_trace
from .spherize import (
    DEFAULT_COVERAGE, DEFAULT_MAX_SPHERES, DEFAULT_VOXEL, mesh_hash, pack_spheres, save_spheres, voxelize,
)
from .suite import OBJECT_PARAMS
from .synth import SyntheticScene, bundled_object, generate, ring_cameras

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 2, 3


class InputError(Exception):
    pass


def _fail(msg):
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_INPUT


def _load_hand(source):
    if source in (None, "default"):
        return hm.load_default_hand()
    return hm.load_hand_model(source)


def _map(fn, tasks, jobs):
    # each task is self-contained, so the result does not depend on the worker count
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as ex:
        return list(ex.map(fn, tasks))


# ---------------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------------

SCENE_FIELDS = {**dataclass_fields(SyntheticScene), "frames": int}
WEIGHT_FIELDS = {
    "mask": float, "phy": float, "limit": float, "kp": float,
    "penetration": float, "silhouette_form": str, "silhouette_fd": bool,
    "freeze_object": bool,
    **{k: v for k, v in dataclass_fields(OptimizerConfig).items() if k != "frozen"},
    "frozen": tuple,
}


def scene_config(path):
    """(SyntheticScene, frame count) from a flat config file."""
    entries = read_config(path)
    vals = fill(path, entries, SCENE_FIELDS)
    n = vals.pop("frames", 1)
    if n < 1:
        raise ConfigError(path, entries["frames"][1], "frames", "must be >= 1")
    if "keypoints" in vals:
        vals["keypoints"] = tuple(vals["keypoints"])
    try:
        return SyntheticScene(**vals), n
    except ValueError as e:
        raise ConfigError(path, 0, None, str(e)) from None


def weights_config(path):
    """(EnergyConfig, OptimizerConfig) from a flat config file; None gives the defaults."""
    if path is None:
        return EnergyConfig(), OptimizerConfig(frozen=OBJECT_PARAMS)
    entries = read_config(path)
    vals = fill(path, entries, WEIGHT_FIELDS)
    for k in ("mask", "phy", "limit", "kp", "penetration"):
        if k in vals and not (np.isfinite(vals[k]) and vals[k] >= 0):
            raise ConfigError(path, entries[k][1], k, "must be a finite number >= 0")
    weights = {k: vals.pop(k) for k in ("mask", "phy", "limit", "kp") if k in vals}
    energy_kw = {k: vals.pop(k) for k in ("penetration", "silhouette_form", "silhouette_fd") if k in vals}
    frozen = set(vals.pop("frozen", ()))
    if vals.pop("freeze_object", True):
        frozen |= set(OBJECT_PARAMS)
    for k, v in list(energy_kw.items()) + list(vals.items()):
        try:
            if k in energy_kw:
                EnergyConfig(**{k: v})
            else:
                OptimizerConfig(**{k: v})
        except ValueError as e:
            raise ConfigError(path, entries[k][1], k, str(e)) from None
    try:
        ecfg = EnergyConfig(**energy_kw).with_weights(**weights)
        ocfg = OptimizerConfig(frozen=tuple(sorted(frozen)), **vals)
    except ValueError as e:
        raise ConfigError(path, entries.get("frozen", ("", 0))[1], "frozen", str(e)) from None
    return ecfg, ocfg


# ---------------------------------------------------------------------------
# spherize
# ---------------------------------------------------------------------------


def cmd_spherize(args):
    try:
        mesh = load_mesh(args.mesh)
        spheres, coverage = pack_spheres(voxelize(mesh, args.voxel, seed=args.seed), args.coverage, args.max_spheres)
    except NonWatertight as e:
        print(f"error: {args.mesh} is not watertight; offending edges:", file=sys.stderr)
        for a, b in e.edges:
            print(f"{a} {b}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, ValueError) as e:
        return _fail(e)
    save_spheres(spheres, args.output, mesh_hash(mesh))
    print(f"spheres: {len(spheres)}")
    print(f"coverage: {coverage:.4f}")
    print(f"max radius (mm): {spheres.radii.max():.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def _synth_task(task):
    cfg, seed = task
    d = generate(cfg, seed)
    return d.scene.maps, d.scene.targets, d.x_init, d.x_true


def _synth_frames(cfg, n, seed, jobs):
    ids = [f"{i:04d}" for i in range(n)]
    return ids, _map(_synth_task, [(cfg, seed + i) for i in range(n)], jobs)


def cmd_synth(args):
    try:
        cfg, n = scene_config(args.scene)
    except (ConfigError, OSError) as e:
        return _fail(e)
    ids, out = _synth_frames(cfg, n, args.seed, args.jobs)
    mesh, spheres = bundled_object(cfg.object_name)
    cams = ring_cameras(cfg.n_cameras, cfg.ring_radius, cfg.image_size, cfg.focal)
    write_frames(args.output, mesh, spheres, cams, [(f, m, t, x0) for f, (m, t, x0, _) in zip(ids, out)])
    truth = {f: xt for f, (_, _, _, xt) in zip(ids, out)}
    save_poses(truth, os.path.join(args.output, "truth.txt"))
    model = hm.load_default_hand()
    tips = {f: hm.fingertips(model, unpack(x)[0]) for f, x in truth.items()}
    contact.save_annotations(tips, os.path.join(args.output, "annotations.csv"))
    print(f"wrote {n} frame(s) to {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# refine
# ---------------------------------------------------------------------------


def _refine_task(task):
    source, key, hand, ecfg, ocfg = task
    model = _load_hand(hand)
    if source == "scene":
        cfg, seed = key
        d = generate(cfg, seed, model)
        scene, x0 = d.scene, d.x_init
    else:
        root, frame = key
        scene, x0 = load_frame(root, frame, model)
    try:
        x, trace = minimize(x0, scene, ecfg, ocfg)
    except NonFiniteEnergy as e:
        return x0, e.trace
    return x, trace


def cmd_refine(args):
    try:
        ecfg, ocfg = weights_config(args.weights)
        if args.scene:
            cfg, n = scene_config(args.scene)
            ids = [f"{i:04d}" for i in range(n)]
            tasks = [("scene", (cfg, args.seed + i), args.hand, ecfg, ocfg) for i in range(n)]
        else:
            ids = frame_ids(args.frames)
            load_object(args.frames)  # fail early on a bad object
            tasks = [("frames", (args.frames, f), args.hand, ecfg, ocfg) for f in ids]
        _load_hand(args.hand)
    except (ConfigError, OSError, ValueError, NonWatertight) as e:
        return _fail(e)
    try:
        results = _map(_refine_task, tasks, args.jobs)
    except (OSError, ValueError) as e:
        return _fail(e)
    os.makedirs(os.path.join(args.output, "traces"), exist_ok=True)
    save_poses({f: x for f, (x, _) in zip(ids, results)}, os.path.join(args.output, "poses.txt"))
    worst = EXIT_OK
    with open(os.path.join(args.output, "status.csv"), "w") as fh:
        fh.write("frame,status,iterations,total\n")
        for f, (_, tr) in zip(ids, results):
            save_trace(tr, os.path.join(args.output, "traces", f"{f}.csv"))
            fh.write(f"{f},{tr.status},{tr.iterations},{tr.totals[-1]:.10g}\n")
            if tr.status in ("max_iterations", "non_finite"):
                worst = EXIT_NOT_CONVERGED
            print(f"{f}: {tr.status} after {tr.iterations} iterations, E = {tr.totals[-1]:.6g}")
    return worst


# ---------------------------------------------------------------------------
# evaluate / compare
# ---------------------------------------------------------------------------


def _contact_task(task):
    model, obj_mesh, x, threshold = task
    hand, obj = unpack(x)
    hand_mesh = hm.skin(model, hm.forward_kinematics(model, hand))
    return contact.contact_map(hand_mesh, obj_mesh.transformed(obj.matrix()), threshold)


def cmd_evaluate(args):
    try:
        path = os.path.join(args.poses, "poses.txt") if os.path.isdir(args.poses) else args.poses
        poses = load_poses(path)
        if not poses:
            raise InputError(f"{path}: no poses")
        model = _load_hand(args.hand)
        obj_mesh = load_mesh(args.object)
        contact.check_watertight(obj_mesh)
        ann = contact.load_annotations(args.annotations) if args.annotations else None
    except (InputError, OSError, ValueError) as e:
        return _fail(e)
    frames = sorted(poses)
    maps = _map(_contact_task, [(model, obj_mesh, poses[f], args.threshold) for f in frames], args.jobs)
    try:
        agg = contact.aggregate(maps)
        rest = hm.skin(model, hm.forward_kinematics(model, hm.HandPose()))
        os.makedirs(args.output, exist_ok=True)
        contact.export_contact_visual(agg, rest, os.path.join(args.output, "contact.ply"))
    except contact.MixedTopology as e:
        return _fail(e)
    contact.save_frame_csv(frames, maps, os.path.join(args.output, "frames.csv"))
    contact.save_summary_csv(agg, os.path.join(args.output, "summary.csv"))
    contact.save_vertex_csv(agg, os.path.join(args.output, "vertices.csv"))
    print(f"frames: {agg.frames}")
    print(f"penetration mean (mm), std (mm): {agg.penetration_mean:.2f}, {agg.penetration_std:.2f}")
    print(f"total contact fraction: {agg.total_fraction:.4f}")
    if ann is not None:
        try:
            ev = contact.fingertip_accuracy(model, {f: unpack(poses[f])[0] for f in poses}, ann)
        except contact.MissingFrame as e:
            return _fail(f"no pose for annotated frame {e.args[0]}")
        with open(os.path.join(args.output, "fingertips.csv"), "w") as fh:
            fh.write("frame,finger,error_mm\n")
            for f in sorted(ev.errors):
                for name, err in zip(hm.FINGERS, ev.errors[f]):
                    fh.write(f"{f},{name},{err:.9f}\n")
        summary = f"mean (mm), std (mm)\n{ev.mean:.2f}, {ev.std:.2f}\n"
        with open(os.path.join(args.output, "fingertip_summary.txt"), "w") as fh:
            fh.write(summary)
        print("fingertip " + summary.replace("\n", ": ", 1), end="")
    return EXIT_OK


COMPARE_METRICS = ("frames", "mean_penetration_mm", "std_penetration_mm", "total_contact_fraction")


def cmd_compare(args):
    try:
        sa = contact.load_summary_csv(os.path.join(args.eval_a, "summary.csv"))
        sb = contact.load_summary_csv(os.path.join(args.eval_b, "summary.csv"))
        fa = contact.load_vertex_csv(os.path.join(args.eval_a, "vertices.csv"))
        fb = contact.load_vertex_csv(os.path.join(args.eval_b, "vertices.csv"))
        mesh, _ = contact.load_contact_visual(os.path.join(args.eval_a, "contact.ply"))
    except (OSError, ValueError, KeyError, StopIteration) as e:
        return _fail(e)
    if len(fa) != len(fb) or len(fa) != len(mesh.vertices):
        return _fail(f"vertex counts differ: {len(fa)} vs {len(fb)}")
    os.makedirs(args.output, exist_ok=True)
    with open(os.path.join(args.output, "compare.csv"), "w") as fh:
        fh.write("metric,a,b,delta\n")
        for k in COMPARE_METRICS:
            a, b = sa[k], sb[k]
            if k == "frames":
                fh.write(f"{k},{a},{b},{b - a}\n")
            else:
                fh.write(f"{k},{a:.9f},{b:.9f},{b - a:.9f}\n")
            print(f"{k}: {a} -> {b} (delta {b - a:+.6g})")
    contact.export_contact_visual(fa, mesh, os.path.join(args.output, "a.ply"))
    contact.export_contact_visual(fb, mesh, os.path.join(args.output, "b.ply"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="graspfit", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("spherize", parents=[common], help="inner sphere set of a mesh")
    s.add_argument("mesh")
    s.add_argument("--voxel", type=float, default=DEFAULT_VOXEL)
    s.add_argument("--coverage", type=float, default=DEFAULT_COVERAGE)
    s.add_argument("--max-spheres", type=int, default=DEFAULT_MAX_SPHERES)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(fn=cmd_spherize)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic frames directory")
    s.add_argument("--scene", required=True)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("refine", parents=[common], help="refine hand poses frame by frame")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--scene")
    src.add_argument("--frames")
    s.add_argument("--weights")
    s.add_argument("--hand", default="default")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(fn=cmd_refine)

    s = sub.add_parser("evaluate", parents=[common], help="contact maps, penetration, fingertip accuracy")
    s.add_argument("--poses", required=True)
    s.add_argument("--hand", default="default")
    s.add_argument("--object", required=True)
    s.add_argument("--annotations")
    s.add_argument("--threshold", type=float, default=contact.CONTACT_THRESHOLD)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("compare", parents=[common], help="compare two evaluation outputs")
    s.add_argument("eval_a")
    s.add_argument("eval_b")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(fn=cmd_compare)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        return _fail("--jobs must be >= 1")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
