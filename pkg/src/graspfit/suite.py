"""Seeded synthetic refinement suite: recovery error and joint-limit audit.

Two energy configurations are compared on the same scenes.  "v3" is the
default energy (cross-entropy silhouette, sphere repulsion, joint limits);
"v2" swaps in the L2 silhouette and switches repulsion and limits off.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import hand_model as hm
from .energy import OBJ_ROT, OBJ_TRANS, EnergyConfig, unpack
from .optimize import OptimizerConfig, minimize
from .synth import SyntheticScene, generate

OBJECT_PARAMS = tuple(range(OBJ_ROT.start, OBJ_TRANS.stop))
THUMB_TWISTS = tuple((j - 1) * 3 + 2 for j in (13, 14, 15))  # indices into the 45 angles

V3 = EnergyConfig()
V2 = EnergyConfig(silhouette_form="l2").with_weights(limit=0.0, phy=0.0)
SUITE_OPTIMIZER = OptimizerConfig(frozen=OBJECT_PARAMS)
NOISY = SyntheticScene(keypoint_sigma=3.0, blur_sigma=2.0)
CLEAN = SyntheticScene()


@dataclass(frozen=True)
class RunResult:
    seed: int
    fingertip_error: float  # mm, mean over the 5 fingertips
    max_violation: float  # deg, over all angles
    thumb_twist_violation: float  # deg, max over the thumb twists
    status: str
    iterations: int
    seconds: float
    x: np.ndarray


def run_one(data, energy_cfg, opt_cfg=SUITE_OPTIMIZER):
    t0 = time.perf_counter()
    x, trace = minimize(data.x_init, data.scene, energy_cfg, opt_cfg)
    dt = time.perf_counter() - t0
    model = data.scene.model
    pose = unpack(x)[0]
    truth = hm.fingertips(model, unpack(data.x_true)[0])
    err = float(np.linalg.norm(hm.fingertips(model, pose) - truth, axis=1).mean())
    viol = np.rad2deg(hm.limit_violation(model, pose))
    return RunResult(-1, err, float(viol.max()), float(viol[list(THUMB_TWISTS)].max()),
                     trace.status, trace.iterations, dt, x)


def run_suite(scene_cfg, seeds, configs, opt_cfg=SUITE_OPTIMIZER, model=None, log=None):
    """{name: [RunResult per seed]} for every named energy config."""
    model = model or hm.load_default_hand()
    out = {name: [] for name in configs}
    for seed in seeds:
        data = generate(scene_cfg, seed, model)
        for name, cfg in configs.items():
            r = run_one(data, cfg, opt_cfg)
            r = replace(r, seed=seed)
            out[name].append(r)
            if log:
                log(f"{name} seed={seed} err={r.fingertip_error:.3f} mm viol={r.max_violation:.2f} deg "
                    f"thumb_twist={r.thumb_twist_violation:.2f} deg {r.status} it={r.iterations} {r.seconds:.1f}s")
    return out
