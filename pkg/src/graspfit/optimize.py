"""Scaled gradient descent with Armijo backtracking over the packed 57-vector.

Rotation blocks are updated multiplicatively, R <- exp(d) R, using the
world-frame tangent gradient, so steps never wrap around the axis-angle
singularity at pi.  Trial step lengths come from a Barzilai-Borwein estimate
of the local curvature and are halved until the Armijo condition holds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .energy import (  # noqa: F401  (pack/unpack re-exported)
    ANGLES, HAND_ROT, HAND_TRANS, N_PARAMS, OBJ_ROT, OBJ_TRANS, TERMS, pack,
    silhouette_lower_bound, smooth_energy, total_energy, unpack,
)
from .geometry import left_jacobian, rodrigues, rotation_log

ROTATION_BLOCKS = (HAND_ROT, OBJ_ROT)


class NonFiniteEnergy(FloatingPointError):
    def __init__(self, iteration, trace):
        self.iteration = iteration
        self.trace = trace
        super().__init__(f"energy or gradient became non-finite at iteration {iteration}")


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 200
    initial_step: float = 1.0  # first move, in scaled units, along the steepest entry
    step_decay: float = 0.5
    armijo: float = 1e-4
    tolerance: float = 1e-6  # relative energy change
    patience: int = 5  # consecutive small accepted steps before stopping
    max_backtracks: int = 40
    rotation_scale: float = 0.1  # rad
    translation_scale: float = 10.0  # mm
    angle_scale: float = 0.5  # rad
    frozen: tuple = ()  # indices of parameters held fixed

    def __post_init__(self):
        for name in ("max_iterations", "initial_step", "step_decay", "armijo", "tolerance",
                     "patience", "max_backtracks", "rotation_scale", "translation_scale", "angle_scale"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.step_decay < 1:
            raise ValueError("step_decay must be below 1")
        fz = tuple(sorted({int(i) for i in self.frozen}))
        if any(i < 0 or i >= N_PARAMS for i in fz):
            raise ValueError(f"frozen indices must lie in 0..{N_PARAMS - 1}")
        object.__setattr__(self, "frozen", fz)

    def scales(self):
        s = np.empty(N_PARAMS)
        s[HAND_ROT] = s[OBJ_ROT] = self.rotation_scale
        s[HAND_TRANS] = s[OBJ_TRANS] = self.translation_scale
        s[ANGLES] = self.angle_scale
        return s

    def free_mask(self):
        m = np.ones(N_PARAMS, dtype=bool)
        m[list(self.frozen)] = False
        return m


@dataclass
class Trace:
    records: list = field(default_factory=list)
    status: str = "running"

    def append(self, iteration, report, step, max_grad):
        self.records.append({
            "iteration": iteration,
            **{k: report.terms[k] for k in TERMS},
            "total": report.total,
            "step": step,
            "max_grad": max_grad,
        })

    @property
    def totals(self):
        return np.array([r["total"] for r in self.records])

    @property
    def iterations(self):
        return self.records[-1]["iteration"] if self.records else 0

    @property
    def converged(self):
        return self.status != "max_iterations"


TRACE_COLUMNS = ("iteration", *TERMS, "total", "step", "max_grad")


def save_trace(trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in trace.records:
            w.writerow([r["iteration"]] + [f"{r[k]:.10g}" for k in TRACE_COLUMNS[1:]])


def load_trace(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    t = Trace(status="loaded")
    for r in rows:
        rec = {k: float(r[k]) for k in TRACE_COLUMNS[1:]}
        rec["iteration"] = int(r["iteration"])
        t.records.append(rec)
    return t


def _step(x, delta, free):
    """Apply a step given in tangent coordinates for rotation blocks."""
    y = x.copy()
    y[free] += delta[free]
    for sl in ROTATION_BLOCKS:
        f = free[sl]
        if f.all():
            y[sl] = rotation_log(rodrigues(delta[sl]) @ rodrigues(x[sl]))
        elif f.any():
            # partially frozen: step additively in axis-angle coordinates instead
            y[sl] = x[sl] + np.where(f, delta[sl], 0.0)
    return y


def _direction_gradient(x, g_tan, free):
    """Gradient used for the step: tangent for free rotation blocks, axis-angle otherwise."""
    g = g_tan.copy()
    for sl in ROTATION_BLOCKS:
        f = free[sl]
        if f.any() and not f.all():
            g[sl] = left_jacobian(x[sl]).T @ g_tan[sl]
    g[~free] = 0.0
    return g


def minimize(x0, scene, energy_cfg, opt_cfg=None, callback=None):
    """Minimize ``total_energy`` from ``x0``.  Returns (x, Trace)."""
    opt_cfg = opt_cfg or OptimizerConfig()
    x = np.array(x0, dtype=float)
    if x.shape != (N_PARAMS,):
        raise ValueError(f"state vector must have {N_PARAMS} entries")
    S = opt_cfg.scales()
    free = opt_cfg.free_mask()
    trace = Trace()

    w_mask = energy_cfg.weights["mask"] if scene.cameras else 0.0
    mask_floor = w_mask * silhouette_lower_bound(scene, energy_cfg)

    def evaluate(y, it, reject_above=np.inf):
        # the silhouette is the expensive part; skip it when the smooth terms
        # alone already rule the trial out
        sm = smooth_energy(y, scene, energy_cfg, tangent=True)
        partial = sum(energy_cfg.weights[k] * sm[0][k] for k in TERMS)
        if np.isfinite(partial) and partial + mask_floor > reject_above:
            return None
        rep = total_energy(y, scene, energy_cfg, tangent=True, smooth=sm)
        if not np.isfinite(rep.total) or not np.all(np.isfinite(rep.gradient)):
            trace.status = "non_finite"
            raise NonFiniteEnergy(it, trace)
        return rep

    rep = evaluate(x, 0)
    g = _direction_gradient(x, rep.gradient, free)
    trace.append(0, rep, 0.0, float(np.abs(g).max()))
    alpha = None
    prev_sg = None
    prev_s = None
    small = 0
    for it in range(1, opt_cfg.max_iterations + 1):
        sg = S * g  # gradient in scaled coordinates
        gnorm2 = float(sg @ sg)
        if gnorm2 == 0.0:
            trace.status = "stationary"
            return x, trace
        if prev_s is not None:
            yk = sg - prev_sg
            sy = float(prev_s @ yk)
            alpha = float(sy / (yk @ yk)) if sy > 0 else None
        if alpha is None or not np.isfinite(alpha) or alpha <= 0:
            alpha = opt_cfg.initial_step / float(np.abs(sg).max())
        f0 = rep.total
        accepted = False
        for _ in range(opt_cfg.max_backtracks):
            s_scaled = -alpha * sg
            y = _step(x, S * s_scaled, free)
            rhs = f0 - opt_cfg.armijo * alpha * gnorm2
            trial = evaluate(y, it, rhs)
            if trial is not None and trial.total <= rhs:
                accepted = True
                break
            alpha *= opt_cfg.step_decay
        if not accepted:
            trace.status = "line_search"
            return x, trace
        x, rep = y, trial
        g = _direction_gradient(x, rep.gradient, free)
        prev_s, prev_sg = s_scaled, sg
        trace.append(it, rep, alpha, float(np.abs(g).max()))
        if callback is not None:
            callback(it, x, rep)
        # relative to max(|E|, 1) so a vanishing energy still counts as converged
        rel = abs(f0 - rep.total) / max(abs(f0), 1.0)
        small = small + 1 if rel < opt_cfg.tolerance else 0
        if small >= opt_cfg.patience or rep.total == 0.0:
            trace.status = "converged"
            return x, trace
    trace.status = "max_iterations"
    return x, trace



# ---------------------------------------------------------------------------
# pose files: one frame per line, a frame id followed by the 57 packed floats
# ---------------------------------------------------------------------------


def save_poses(poses, path):
    """``poses`` maps frame id to a 57-vector; lines are written in id order."""
    with open(path, "w") as fh:
        for frame in sorted(poses):
            x = np.asarray(poses[frame], dtype=float)
            fh.write(str(frame) + " " + " ".join(repr(float(v)) for v in x) + "\n")


def load_poses(path):
    poses = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != N_PARAMS + 1:
                raise ValueError(f"{path}:{n}: expected a frame id and {N_PARAMS} values, got {len(parts) - 1}")
            try:
                x = np.array([float(v) for v in parts[1:]])
            except ValueError as e:
                raise ValueError(f"{path}:{n}: {e}") from None
            if not np.all(np.isfinite(x)):
                raise ValueError(f"{path}:{n}: non-finite value")
            if parts[0] in poses:
                raise ValueError(f"{path}:{n}: duplicate frame {parts[0]!r}")
            poses[parts[0]] = x
    return poses
