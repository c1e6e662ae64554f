import numpy as np
import pytest

from graspfit import hand_model as hm
from graspfit.energy import EnergyConfig, Scene, total_energy
from graspfit.optimize import (
    OptimizerConfig, Trace, load_poses, load_trace, minimize, save_poses, save_trace,
)
from graspfit.synth import SyntheticScene, bundled_object, generate

OBJECT = tuple(range(51, 57))


@pytest.fixture(scope="module")
def data():
    return generate(SyntheticScene(n_cameras=2, image_size=24, focal=48.0), 5)


def keypoint_scene(model, x):
    mesh, spheres = bundled_object("cylinder")
    hand = hm.HandPose(x[0:3], x[3:6], x[6:51])
    kp = hm.keypoints(model, hm.forward_kinematics(model, hand))
    return Scene(model, mesh, spheres, (), (), {k: kp[k] for k in range(hm.N_KEYPOINTS)})


def test_start_at_ground_truth_stops_quickly(data):
    x, trace = minimize(data.x_true, data.scene, EnergyConfig(), OptimizerConfig(frozen=OBJECT))
    assert trace.iterations <= 2
    assert np.array_equal(x, data.x_true)


def test_recovers_translation_from_keypoints(model, data):
    sc = keypoint_scene(model, data.x_true)
    cfg = EnergyConfig().with_weights(mask=0.0, phy=0.0, limit=0.0)
    x0 = data.x_true.copy()
    x0[3:6] += [6.0, -4.0, 3.0]
    x, trace = minimize(x0, sc, cfg, OptimizerConfig(frozen=OBJECT))
    assert trace.iterations <= 200 and trace.converged
    assert np.abs(x[3:6] - data.x_true[3:6]).max() < 1e-3


def test_repulsion_pushes_hand_out(model, data):
    sc = Scene(model, data.scene.object_mesh, data.scene.object_spheres, (), (), {})
    cfg = EnergyConfig().with_weights(mask=0.0, kp=0.0, limit=0.0, phy=1.0)
    x0 = data.x_true.copy()
    x0[6:51] += 0.3  # curl into the object
    frozen = OBJECT + tuple(range(0, 3)) + tuple(range(6, 51))  # only hand translation moves
    start = total_energy(x0, sc, cfg).terms["phy"]
    x, trace = minimize(x0, sc, cfg, OptimizerConfig(frozen=frozen, max_iterations=500))
    assert start > 0
    assert trace.totals[-1] == 0.0
    assert np.array_equal(x[6:51], x0[6:51])


def test_trace_is_monotone_and_frozen_entries_fixed(data):
    cfg = OptimizerConfig(frozen=OBJECT + (10, 20), max_iterations=30)
    x, trace = minimize(data.x_init, data.scene, EnergyConfig(), cfg)
    assert np.all(np.diff(trace.totals) <= 0)
    frozen = list(cfg.frozen)
    assert np.array_equal(x[frozen], data.x_init[frozen])
    assert not np.array_equal(x, data.x_init)


def test_deterministic(data):
    cfg = OptimizerConfig(frozen=OBJECT, max_iterations=15)
    a, ta = minimize(data.x_init, data.scene, EnergyConfig(), cfg)
    b, tb = minimize(data.x_init, data.scene, EnergyConfig(), cfg)
    assert np.array_equal(a, b)
    assert [r["total"] for r in ta.records] == [r["total"] for r in tb.records]


def test_max_iterations_status(data):
    x, trace = minimize(data.x_init, data.scene, EnergyConfig(), OptimizerConfig(max_iterations=2, frozen=OBJECT))
    assert trace.status == "max_iterations" and not trace.converged
    assert len(trace.records) == 3


def test_trace_round_trip(tmp_path, data):
    _, trace = minimize(data.x_init, data.scene, EnergyConfig(), OptimizerConfig(max_iterations=5, frozen=OBJECT))
    save_trace(trace, tmp_path / "t.csv")
    back = load_trace(tmp_path / "t.csv")
    assert len(back.records) == len(trace.records)
    for r, s in zip(trace.records, back.records):
        assert r["iteration"] == s["iteration"]
        for k in ("mask", "phy", "limit", "kp", "total"):
            assert s[k] == pytest.approx(r[k], rel=1e-9, abs=1e-12)
    save_trace(back, tmp_path / "u.csv")
    assert (tmp_path / "t.csv").read_text() == (tmp_path / "u.csv").read_text()


def test_pose_file_round_trip(tmp_path, rng):
    poses = {f"{i:04d}": rng.normal(size=57) * 10 ** rng.uniform(-8, 3) for i in range(5)}
    save_poses(poses, tmp_path / "p.txt")
    back = load_poses(tmp_path / "p.txt")
    assert list(back) == sorted(poses)
    for k in poses:
        assert np.array_equal(back[k], poses[k])


@pytest.mark.parametrize("line", ["a 1 2 3", "a " + " ".join(["nan"] * 57), "a " + " ".join(["x"] * 57)])
def test_pose_file_errors(tmp_path, line):
    (tmp_path / "p.txt").write_text("# header\n" + line + "\n")
    with pytest.raises(ValueError, match=":2:"):
        load_poses(tmp_path / "p.txt")


def test_pose_file_duplicate(tmp_path):
    row = "a " + " ".join(["0"] * 57) + "\n"
    (tmp_path / "p.txt").write_text(row + row)
    with pytest.raises(ValueError, match="duplicate"):
        load_poses(tmp_path / "p.txt")


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(max_iterations=0)
    with pytest.raises(ValueError):
        OptimizerConfig(step_decay=1.5)
    with pytest.raises(ValueError):
        OptimizerConfig(frozen=(57,))
    with pytest.raises(ValueError):
        minimize(np.zeros(10), None, EnergyConfig())


def test_empty_trace():
    t = Trace()
    assert t.iterations == 0 and len(t.totals) == 0
