import pytest

from graspfit.cli import scene_config, weights_config
from graspfit.config import ConfigError, parse_value, read_config
from graspfit.suite import OBJECT_PARAMS


def write(tmp_path, text, name="c.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_read_config_grammar(tmp_path):
    p = write(tmp_path, "# header\n\na = 1\n  b=two words  # trailing\n")
    assert read_config(p) == {"a": ("1", 3), "b": ("two words", 4)}


@pytest.mark.parametrize("text, line", [("a = 1\na = 2\n", 2), ("just text\n", 1), ("1x = 3\n", 1)])
def test_read_config_errors(tmp_path, text, line):
    with pytest.raises(ConfigError) as e:
        read_config(write(tmp_path, text))
    assert e.value.line == line


def test_parse_value():
    assert parse_value("yes", bool) is True and parse_value("off", bool) is False
    assert parse_value("3", int) == 3 and parse_value("2.5", float) == 2.5
    assert parse_value("1, 2 3", tuple) == (1, 2, 3)
    with pytest.raises(ValueError):
        parse_value("maybe", bool)


def test_scene_config(tmp_path):
    cfg, n = scene_config(write(tmp_path, "object_name = cube\nblur_sigma = 2\nframes = 4\nkeypoints = 0 4 8\n"))
    assert n == 4 and cfg.object_name == "cube" and cfg.blur_sigma == 2.0 and cfg.keypoints == (0, 4, 8)
    with pytest.raises(ConfigError, match="frames"):
        scene_config(write(tmp_path, "frames = 0\n"))
    with pytest.raises(ConfigError, match="colour"):
        scene_config(write(tmp_path, "colour = red\n"))


def test_weights_defaults_freeze_object():
    ecfg, ocfg = weights_config(None)
    assert ocfg.frozen == OBJECT_PARAMS
    assert ecfg.weights["phy"] > 0 and ecfg.weights["limit"] > 0


def test_weights_config(tmp_path):
    ecfg, ocfg = weights_config(write(tmp_path, "phy = 0\nsilhouette_form = l2\nmax_iterations = 7\n"
                                                "freeze_object = false\nfrozen = 0 1 2\n"))
    assert ecfg.weights["phy"] == 0.0 and ecfg.silhouette_form == "l2"
    assert ocfg.max_iterations == 7 and ocfg.frozen == (0, 1, 2)


@pytest.mark.parametrize("text, field, line", [
    ("kp = 1\nphy = -1\n", "phy", 2),
    ("mask = nan\n", "mask", 1),
    ("silhouette_form = hinge\n", "silhouette_form", 1),
    ("max_iterations = 0\n", "max_iterations", 1),
    ("frozen = 99\n", "frozen", 1),
])
def test_weights_errors_name_field_and_line(tmp_path, text, field, line):
    with pytest.raises(ConfigError) as e:
        weights_config(write(tmp_path, text))
    assert e.value.field == field and e.value.line == line
    assert field in str(e.value)
