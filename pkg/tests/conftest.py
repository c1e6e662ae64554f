import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from graspfit import hand_model as hm
from graspfit.geometry import load_mesh
from graspfit.synth import BUNDLED_OBJECTS

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

MESH_DIR = os.path.join(os.path.dirname(hm.__file__), "data", "meshes")


@pytest.fixture(scope="session")
def model():
    return hm.load_default_hand()


@pytest.fixture(scope="session")
def meshes():
    return {name: load_mesh(os.path.join(MESH_DIR, f"{name}.obj")) for name in BUNDLED_OBJECTS}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
