"""Regenerate the bundled object meshes and the default hand model file."""

import os

from graspfit import shapes
from graspfit.geometry import save_obj
from graspfit.hand_model import build_default_hand, save_hand_model

DATA = os.path.join(os.path.dirname(__file__), "..", "src", "graspfit", "data")


def main():
    meshes = os.path.join(DATA, "meshes")
    os.makedirs(meshes, exist_ok=True)
    save_obj(shapes.box((100.0, 100.0, 100.0)), os.path.join(meshes, "cube.obj"))
    save_obj(shapes.icosphere(50.0, subdivisions=3), os.path.join(meshes, "sphere.obj"))
    # cleanser-like bottle: slightly elliptic cylinder
    save_obj(shapes.cylinder(36.0, 180.0, segments=24, semi_minor=28.0), os.path.join(meshes, "cylinder.obj"))
    save_obj(shapes.extruded_l(100.0, 40.0, 60.0), os.path.join(meshes, "lblock.obj"))
    save_hand_model(build_default_hand(), os.path.join(DATA, "default_hand.txt"))


if __name__ == "__main__":
    main()
