"""Regenerate tests/golden: truth poses of a small synthetic scene and their evaluation.

The poses file is the committed input; the evaluation outputs are what the
CLI golden test compares against byte for byte.
"""

import os
import shutil
import sys
import tempfile

from graspfit import cli

GOLDEN = os.path.join(os.path.dirname(__file__), "..", "tests", "golden")
MESH = os.path.join(os.path.dirname(cli.__file__), "data", "meshes", "cylinder.obj")


def main():
    with tempfile.TemporaryDirectory() as tmp:
        frames = os.path.join(tmp, "frames")
        if cli.main(["synth", "--scene", os.path.join(GOLDEN, "scene.cfg"), "--seed", "0", "--jobs", "1", "-o", frames]):
            sys.exit("synth failed")
        shutil.copy(os.path.join(frames, "truth.txt"), os.path.join(GOLDEN, "poses.txt"))
        shutil.copy(os.path.join(frames, "annotations.csv"), os.path.join(GOLDEN, "annotations.csv"))
    out = os.path.join(GOLDEN, "eval")
    shutil.rmtree(out, ignore_errors=True)
    code = cli.main(["evaluate", "--poses", os.path.join(GOLDEN, "poses.txt"), "--object", MESH,
                     "--annotations", os.path.join(GOLDEN, "annotations.csv"), "--jobs", "1", "-o", out])
    sys.exit(code)


if __name__ == "__main__":
    main()
