"""v3 vs v2 refinement on seeded synthetic scenes.

    python3 scripts/run_synthetic_suite.py --seeds 20 --out suite.csv

Runs the zero-noise scenes with the default energy and the noisy scenes with
both energies, then prints recovery errors, win counts and limit audits.
"""

import argparse
import csv

import numpy as np

from graspfit.suite import CLEAN, NOISY, V2, V3, run_suite


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--out", default=None, help="per-run CSV")
    args = p.parse_args()
    seeds = range(args.seeds)

    clean = run_suite(CLEAN, seeds, {"v3": V3}, log=print)["v3"]
    noisy = run_suite(NOISY, seeds, {"v3": V3, "v2": V2}, log=print)

    print(f"zero noise, v3: mean fingertip error {np.mean([r.fingertip_error for r in clean]):.3f} mm")
    for name in ("v3", "v2"):
        runs = noisy[name]
        print(f"noisy, {name}: mean fingertip error {np.mean([r.fingertip_error for r in runs]):.3f} mm, "
              f"max limit violation {max(r.max_violation for r in runs):.2f} deg, "
              f"max thumb twist violation {max(r.thumb_twist_violation for r in runs):.2f} deg")
    wins = sum(a.fingertip_error <= b.fingertip_error for a, b in zip(noisy["v3"], noisy["v2"]))
    print(f"v3 <= v2 on {wins} of {len(seeds)} noisy scenes")

    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["setting", "config", "seed", "fingertip_error_mm", "max_violation_deg",
                        "thumb_twist_violation_deg", "status", "iterations", "seconds"])
            rows = [("clean", "v3", r) for r in clean]
            rows += [("noisy", name, r) for name in ("v3", "v2") for r in noisy[name]]
            for setting, name, r in rows:
                w.writerow([setting, name, r.seed, f"{r.fingertip_error:.4f}", f"{r.max_violation:.4f}",
                            f"{r.thumb_twist_violation:.4f}", r.status, r.iterations, f"{r.seconds:.2f}"])


if __name__ == "__main__":
    main()
