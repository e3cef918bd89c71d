"""Measure loss values at the true parameters of unperturbed scenes.

Keypoint loss must be exactly zero there; motion and segmentation losses sit
on a rasterization floor. The per-seed values are written to a JSON fixture
that the tests compare against, so any change in rendering or losses that
raises the floor shows up as a regression.

    python3 scripts/measure_floor.py [--seeds 20] [--out tests/fixtures/floors.json]
"""
import argparse
import json
from dataclasses import asdict, replace
from pathlib import Path

from mocapfit import LossWeights, default_model, sample_scene
from mocapfit.experiments import EXPERIMENT_SPEC, GRADCHECK_SPEC
from mocapfit.scenegen import truth_state_floor

SPECS = {"gradcheck": GRADCHECK_SPEC, "experiment": EXPERIMENT_SPEC}
MODES = ("proj", "chamfer")


def measure(model, seeds):
    out = {}
    for name, spec in SPECS.items():
        for mode in MODES:
            rows = []
            for seed in seeds:
                sc = sample_scene(model, replace(spec, seed=seed))
                parts = truth_state_floor(model, sc, LossWeights(seg_mode=mode))
                rows.append({"seed": seed, **parts})
            out[f"{name}/{mode}"] = {"spec": asdict(spec), "rows": rows}
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "floors.json"))
    args = ap.parse_args()
    floors = measure(default_model(), range(args.seeds))
    Path(args.out).write_text(json.dumps(floors, indent=1, sort_keys=True) + "\n")
    for key, block in floors.items():
        rows = block["rows"]
        print(f"{key:22s} kpt max {max(r['kpt'] for r in rows):.3g}  motion max {max(r['motion'] for r in rows):.4f}"
              f"  seg max {max(r['seg'] for r in rows):.4f}")


if __name__ == "__main__":
    main()
