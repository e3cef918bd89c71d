"""Self-supervised adaptation: pretrained vs finetuned regressor vs direct fits from random init.

    python3 scripts/run_adaptation.py [--train 400] [--test 20] [--offset 0.25]
"""
import argparse
from dataclasses import replace

import numpy as np

from mocapfit import default_model
from mocapfit.experiments import AdaptationConfig, run_adaptation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--train", type=int, default=AdaptationConfig.train_scenes)
    ap.add_argument("--test", type=int, default=AdaptationConfig.test_scenes)
    ap.add_argument("--offset", type=float, default=AdaptationConfig.shift_pose_offset)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = replace(AdaptationConfig(), train_scenes=args.train, test_scenes=args.test,
                  shift_pose_offset=args.offset, seed=args.seed)
    res = run_adaptation(default_model(), cfg)
    print(f"held-out parameter MSE {res['holdout_mse']:.4f}")
    print(f"finetune mean loss {res['history'][0]:.2f} -> {res['history'][-1]:.2f} over {len(res['history']) - 1} steps")
    for key in ("pretrained", "finetuned", "direct_random"):
        vals = np.array(res[key])
        print(f"{key:14s} median surface {np.median(vals):7.2f} mm  mean {vals.mean():7.2f} mm")
    print(f"{res['seconds']:.0f} s")


if __name__ == "__main__":
    main()
