"""Grid search for the segmentation thresholds on simulated scenes.

For every (theta0, theta1) pair this prints the pooled ball recall and
background false-positive rate on noiseless rotating scenes, and optionally the
vision success rate of the full pipeline on a short seeded throw sweep.  The
shipped defaults in ``SegmentationConfig`` were picked from this table by
maximising vision success; see the README for the numbers.

    python3 scripts/calibrate.py --theta0 0.02 0.05 0.1 --theta1 0.2 0.5 --throws 40
"""

from __future__ import annotations

import argparse
import time
from dataclasses import replace

import numpy as np

from evcatch import catchsim
from evcatch.pipeline import PipelineConfig
from evcatch.segment import SegmentationConfig


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--theta0", type=float, nargs="+", default=[0.02, 0.05, 0.1, 0.2])
    ap.add_argument("--theta1", type=float, nargs="+", default=[0.0, 0.2, 0.5])
    ap.add_argument("--scenes", type=int, default=10, help="separation scenes per grid point")
    ap.add_argument("--throws", type=int, default=0, help="vision sweep size (0 skips the sweep)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    print("theta0,theta1,recall,fpr,vision,seconds")
    for t0 in args.theta0:
        for t1 in args.theta1:
            start = time.perf_counter()
            cfg = replace(PipelineConfig(seed=args.seed), segmentation=SegmentationConfig(theta0=t0, theta1=t1))
            sep = catchsim.segmentation_separation(args.scenes, cfg, seed=args.seed)
            vision = float("nan")
            if args.throws:
                sweep = catchsim.SweepConfig(n_throws=args.throws, speed_range=(5.0, 9.0),
                                             deviation_range=(0.0, 0.4), seed=args.seed)
                vision = float(np.mean([o.vision_success for o in catchsim.evaluate_throws(sweep, cfg)]))
            print(f"{t0:g},{t1:g},{sep.recall:.4f},{sep.false_positive_rate:.4f},{vision:.3f},"
                  f"{time.perf_counter() - start:.1f}", flush=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
