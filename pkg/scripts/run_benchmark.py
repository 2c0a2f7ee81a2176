#!/usr/bin/env python3
"""Run the seeded clutter benchmark and print a per-scene summary."""

import argparse
import json

from targetgrasp.detector import AnalyticPredictor
from targetgrasp.evaluation import run_benchmark


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenes", type=int, default=50)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--k-centers", type=int, default=8)
    parser.add_argument("--out", default=None, help="optional JSON report path")
    args = parser.parse_args()

    report = run_benchmark(args.scenes, args.seed, AnalyticPredictor(), k_centers=args.k_centers)
    for scene in report["scenes"]:
        wins = sum(e["success"] for e in scene["episodes"])
        print(f"scene {scene['index']:3d} (seed {scene['scene_seed']}): "
              f"{wins}/{len(scene['episodes'])} episodes succeeded")
    print(f"\ntotal: {report['successes']}/{report['episodes']} "
          f"= {report['success_rate']:.3f} success rate")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
        print(f"report written to {args.out}")


if __name__ == "__main__":
    main()
