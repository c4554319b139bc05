"""Depth-input vs event-input student under over/underexposure on easy gaps.

    python3 scripts/lighting_contrast.py [--episodes 50] [--seed 0]
"""

import argparse
import json
import time

from spikekour.config import load_config
from spikekour.pipeline import lighting_contrast, train_teacher


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--set", action="append", default=[])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--episodes", type=int, default=50)
    args = ap.parse_args()
    cfg = load_config(args.config, args.set)
    cfg.seed = args.seed
    t0 = time.perf_counter()
    teacher, _ = train_teacher(cfg)
    res = lighting_contrast(cfg, teacher, args.episodes)
    res["elapsed_s"] = round(time.perf_counter() - t0, 1)
    print(json.dumps(res, indent=2))


if __name__ == "__main__":
    main()
