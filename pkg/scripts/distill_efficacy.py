"""Warmup vs on-policy distillation on easy gaps for a few seeds.

    python3 scripts/distill_efficacy.py --seeds 0 1 2 [--config configs/default.toml]
"""

import argparse
import json
import time

from spikekour.config import load_config
from spikekour.pipeline import distill_efficacy, train_teacher


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--set", action="append", default=[])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--episodes", type=int, default=32)
    ap.add_argument("--teacher-seed", type=int, default=0)
    args = ap.parse_args()
    cfg = load_config(args.config, args.set)
    t0 = time.perf_counter()
    cfg.seed = args.teacher_seed
    teacher, _ = train_teacher(cfg)
    print(f"teacher trained in {time.perf_counter() - t0:.0f} s", flush=True)
    for seed in args.seeds:
        cfg.seed = seed
        row = distill_efficacy(cfg, teacher, args.episodes)
        row["elapsed_s"] = round(time.perf_counter() - t0, 1)
        print(json.dumps(row), flush=True)


if __name__ == "__main__":
    main()
