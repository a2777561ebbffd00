#!/usr/bin/env python3
"""Sweep the channel-sparsity weight and report the resulting student FLOPs
fractions, to pick an operating point for a target compression level."""

import argparse
import os

from ganslim import RunConfig, Schedule, TaskSpec
from ganslim.engine import sweep_sparsity_weight


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--teacher", required=True)
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--target", type=float, default=0.25, help="target FLOPs fraction")
    ap.add_argument("--candidates", type=float, nargs="+",
                    default=[0.003, 0.01, 0.03, 0.1, 0.3])
    ap.add_argument("--probe-iters", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--task-seed", type=int, default=11)
    args = ap.parse_args()

    task = TaskSpec(tag="hue-rotate", n_per_domain=512, seed=args.task_seed)
    cfg = RunConfig(
        task=task, teacher_path=args.teacher, variant="GS-32",
        schedule=Schedule(total_iters=args.probe_iters), seed=args.seed,
        out_dir=args.out, extractor_path=args.teacher + ".extractor",
        eval_images=64,
    )
    best, table = sweep_sparsity_weight(cfg, args.candidates, args.target,
                                        probe_iters=args.probe_iters)
    print(f"{'sparsity_weight':>16s} {'flops_frac':>11s}")
    for rho, frac in table:
        marker = "  <-- chosen" if rho == best else ""
        print(f"{rho:16g} {frac:11.3f}{marker}")


if __name__ == "__main__":
    main()
