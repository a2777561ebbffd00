#!/usr/bin/env python3
"""Minute-scale end-to-end demo: train a teacher on the synthetic task, slim it
with the unified 8-bit pipeline, evaluate, and export a deployment bundle."""

import argparse
import os

from ganslim import RunConfig, Schedule, TaskSpec, run_variant, train_teacher
from ganslim.cli import bundle_size_bytes, export_bundle
from ganslim.metrics import bytes_to_mb


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/smoke")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--teacher-iters", type=int, default=2000)
    ap.add_argument("--slim-iters", type=int, default=2000)
    ap.add_argument("--sparsity-weight", type=float, default=0.05)
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    task = TaskSpec(tag="hue-rotate", n_per_domain=512, seed=args.seed)
    teacher = os.path.join(args.out, "teacher.ckpt")
    print(f"training teacher ({args.teacher_iters} iters)...")
    train_teacher(task, budget=args.teacher_iters, seed=args.seed, out_path=teacher)

    cfg = RunConfig(
        task=task,
        teacher_path=teacher,
        variant="GS-8",
        sparsity_weight=args.sparsity_weight,
        schedule=Schedule(total_iters=args.slim_iters),
        seed=args.seed,
        out_dir=os.path.join(args.out, "gs8"),
        extractor_path=teacher + ".extractor",
    )
    print(f"slimming ({args.slim_iters} iters)...")
    artifacts = run_variant("GS-8", cfg)
    print(artifacts.report.to_text())

    bundle = os.path.join(args.out, "bundle")
    export_bundle(artifacts.student_path, bundle)
    print(f"bundle: {bundle} ({bytes_to_mb(bundle_size_bytes(bundle)):.3f} MB)")


if __name__ == "__main__":
    main()
