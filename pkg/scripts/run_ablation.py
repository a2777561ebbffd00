#!/usr/bin/env python3
"""Run the full variant comparison (unified vs single techniques vs cascades)
at a matched iteration budget and print the comparison table."""

import argparse
import os
import sys

from ganslim import VARIANT_TAGS
from ganslim.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", required=True, help="slim config JSON (teacher, task, budget)")
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--variants", default=",".join(VARIANT_TAGS))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rc = cli_main([
        "ablate", "--config", args.config, "--variants", args.variants,
        "--seed", str(args.seed), "--out", args.out,
    ])
    sys.exit(rc)


if __name__ == "__main__":
    main()
