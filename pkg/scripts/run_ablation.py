#!/usr/bin/env python3
"""Optimizer and NFE-allocation ablation on the deblur benchmark.

Compares vanilla descent against momentum and a polynomial
preconditioner at a fixed step count, plus an NFE-matched pair that
spends a 5x evaluation budget on noise instances versus extra steps.
Delegates to the library's ablation driver, so the output directory
matches what ``optdiff ablate`` produces.

Usage:
    python3 scripts/run_ablation.py --out runs/ablation [--config PATH]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from optdiff.bench.configfile import load_config
from optdiff.bench.runner import ablate

DEFAULT_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "deblur32_benchmark.cfg"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=DEFAULT_CONFIG)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)

    status = ablate(load_config(args.config), args.out, jobs=args.jobs)
    print((args.out / "ablation.csv").read_text(), end="")
    return status


if __name__ == "__main__":
    sys.exit(main())
