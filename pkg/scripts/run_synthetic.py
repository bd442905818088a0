"""Full pipeline on the bundled synthetic task; prints the metric table.

    python scripts/run_synthetic.py [--out runs/synthetic] [--seed 0] [--set key=value ...]
"""

from __future__ import annotations

import argparse
import logging
import time
from pathlib import Path

import torch

from glen.cli import load_config, run_pipeline

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default=str(ROOT / "configs" / "synthetic.cfg"))
    ap.add_argument("--out", default=str(ROOT / "runs" / "synthetic"))
    ap.add_argument("--seed", type=int)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    torch.set_num_threads(1)
    cfg = load_config(args.config, [f"out_dir={args.out}", *args.set], args.seed)
    t0 = time.perf_counter()
    report = run_pipeline(cfg)
    print(report.table())
    print(f"\n{time.perf_counter() - t0:.1f}s; outputs in {args.out}")


if __name__ == "__main__":
    main()
