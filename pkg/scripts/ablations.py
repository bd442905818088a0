"""Full model against each single-flag ablation on the synthetic task.

Each variant runs the whole pipeline in its own directory under --out and
the script prints one row per variant (all queries plus the seen, unseen
and collision subsets). With --seeds N the table averages N seeds.

    python scripts/ablations.py --out runs/ablations [--seeds 3]
"""

from __future__ import annotations

import argparse
import csv
import time
from pathlib import Path

import numpy as np
import torch

from glen.cli import load_config, run_pipeline

ROOT = Path(__file__).resolve().parents[1]

VARIANTS = {
    "full": [],
    "no_keyword_phase": ["no_keyword_phase=1"],
    "no_annealing": ["no_annealing=1"],
    "token_decoder_input": ["token_decoder_input=1"],
    "no_pairwise": ["no_pairwise=1"],
    "no_pointwise": ["no_pointwise=1"],
    "random_negatives": ["random_negatives=1"],
    "no_refinement": ["no_refinement=1"],
}
COLUMNS = [("recall", 1, "all"), ("recall", 10, "all"), ("mrr", 10, "all"),
           ("recall", 1, "seen"), ("recall", 1, "unseen"), ("recall", 1, "collision")]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default=str(ROOT / "configs" / "synthetic.cfg"))
    ap.add_argument("--out", default=str(ROOT / "runs" / "ablations"))
    ap.add_argument("--seeds", type=int, default=1)
    ap.add_argument("--only", nargs="*", choices=sorted(VARIANTS), help="subset of variants")
    args = ap.parse_args()
    torch.set_num_threads(1)
    out = Path(args.out)
    rows = []
    for name in args.only or VARIANTS:
        vals, secs = [], []
        for seed in range(args.seeds):
            cfg = load_config(args.config, [f"out_dir={out / name / f'seed{seed}'}", *VARIANTS[name]], seed)
            t0 = time.perf_counter()
            report = run_pipeline(cfg)
            secs.append(time.perf_counter() - t0)
            vals.append([report.values.get(c, float("nan")) for c in COLUMNS])
        rows.append([name, *np.mean(vals, axis=0).round(4).tolist(), round(float(np.mean(secs)), 1)])
        print(f"{name:<20} " + " ".join(f"{v:8.4f}" for v in rows[-1][1:-1]) + f" {rows[-1][-1]:7.1f}s", flush=True)
    header = ["variant", *(f"{m}@{c}/{s}" for m, c, s in COLUMNS), "seconds"]
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablations.csv", "w", newline="") as fh:
        csv.writer(fh).writerows([header, *rows])
    print(f"wrote {out / 'ablations.csv'}")


if __name__ == "__main__":
    main()
