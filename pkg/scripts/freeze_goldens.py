"""Regenerate the frozen golden files under tests/golden.

Run only when a deliberate change alters model numerics or the bundled
pipeline; the tests compare against whatever this script last wrote.
"""

from __future__ import annotations

import argparse
import json
import shutil
import tempfile
from pathlib import Path

import torch

from glen.cli import load_config, run_pipeline
from glen.corpus import Document
from glen.id_index import format_assignment
from glen.inference import assign_ids
from glen.model import GlenModel, ModelConfig

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = ROOT / "tests" / "golden"

TOY = ModelConfig(vocab_size=12, n=3, m=8, enc_layers=1, dec_layers=1, seed=7)
TOY_INPUT = [1, 4, 2, 7]
TOY_DOCS = {"a": [1, 4, 2, 7], "b": [3, 3, 9], "c": [0], "d": [5, 6, 7, 8, 9, 0]}


def toy_golden() -> dict:
    model = GlenModel(TOY)
    with torch.no_grad():
        memory = model.encode(TOY_INPUT)
    z, w = model.predict_identifier(TOY_INPUT)
    docs = [Document(k, tuple(v)) for k, v in TOY_DOCS.items()]
    return {
        "config": TOY.__dict__,
        "input": TOY_INPUT,
        "memory": [[float(x).hex() for x in row] for row in memory.tolist()],
        "identifier": list(z),
        "weights": [float(x).hex() for x in w],
        "docs": TOY_DOCS,
        "id_table": "".join(format_assignment(a) for a in assign_ids(docs, model)),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--skip-pipeline", action="store_true", help="only refresh the toy-model golden")
    args = ap.parse_args()
    torch.set_num_threads(1)
    GOLDEN.mkdir(parents=True, exist_ok=True)
    (GOLDEN / "toy_model.json").write_text(json.dumps(toy_golden(), indent=1) + "\n")
    if not args.skip_pipeline:
        with tempfile.TemporaryDirectory() as tmp:
            cfg = load_config(ROOT / "configs" / "synthetic.cfg", [f"out_dir={tmp}"])
            run_pipeline(cfg)
            shutil.copy(Path(tmp) / "report.csv", GOLDEN / "synthetic_report.csv")
    print(f"wrote goldens to {GOLDEN}")


if __name__ == "__main__":
    main()
