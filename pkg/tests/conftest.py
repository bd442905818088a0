from __future__ import annotations

import sys
import time
from dataclasses import dataclass
from pathlib import Path

import pytest
import torch

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(Path(__file__).resolve().parent))

torch.set_num_threads(1)

SYNTHETIC_CFG = ROOT / "configs" / "synthetic.cfg"
GOLDEN = Path(__file__).resolve().parent / "golden"

# criterion number -> (title, passed, detail); filled in by test_acceptance
ACCEPTANCE: dict[str, tuple[str, bool, str]] = {}


@dataclass
class PipelineRun:
    out_dir: Path
    report: object
    seconds: float


def _run(out_dir: Path, *overrides: str) -> PipelineRun:
    from glen.cli import load_config, run_pipeline

    cfg = load_config(SYNTHETIC_CFG, [f"out_dir={out_dir}", *overrides])
    t0 = time.perf_counter()
    report = run_pipeline(cfg)
    return PipelineRun(out_dir, report, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def synthetic_runs(tmp_path_factory) -> dict[str, PipelineRun]:
    """The bundled synthetic pipeline: full model twice, plus two ablations."""
    base = tmp_path_factory.mktemp("synthetic")
    return {
        "full": _run(base / "full"),
        "full_repeat": _run(base / "full_repeat"),
        "no_refinement": _run(base / "no_refinement", "no_refinement=1"),
        "no_keyword_phase": _run(base / "no_keyword_phase", "no_keyword_phase=1"),
    }


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k)):
        title, ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
