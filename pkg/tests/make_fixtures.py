"""Record the committed fixture bundles from the fake world.

    python tests/make_fixtures.py

Rewrites tests/fixtures/{assess,assess-nopdf,eval}/fixtures. The fake world is
deterministic, so re-running produces the same files.
"""

from __future__ import annotations

import datetime as dt
import json
import shutil
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE))

from fakeworld import SUBMISSION_DATE, SUBMISSION_PDF, FakeWorld, bundle_config  # noqa: E402

from novelty_engine.gateway import VirtualClock  # noqa: E402
from novelty_engine.pipeline import PipelineConfig, make_gateway, run_assess, run_evaluate  # noqa: E402

FIXTURES = HERE / "fixtures"
VARIANTS = (
    {},
    {"no_landscape": True},
    {"no_structured_extraction": True},
    {"naive_prompt": True},
)


def _config(fixtures: Path, **overrides) -> PipelineConfig:
    return PipelineConfig.from_dict(bundle_config(str(fixtures), "record", **overrides))


def record_assess(root: Path, *, fail_pdfs: bool = False, variants=VARIANTS) -> None:
    store = root / "fixtures"
    if store.exists():
        shutil.rmtree(store)
    root.mkdir(parents=True, exist_ok=True)
    pdf = root / "submission.pdf"
    pdf.write_bytes(SUBMISSION_PDF)
    (root / "config.json").write_text(
        json.dumps(bundle_config("fixtures", "replay"), indent=2) + "\n", encoding="utf-8"
    )
    world = FakeWorld(fail_pdfs=fail_pdfs)
    date = dt.date.fromisoformat(SUBMISSION_DATE)
    for v in variants:
        cfg = _config(store, **v)
        gw = make_gateway(cfg, transport=world.transport(), clock=VirtualClock())
        try:
            run_assess(pdf, date, cfg, gateway=gw)
        finally:
            gw.close()


def record_eval(root: Path) -> None:
    store = root / "fixtures"
    if store.exists():
        shutil.rmtree(store)
    (root / "config.json").write_text(
        json.dumps(bundle_config("fixtures", "replay", n_judge_runs=3), indent=2) + "\n", encoding="utf-8"
    )
    world = FakeWorld()
    for human in (False, True):
        cfg = _config(store, n_judge_runs=3, human_baseline=human)
        gw = make_gateway(cfg, transport=world.transport(), clock=VirtualClock())
        try:
            run_evaluate(root / "dataset", root / "candidates", cfg, gateway=gw)
        finally:
            gw.close()


def main() -> None:
    record_assess(FIXTURES / "assess")
    record_assess(FIXTURES / "assess-nopdf", fail_pdfs=True, variants=({},))
    record_eval(FIXTURES / "eval")
    for name in ("assess", "assess-nopdf", "eval"):
        n = len(list((FIXTURES / name / "fixtures").rglob("*.json")))
        print(f"{name}: {n} fixtures")


if __name__ == "__main__":
    main()
