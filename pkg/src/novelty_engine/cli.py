"""Command-line entry point: ``novelty-engine assess|evaluate|stats``."""

from __future__ import annotations

import argparse
import datetime as dt
import logging
import sys
from typing import Sequence

from . import evaluation
from .errors import NoveltyEngineError
from .gateway import MODES
from .pipeline import PipelineConfig, run_assess, run_evaluate, run_stats


def _date(value: str) -> dt.date:
    try:
        return dt.date.fromisoformat(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="novelty-engine", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("assess", help="assess the novelty of one submission PDF")
    a.add_argument("pdf")
    a.add_argument("--date", type=_date, required=True, help="submission date, YYYY-MM-DD")
    a.add_argument("--k", type=int, help="number of related papers to keep (default 20)")
    a.add_argument("--fixtures", help="fixture directory for record/replay")
    a.add_argument("--mode", choices=MODES, help="provider mode (default live)")
    a.add_argument("--no-landscape", action="store_true")
    a.add_argument("--no-structured-extraction", action="store_true")
    a.add_argument("--naive-prompt", action="store_true")
    a.add_argument("--out", default="novelty-out", help="output directory")
    a.add_argument("--config", help="JSON config file")
    a.add_argument("--cache", help="response cache directory")

    e = sub.add_parser("evaluate", help="judge candidate assessments against reference reviews")
    e.add_argument("--dataset", required=True)
    e.add_argument("--candidates", required=True)
    e.add_argument("--runs", type=int, help="judge repetitions (default 3)")
    e.add_argument("--out", default="evaluation-out")
    e.add_argument("--fixtures")
    e.add_argument("--mode", choices=MODES)
    e.add_argument("--human-baseline", action="store_true", help="also compare reviews with each other")
    e.add_argument("--config")
    e.add_argument("--cache")

    s = sub.add_parser("stats", help="dataset statistics by decision")
    s.add_argument("--dataset", required=True)
    return parser


def _config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    changes: dict = {}
    if args.fixtures:
        changes["fixtures_dir"] = args.fixtures
        if not args.mode and cfg.mode == "live":
            changes["mode"] = "replay"
    if args.mode:
        changes["mode"] = args.mode
    if args.cache:
        changes["cache_dir"] = args.cache
    if args.command == "assess":
        if args.k is not None:
            rk = cfg.ranking
            changes["ranking"] = type(rk)(
                rerank_pool_size=max(rk.rerank_pool_size, args.k),
                top_k=args.k,
                rerank_window=rk.rerank_window,
                rerank_stride=rk.rerank_stride,
            )
        for flag in ("no_landscape", "no_structured_extraction", "naive_prompt"):
            if getattr(args, flag):
                changes[flag] = True
    else:
        if args.runs is not None:
            changes["n_judge_runs"] = args.runs
        if args.human_baseline:
            changes["human_baseline"] = True
    return cfg.replace(**changes)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.ERROR,
        format="%(levelname)s %(message)s",
    )
    try:
        if args.command == "stats":
            sys.stdout.write(evaluation.format_stats(run_stats(args.dataset)))
            return 0
        cfg = _config(args)
        if args.command == "assess":
            res = run_assess(args.pdf, args.date, cfg, args.out)
            print(f"report: {res.out_dir / 'report.md'}")
        else:
            res = run_evaluate(args.dataset, args.candidates, cfg, args.out)
            for system, summary in res.summaries.items():
                print(
                    f"{system}: reasoning {summary.reasoning_alignment_pct}, "
                    f"conclusion {summary.conclusion_agreement_pct}"
                )
            if res.manifest.skipped:
                print(f"skipped {len(res.manifest.skipped)} comparisons (see manifest.json)")
        print(f"manifest: {res.out_dir / 'manifest.json'}")
        return 0
    except (NoveltyEngineError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
