"""Pipeline composition: configuration, stage execution, manifests and outputs."""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator, TypeVar

from . import assessment as asm
from . import corpus, discovery, evaluation, ingest, ranking
from .diagnostics import Diagnostics
from .errors import SchemaError, StageError
from .gateway import DigestStore, FixtureStore, Gateway, MODES, ProviderSettings, canonical_json
from .textutil import truncate_words

log = logging.getLogger("novelty_engine")
T = TypeVar("T")

STAGES = ("ingest", "discovery", "ranking", "corpus", "assessment")
SUBMISSION_ID = "submission"


@dataclass
class PipelineConfig:
    discovery: discovery.DiscoveryConfig = field(default_factory=discovery.DiscoveryConfig)
    ranking: ranking.RankingConfig = field(default_factory=ranking.RankingConfig)
    corpus: corpus.CorpusConfig = field(default_factory=corpus.CorpusConfig)
    providers: ProviderSettings = field(default_factory=ProviderSettings)
    tei_service_url: str = "http://localhost:8070"
    scholar_url: str = "https://api.semanticscholar.org/graph/v1"
    scholar_key_env: str = "S2_API_KEY"
    fixtures_dir: str | None = None
    mode: str = "live"
    cache_dir: str | None = ".novelty-cache"
    parallelism: int = 4
    n_judge_runs: int = 3
    human_baseline: bool = False
    no_structured_extraction: bool = False
    no_landscape: bool = False
    naive_prompt: bool = False

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode in ("record", "replay") and not self.fixtures_dir:
            raise ValueError(f"{self.mode} mode needs a fixtures directory")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.n_judge_runs < 1:
            raise ValueError("n_judge_runs must be >= 1")

    @property
    def variant(self) -> str:
        if self.naive_prompt:
            return "naive"
        parts = []
        if self.no_structured_extraction:
            parts.append("no-structured-extraction")
        if self.no_landscape:
            parts.append("no-landscape")
        return "+".join(parts) or "full"

    # local paths are left out so snapshots and run ids travel between machines
    _LOCAL = ("fixtures_dir", "cache_dir")

    def snapshot(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        for k in self._LOCAL:
            d.pop(k)
        return d

    def replace(self, **changes: Any) -> PipelineConfig:
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> PipelineConfig:
        nested = {
            "discovery": discovery.DiscoveryConfig,
            "ranking": ranking.RankingConfig,
            "corpus": corpus.CorpusConfig,
            "providers": ProviderSettings,
        }
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        for k, v in d.items():
            if k in nested:
                sub = nested[k]
                sub_known = {f.name for f in dataclasses.fields(sub)}
                bad = set(v) - sub_known
                if bad:
                    raise ValueError(f"unknown keys in {k!r}: {sorted(bad)}")
                kwargs[k] = sub(**v)
            else:
                kwargs[k] = v
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> PipelineConfig:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(str(path), f"invalid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise SchemaError(str(path), "config must be a JSON object")
        # relative paths in a config file are relative to that file
        base = Path(path).resolve().parent
        for key in cls._LOCAL:
            if isinstance(doc.get(key), str) and not Path(doc[key]).is_absolute():
                doc[key] = str(base / doc[key])
        try:
            return cls.from_dict(doc)
        except (TypeError, ValueError) as exc:
            raise SchemaError(str(path), str(exc)) from exc


def make_gateway(cfg: PipelineConfig, transport: Any = None, **kwargs: Any) -> Gateway:
    fixtures = FixtureStore(cfg.fixtures_dir, cfg.mode) if cfg.fixtures_dir and cfg.mode != "live" else None
    cache = DigestStore(cfg.cache_dir) if cfg.cache_dir else None
    return Gateway(cfg.providers, fixtures=fixtures, cache=cache, transport=transport, **kwargs)


# --------------------------------------------------------------------------
# manifests


def _sha(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


@dataclass
class RunManifest:
    run_id: str
    command: str
    config: dict[str, Any]
    inputs: dict[str, Any]
    stages: dict[str, dict[str, Any]] = field(default_factory=dict)
    provider_calls: list[dict[str, str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=dict)
    skipped: list[dict[str, str]] = field(default_factory=list)
    # kept out of manifest.json so that file is reproducible byte for byte
    timings: dict[str, float] = field(default_factory=dict)

    def digests(self) -> list[str]:
        return [c["digest"] for c in self.provider_calls]

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d.pop("timings")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False, sort_keys=True) + "\n"


def _provider_calls(gateway: Gateway) -> list[dict[str, str]]:
    """One entry per distinct request digest, tagged with the first stage that made it."""
    first: dict[str, dict[str, str]] = {}
    for c in gateway.calls:
        first.setdefault(c.digest, {"digest": c.digest, "kind": c.kind, "stage": c.stage})
    return sorted(first.values(), key=lambda c: c["digest"])


class _Runner:
    def __init__(self, gateway: Gateway, manifest: RunManifest, diag: Diagnostics, stage_dir: Path | None):
        self.gateway = gateway
        self.manifest = manifest
        self.diag = diag
        self.stage_dir = stage_dir

    def stage(self, name: str, fn: Callable[[], T], dump: Callable[[T], Any] | None = None) -> T:
        self.gateway.stage = name
        start = time.perf_counter()
        try:
            result = fn()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        finally:
            self.manifest.timings[name] = round(time.perf_counter() - start, 4)
        payload = dump(result) if dump is not None else None
        entry: dict[str, Any] = {}
        if payload is not None:
            entry["output_sha256"] = _sha(payload)
            if self.stage_dir is not None:
                self.stage_dir.mkdir(parents=True, exist_ok=True)
                (self.stage_dir / f"{name}.json").write_text(
                    json.dumps(payload, indent=1, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8"
                )
        self.manifest.stages[name] = entry
        return result

    def finish(self) -> None:
        m = self.manifest
        m.provider_calls = _provider_calls(self.gateway)
        for name, entry in m.stages.items():
            entry["provider_calls"] = sum(1 for c in m.provider_calls if c["stage"] == name)
        m.warnings = list(self.diag.warnings)
        m.counters = dict(sorted(self.diag.counters.items()))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


# --------------------------------------------------------------------------
# assess


@dataclass
class AssessResult:
    report: asm.NoveltyReport
    manifest: RunManifest
    out_dir: Path | None


def _introduction_of(sub: ingest.ParsedSubmission, word_cap: int) -> str:
    for name, text in sub.section_texts.items():
        if "introduction" in name.lower():
            return truncate_words(text, word_cap)
    return ""


def _selected_contexts(
    sub: ingest.ParsedSubmission, selected: list[ranking.RankedCandidate]
) -> list[ingest.CitationContext]:
    """Citation sentences whose bibliography entry is one of the selected cited papers."""
    cited_titles = [c.record.title for c in selected if c.record.origin == "cited"]
    keys = {
        b.key
        for b in sub.bibliography
        if b.title and any(discovery.titles_match(b.title, t) for t in cited_titles)
    }
    return [c for c in sub.citation_contexts if c.bib_key in keys]


def run_assess(
    pdf_path: str | Path,
    submission_date: dt.date,
    cfg: PipelineConfig,
    out_dir: str | Path | None = None,
    gateway: Gateway | None = None,
) -> AssessResult:
    pdf_path = Path(pdf_path)
    if not pdf_path.is_file():
        raise FileNotFoundError(f"no such PDF: {pdf_path}")
    pdf = pdf_path.read_bytes()
    own_gateway = gateway is None
    gw = gateway or make_gateway(cfg)
    out = Path(out_dir) if out_dir is not None else None
    inputs = {
        "pdf_sha256": hashlib.sha256(pdf).hexdigest(),
        "submission_date": submission_date.isoformat(),
    }
    snapshot = cfg.snapshot()
    manifest = RunManifest(
        run_id=_sha({"command": "assess", "inputs": inputs, "config": snapshot})[:16],
        command="assess",
        config=snapshot,
        inputs=inputs,
    )
    diag = Diagnostics()
    runner = _Runner(gw, manifest, diag, out / "stages" if out else None)
    try:
        report = _assess(pdf, submission_date, cfg, gw, runner, diag)
    finally:
        runner.finish()
        if own_gateway:
            gw.close()
    if out is not None:
        _write(out / "report.md", report.to_markdown())
        _write(out / "report.json", json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n")
        _write(out / "manifest.json", manifest.to_json())
        _write(out / "timings.json", json.dumps(manifest.timings, indent=2) + "\n")
    return AssessResult(report, manifest, out)


def _assess(
    pdf: bytes,
    date: dt.date,
    cfg: PipelineConfig,
    gw: Gateway,
    run: _Runner,
    diag: Diagnostics,
) -> asm.NoveltyReport:
    sub = run.stage(
        "ingest",
        lambda: ingest.parse_submission(pdf, date, gw, cfg.tei_service_url, diag),
        lambda s: s.to_dict(),
    )

    if cfg.naive_prompt:
        summary = run.stage("assessment", lambda: asm.naive_assessment(sub.title, sub.abstract, gw))
        return asm.NoveltyReport(
            sub.title, summary, None, None, variant=cfg.variant, inputs_manifest=gw.call_digests()
        )

    client = discovery.ScholarClient(gw, cfg.scholar_url, cfg.scholar_key_env)

    def discover() -> tuple[list[discovery.PaperRecord], list[discovery.PaperRecord]]:
        cited = discovery.match_cited_works(sub.bibliography, client, diag)
        for entry, reason in cited.unmatched:
            diag.warn(f"bibliography entry {entry.key} unmatched: {reason}")
        cited_kept = discovery.filter_candidates(
            cited.records, sub.title, date, cfg.discovery.date_filter_enabled, diag
        )
        queries = discovery.generate_queries(sub, gw, cfg.discovery, diag)
        found = discovery.discover_uncited(
            queries, sub.title, date, client, cfg.discovery, diag, cfg.parallelism
        )
        return cited_kept, found

    cited, found = run.stage(
        "discovery",
        discover,
        lambda r: {"cited": [x.to_dict() for x in r[0]], "discovered": [x.to_dict() for x in r[1]]},
    )
    candidates = discovery.merge_candidates(cited, found)

    def rank() -> list[ranking.RankedCandidate]:
        if not candidates:
            diag.warn("no related-work candidates found")
            return []
        q, vecs = ranking.embed_candidates(candidates, sub.title, sub.abstract, gw, diag)
        ranked = ranking.cosine_rank(candidates, q, vecs)
        reranked = ranking.llm_rerank(ranked, sub.title, sub.abstract, gw, cfg.ranking, diag)
        return ranking.select_top_k(reranked, cfg.ranking, diag)

    selected = run.stage(
        "ranking",
        rank,
        lambda sel: [
            {
                "record_id": c.record.record_id,
                "embedding_score": round(c.embedding_score, 12),
                "embedding_rank": c.embedding_rank,
                "final_rank": c.final_rank,
            }
            for c in sel
        ],
    )

    acquired = run.stage(
        "corpus",
        lambda: corpus.acquire_all([c.record for c in selected], gw, cfg.corpus, diag),
        lambda papers: [p.to_dict() for p in papers],
    )

    def assess() -> asm.NoveltyReport:
        submission = asm.PaperContent(
            SUBMISSION_ID, sub.title, sub.abstract, _introduction_of(sub, cfg.corpus.intro_word_cap)
        )
        related = [
            asm.PaperContent(p.record.record_id, p.record.title, p.record.abstract, p.intro_text)
            for p in acquired
        ]
        if cfg.no_structured_extraction:
            views: list[asm.PaperView] = [asm.raw_view(p) for p in [submission, *related]]
        else:
            views = list(asm.extract_all([submission, *related], gw, diag, cfg.parallelism))
        sub_view, rel_views = views[0], views[1:]
        landscape = None
        if not cfg.no_landscape:
            if rel_views:
                landscape = asm.build_landscape(sub_view, rel_views, gw, diag)
            else:
                diag.warn("no related papers; landscape analysis skipped")
        uncited = [c.record.title for c in selected if c.record.origin == "discovered"]
        delta = asm.delta_analysis(
            landscape, sub_view, _selected_contexts(sub, selected), uncited, gw, sub.bibliography, diag
        )
        summary = asm.summarize(delta, gw, diag)
        related_rows = [
            {
                "rank": c.final_rank,
                "title": c.record.title,
                "origin": c.record.origin,
                "record_id": c.record.record_id,
            }
            for c in selected
        ]
        return asm.NoveltyReport(
            sub.title,
            summary,
            delta,
            landscape,
            related_rows,
            variant=cfg.variant,
            inputs_manifest=gw.call_digests(),
        )

    return run.stage("assessment", assess)


# --------------------------------------------------------------------------
# evaluate


@dataclass(frozen=True)
class Comparison:
    system: str
    reference: evaluation.ReferenceAssessment
    candidate: str


def load_candidates(candidates_dir: str | Path) -> dict[str, dict[str, str]]:
    """Map system name -> paper_id -> assessment text.

    Each subdirectory is one system and holds ``<paper_id>.md`` / ``.txt`` files
    or ``report.json`` style documents with a ``summary`` field. Files placed
    directly in ``candidates_dir`` belong to a system named after the directory.
    """
    root = Path(candidates_dir)
    if not root.is_dir():
        raise SchemaError(str(root), "candidates directory does not exist")
    systems: dict[str, dict[str, str]] = {}

    def read(path: Path) -> str:
        if path.suffix == ".json":
            try:
                doc = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise SchemaError(str(path), f"invalid JSON: {exc}") from exc
            if not isinstance(doc, dict) or not isinstance(doc.get("summary"), str):
                raise SchemaError(str(path), "candidate JSON needs a string 'summary' field")
            return doc["summary"]
        return path.read_text(encoding="utf-8")

    def files(d: Path) -> Iterator[Path]:
        return (p for p in sorted(d.iterdir()) if p.is_file() and p.suffix in (".md", ".txt", ".json"))

    for p in files(root):
        systems.setdefault(root.name, {})[p.stem] = read(p)
    for d in sorted(x for x in root.iterdir() if x.is_dir()):
        for p in files(d):
            systems.setdefault(d.name, {})[p.stem] = read(p)
    return systems


@dataclass
class EvaluateResult:
    summaries: dict[str, evaluation.MetricsSummary]
    verdicts: dict[str, list[list[evaluation.JudgeVerdict]]]
    manifest: RunManifest
    out_dir: Path | None


def run_evaluate(
    dataset_dir: str | Path,
    candidates_dir: str | Path,
    cfg: PipelineConfig,
    out_dir: str | Path | None = None,
    gateway: Gateway | None = None,
) -> EvaluateResult:
    papers = evaluation.load_dataset(dataset_dir)
    systems = load_candidates(candidates_dir)
    own_gateway = gateway is None
    gw = gateway or make_gateway(cfg)
    out = Path(out_dir) if out_dir is not None else None
    snapshot = cfg.snapshot()
    inputs = {
        "dataset_sha256": _sha([dataclasses.asdict(p) | {"source": ""} for p in papers]),
        "candidates_sha256": _sha(systems),
    }
    manifest = RunManifest(
        run_id=_sha({"command": "evaluate", "inputs": inputs, "config": snapshot})[:16],
        command="evaluate",
        config=snapshot,
        inputs=inputs,
    )
    diag = Diagnostics()
    runner = _Runner(gw, manifest, diag, None)
    cache_root = Path(cfg.cache_dir) / "core-judgments" if cfg.cache_dir else None
    jcache = evaluation.CoreJudgmentCache(cache_root)
    try:
        result = _evaluate(papers, systems, cfg, gw, runner, diag, jcache, manifest)
    finally:
        runner.finish()
        if own_gateway:
            gw.close()
    summaries, verdicts = result
    if out is not None:
        if summaries:
            evaluation.write_tables(summaries, out)
        _write(
            out / "metrics.json",
            json.dumps({k: v.to_dict() for k, v in summaries.items()}, indent=2, sort_keys=True) + "\n",
        )
        _write(
            out / "verdicts.json",
            json.dumps(
                {s: [[v.to_dict() for v in run] for run in runs] for s, runs in verdicts.items()},
                indent=1,
                ensure_ascii=False,
            )
            + "\n",
        )
        _write(out / "manifest.json", manifest.to_json())
        _write(out / "timings.json", json.dumps(manifest.timings, indent=2) + "\n")
    return EvaluateResult(summaries, verdicts, manifest, out)


def _evaluate(
    papers: list[evaluation.PaperReviews],
    systems: dict[str, dict[str, str]],
    cfg: PipelineConfig,
    gw: Gateway,
    run: _Runner,
    diag: Diagnostics,
    jcache: evaluation.CoreJudgmentCache,
    manifest: RunManifest,
) -> tuple[dict[str, evaluation.MetricsSummary], dict[str, list[list[evaluation.JudgeVerdict]]]]:
    def normalize() -> list[tuple[evaluation.PaperReviews, evaluation.ReferenceAssessment]]:
        refs = []
        for p in papers:
            for r in p.reviews:
                if not any(s.strip() for s in r.novelty_statements):
                    manifest.skipped.append(
                        {"paper_id": p.paper_id, "review_id": r.review_id, "reason": "no novelty statements"}
                    )
                    continue
                refs.append(
                    (p, evaluation.normalize_review(r.text, r.novelty_statements, gw, p.paper_id, r.review_id, diag))
                )
        return refs

    refs = run.stage("normalization", normalize, lambda rs: [dataclasses.asdict(r) for _, r in rs])

    def extract() -> dict[tuple[str, str], list[evaluation.CoreJudgment]]:
        return {
            (r.paper_id, r.review_id): evaluation.extract_core_judgments(r, gw, jcache, diag) for _, r in refs
        }

    core = run.stage(
        "core-judgments",
        extract,
        lambda c: {f"{k[0]}/{k[1]}": [dataclasses.asdict(j) for j in v] for k, v in sorted(c.items())},
    )

    comparisons: list[Comparison] = []
    for system, texts in sorted(systems.items()):
        for p, ref in refs:
            text = texts.get(p.paper_id)
            if text is None or not text.strip():
                manifest.skipped.append(
                    {
                        "system": system,
                        "paper_id": p.paper_id,
                        "review_id": ref.review_id,
                        "reason": "candidate missing" if text is None else "candidate empty",
                    }
                )
                continue
            comparisons.append(Comparison(system, ref, text))
    if cfg.human_baseline:
        # every ordered pair of distinct reviews of the same paper
        by_paper: dict[str, list[evaluation.ReferenceAssessment]] = {}
        for p, ref in refs:
            by_paper.setdefault(p.paper_id, []).append(ref)
        for group in by_paper.values():
            for a in group:
                for b in group:
                    if a is not b:
                        comparisons.append(Comparison("Human-vs-Human", a, " ".join(b.source_statements)))

    def judge_all() -> dict[str, list[list[evaluation.JudgeVerdict]]]:
        jobs = [(rep, c, Diagnostics()) for rep in range(cfg.n_judge_runs) for c in comparisons]

        def one(job: tuple[int, Comparison, Diagnostics]) -> evaluation.JudgeVerdict:
            rep, c, local = job
            key = (c.reference.paper_id, c.reference.review_id)
            return evaluation.judge(core[key], c.reference, c.candidate, gw, rep, local)

        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            results = list(pool.map(one, jobs))
        out: dict[str, list[list[evaluation.JudgeVerdict]]] = {}
        for (rep, c, local), v in zip(jobs, results):
            diag.merge(local)
            runs = out.setdefault(c.system, [])
            if len(runs) <= rep:
                runs.append([])
            runs[rep].append(v)
        return out

    verdicts = run.stage(
        "judging",
        judge_all,
        lambda vs: {s: [[v.to_dict() for v in r] for r in runs] for s, runs in vs.items()},
    )
    summaries = run.stage(
        "aggregation",
        lambda: {s: evaluation.aggregate_metrics(runs) for s, runs in verdicts.items()},
        lambda sm: {s: m.to_dict() for s, m in sm.items()},
    )
    return summaries, verdicts


# --------------------------------------------------------------------------
# stats


def run_stats(dataset_dir: str | Path) -> list[evaluation.StatsRow]:
    papers = evaluation.load_dataset(dataset_dir)
    return evaluation.corpus_stats(evaluation.review_rows(papers))
