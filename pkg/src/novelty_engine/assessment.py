"""The four assessment steps: structured extraction, landscape, delta, summary."""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence, Union

from .diagnostics import Diagnostics, count, warn
from .errors import EmptyCompletion
from .gateway import Gateway, PromptRequest
from .ingest import BibEntry, CitationContext
from .llm import Invalid, ask, reprompt_text
from .prompts import render
from .textutil import parse_json_object, split_sentences

EXTRACTION_FIELDS = ("methods", "problems", "datasets", "metrics", "results", "novelty_claims")
LANDSCAPE_SECTIONS = (
    "METHODOLOGICAL LANDSCAPE",
    "PROBLEM SPACE MAPPING",
    "EVALUATION LANDSCAPE",
    "RESEARCH CLUSTERS",
    "TECHNICAL EVOLUTION",
)
DELTA_SECTIONS = (
    "RESEARCH CONTEXT POSITIONING",
    "AUTHOR CITATION ANALYSIS",
    "CONTRIBUTION DELTA ANALYSIS",
    "FIELD CONTEXT CONSIDERATIONS",
    "CRITICAL ASSESSMENT CONSIDERATIONS",
    "RELATED WORK CONSIDERATIONS",
    "KEY OBSERVATION SUMMARY",
)
SUMMARY_SENTENCES = (4, 7)
NONE_MARKER = "(none)"


@dataclass(frozen=True)
class PaperContent:
    paper_id: str
    title: str
    abstract: str = ""
    introduction: str = ""


@dataclass
class StructuredExtraction:
    paper_id: str
    methods: list[str] = field(default_factory=list)
    problems: list[str] = field(default_factory=list)
    datasets: list[str] = field(default_factory=list)
    metrics: list[str] = field(default_factory=list)
    results: list[dict[str, str]] = field(default_factory=list)
    novelty_claims: list[str] = field(default_factory=list)
    title: str = ""

    def fields(self) -> dict[str, Any]:
        return {name: getattr(self, name) for name in EXTRACTION_FIELDS}

    def prompt_block(self) -> str:
        return json.dumps(self.fields(), indent=2, ensure_ascii=False)

    def to_dict(self) -> dict[str, Any]:
        return {"paper_id": self.paper_id, "title": self.title, **self.fields()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> StructuredExtraction:
        return cls(d["paper_id"], title=d.get("title", ""), **{k: d.get(k, []) for k in EXTRACTION_FIELDS})


@dataclass(frozen=True)
class RawPaper:
    """Unstructured stand-in for an extraction (structured-extraction ablation)."""

    paper_id: str
    title: str
    text: str

    def prompt_block(self) -> str:
        return self.text


PaperView = Union[StructuredExtraction, RawPaper]


@dataclass
class LandscapeReport:
    text: str
    sections: dict[str, str]

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "sections": dict(self.sections)}


@dataclass
class DeltaReport:
    text: str
    sections: dict[str, str]

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "sections": dict(self.sections)}


@dataclass
class NoveltyReport:
    title: str
    summary: str
    delta: DeltaReport | None
    landscape: LandscapeReport | None
    related: list[dict[str, Any]] = field(default_factory=list)
    variant: str = "full"
    inputs_manifest: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.summary.strip():
            raise ValueError("summary must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "title": self.title,
            "variant": self.variant,
            "summary": self.summary,
            "delta": self.delta.to_dict() if self.delta else None,
            "landscape": self.landscape.to_dict() if self.landscape else None,
            "related": list(self.related),
            "inputs_manifest": list(self.inputs_manifest),
        }

    def to_markdown(self) -> str:
        out = [f"# Novelty assessment: {self.title}", "", "## Summary", "", self.summary.strip(), ""]
        if self.delta is not None:
            out += ["## Delta analysis", ""]
            for name in DELTA_SECTIONS:
                out += [f"### {name.title()}", "", self.delta.sections[name].strip(), ""]
        if self.landscape is not None:
            out += ["## Research landscape", ""]
            for name in LANDSCAPE_SECTIONS:
                out += [f"### {name.title()}", "", self.landscape.sections[name].strip(), ""]
        if self.related:
            out += ["## Related work considered", ""]
            for r in self.related:
                out.append(f"{r['rank']}. {r['title']} ({r['origin']}, {r['record_id']})")
            out.append("")
        out += ["## Provider calls", ""]
        out += [f"- `{d}`" for d in self.inputs_manifest]
        return "\n".join(out).rstrip() + "\n"


# --------------------------------------------------------------------------
# step 1: structured extraction


def _string_list(value: Any) -> list[str]:
    if value is None:
        return []
    if isinstance(value, (str, int, float)):
        value = [value]
    if not isinstance(value, list):
        return [str(value)]
    out = []
    for v in value:
        if isinstance(v, dict):
            v = "; ".join(f"{k}: {x}" for k, x in v.items())
        s = str(v).strip()
        if s:
            out.append(s)
    return out


def parse_extraction(
    text: str, paper_id: str, title: str = "", diag: Diagnostics | None = None
) -> StructuredExtraction:
    obj = parse_json_object(text)
    if obj is None:
        raise Invalid("answer is not a JSON object")
    values: dict[str, Any] = {}
    for name in EXTRACTION_FIELDS:
        if name not in obj:
            warn(diag, f"extraction for {paper_id} is missing {name!r}; using an empty list")
            values[name] = []
            continue
        if name != "results":
            values[name] = _string_list(obj[name])
            continue
        results = []
        raw = obj[name] if isinstance(obj[name], list) else []
        for item in raw:
            if isinstance(item, dict):
                metric = str(item.get("metric", "")).strip()
                value = str(item.get("value", "")).strip()
                if metric and value:
                    results.append({"metric": metric, "value": value})
                    continue
            count(diag, "dropped_results")
        values[name] = results
    return StructuredExtraction(paper_id, title=title, **values)


def extract_structure(
    paper: PaperContent, gateway: Gateway, diag: Diagnostics | None = None
) -> StructuredExtraction:
    if not paper.title.strip():
        raise ValueError("paper title is required")
    text = render(
        "extraction",
        title=paper.title,
        abstract=paper.abstract,
        introduction=paper.introduction,
    )
    return ask(
        gateway,
        "extraction",
        text,
        lambda t: parse_extraction(t, paper.paper_id, paper.title, diag),
        diag=diag,
        label=f"extraction:{paper.paper_id}",
    )


def extract_all(
    papers: Sequence[PaperContent],
    gateway: Gateway,
    diag: Diagnostics | None = None,
    parallelism: int = 4,
) -> list[StructuredExtraction]:
    local = [Diagnostics() for _ in papers]
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        out = list(pool.map(lambda pd: extract_structure(pd[0], gateway, pd[1]), zip(papers, local)))
    if diag is not None:
        for d in local:
            diag.merge(d)
    return out


def raw_view(paper: PaperContent) -> RawPaper:
    parts = [f"Abstract: {paper.abstract}".strip()]
    if paper.introduction:
        parts.append(f"Introduction: {paper.introduction}")
    return RawPaper(paper.paper_id, paper.title, "\n".join(parts))


# --------------------------------------------------------------------------
# section validation

_NUMBERING = re.compile(r"^\d+[.)]\s*")


def _header_of(line: str, headers: Sequence[str]) -> str | None:
    """Match a header line, tolerating markdown hashes, bold, numbering and a colon."""
    s = line.strip().lstrip("#").strip().strip("*_").strip()
    s = _NUMBERING.sub("", s).strip("*_").strip()
    s = s.rstrip(":").strip().strip("*_").strip().rstrip(":").strip().upper()
    return s if s in headers else None


def parse_sections(text: str, headers: Sequence[str]) -> dict[str, str]:
    """Split a completion on the required header lines.

    Raises :class:`Invalid` if any header is missing or has an empty body.
    """
    bodies: dict[str, list[str]] = {}
    current: str | None = None
    for line in text.splitlines():
        name = _header_of(line, headers)
        if name is not None:
            current = name
            bodies.setdefault(name, [])
            continue
        if current is not None:
            bodies[current].append(line)
    missing = [h for h in headers if h not in bodies]
    if missing:
        raise Invalid(f"missing section headers: {', '.join(missing)}")
    sections = {h: "\n".join(bodies[h]).strip() for h in headers}
    empty = [h for h, body in sections.items() if not body]
    if empty:
        raise Invalid(f"empty sections: {', '.join(empty)}")
    return sections


# --------------------------------------------------------------------------
# step 2: landscape


def landscape_papers_block(submission: PaperView, related: Sequence[PaperView]) -> str:
    blocks = [f"Submission paper (focus of the analysis): {submission.title}\n{submission.prompt_block()}"]
    for i, p in enumerate(related, start=1):
        blocks.append(f"Paper {i}: {p.title}\n{p.prompt_block()}")
    return "\n\n".join(blocks)


def build_landscape(
    submission: PaperView,
    related: Sequence[PaperView],
    gateway: Gateway,
    diag: Diagnostics | None = None,
) -> LandscapeReport:
    if not related:
        raise ValueError("landscape analysis needs at least one related paper")
    text = render("landscape", papers=landscape_papers_block(submission, related))

    def parse(completion: str) -> LandscapeReport:
        return LandscapeReport(completion, parse_sections(completion, LANDSCAPE_SECTIONS))

    return ask(gateway, "landscape", text, parse, diag=diag, max_output_tokens=8192)


# --------------------------------------------------------------------------
# step 3: delta analysis


def format_citation_contexts(
    contexts: Sequence[CitationContext], bibliography: Sequence[BibEntry] = ()
) -> str:
    if not contexts:
        return NONE_MARKER
    names = {b.key: (b.title or b.raw_text) for b in bibliography}
    grouped: dict[str, list[CitationContext]] = {}
    for c in contexts:
        grouped.setdefault(c.bib_key, []).append(c)
    blocks = []
    for key, items in grouped.items():
        lines = [f"[{names.get(key, key)}]"]
        for c in items:
            where = f" ({c.section})" if c.section else ""
            lines.append(f"- '{c.sentence}'{where}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def format_titles(titles: Sequence[str]) -> str:
    titles = [t for t in titles if t.strip()]
    return "\n".join(f"- {t}" for t in titles) if titles else NONE_MARKER


def structured_representation(submission: PaperView) -> str:
    return f"## Submission Paper\nTitle: {submission.title}\n{submission.prompt_block()}"


def delta_prompt(
    landscape: LandscapeReport | None,
    submission: PaperView,
    citation_contexts: Sequence[CitationContext],
    uncited_titles: Sequence[str],
    bibliography: Sequence[BibEntry] = (),
) -> str:
    return render(
        "delta",
        structured_representation=structured_representation(submission),
        not_cited_paper_titles=format_titles(uncited_titles),
        citation_contexts=format_citation_contexts(citation_contexts, bibliography),
        research_landscape=landscape.text.strip() if landscape is not None else NONE_MARKER,
    )


def delta_analysis(
    landscape: LandscapeReport | None,
    submission: PaperView,
    citation_contexts: Sequence[CitationContext],
    uncited_titles: Sequence[str],
    gateway: Gateway,
    bibliography: Sequence[BibEntry] = (),
    diag: Diagnostics | None = None,
) -> DeltaReport:
    text = delta_prompt(landscape, submission, citation_contexts, uncited_titles, bibliography)

    def parse(completion: str) -> DeltaReport:
        return DeltaReport(completion, parse_sections(completion, DELTA_SECTIONS))

    return ask(gateway, "delta", text, parse, diag=diag, max_output_tokens=8192)


# --------------------------------------------------------------------------
# step 4: summary


def summarize(delta: DeltaReport | str, gateway: Gateway, diag: Diagnostics | None = None) -> str:
    """Five-sentence reviewer summary; 4 to 7 sentences pass without a reprompt."""
    body = delta.text if isinstance(delta, DeltaReport) else delta
    text = render("summary", novelty_assessment=body.strip())
    lo, hi = SUMMARY_SENTENCES
    reason = ""
    for attempt in range(2):
        rendered = text if attempt == 0 else reprompt_text(text, reason)
        try:
            out = gateway.chat_complete(
                PromptRequest("summary", rendered, max_output_tokens=1024), label="summary"
            ).text.strip()
        except EmptyCompletion:
            if attempt == 1:
                raise
            reason = "empty answer"
            count(diag, "reprompt:summary")
            continue
        n = len(split_sentences(out))
        if lo <= n <= hi:
            return out
        if attempt == 1:
            warn(diag, f"summary has {n} sentences after reprompt; accepted")
            return out
        reason = f"answer had {n} sentences; write 5 sentences"
        count(diag, "reprompt:summary")
    raise AssertionError("unreachable")


def naive_assessment(title: str, abstract: str, gateway: Gateway) -> str:
    text = render("naive", title=title, abstract=abstract)
    return gateway.chat_complete(PromptRequest("naive", text, max_output_tokens=1024), label="naive").text.strip()
