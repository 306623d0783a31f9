"""LLM-as-judge harness: reference normalization, core judgments, verdicts, metrics."""

from __future__ import annotations

import csv
import hashlib
import json
import statistics
import threading
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Hashable, Iterable, Mapping, Sequence

from .diagnostics import Diagnostics, warn
from .errors import EmptyInput, LengthMismatch, SchemaError
from .gateway import Gateway
from .llm import Invalid, ask
from .prompts import render
from .textutil import parse_json_object

CONCLUSIONS = ("SUFFICIENT", "INSUFFICIENT", "MIXED")
ENGAGEMENT = ("NONE", "LIMITED", "EXTENSIVE")
DEPTH = ("SURFACE", "MODERATE", "DEEP")
SENTIMENT = {"SUFFICIENT": "positive", "INSUFFICIENT": "negative", "MIXED": "neutral"}


@dataclass(frozen=True)
class ReferenceAssessment:
    paper_id: str
    review_id: str
    normalized_text: str
    source_statements: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.normalized_text.strip():
            raise ValueError("normalized_text must be non-empty")


@dataclass(frozen=True)
class CoreJudgment:
    statement: str
    rationale: str = ""

    def __post_init__(self) -> None:
        if not self.statement.strip():
            raise ValueError("core judgment statement must be non-empty")


@dataclass(frozen=True)
class JudgmentMatch:
    core: CoreJudgment
    matched: bool
    confidence: float
    explanation: str = ""


@dataclass(frozen=True)
class JudgeVerdict:
    judgment_matches: tuple[JudgmentMatch, ...]
    reference_conclusion: str
    candidate_conclusion: str
    engagement: str
    depth: str
    judge_reported_aligned: bool | None = None

    def __post_init__(self) -> None:
        if not self.judgment_matches:
            raise ValueError("a verdict needs at least one judgment match")
        for value, allowed in (
            (self.reference_conclusion, CONCLUSIONS),
            (self.candidate_conclusion, CONCLUSIONS),
            (self.engagement, ENGAGEMENT),
            (self.depth, DEPTH),
        ):
            if value not in allowed:
                raise ValueError(f"{value!r} is not one of {allowed}")

    @property
    def conclusions_aligned(self) -> bool:
        return self.reference_conclusion == self.candidate_conclusion

    def to_dict(self) -> dict[str, Any]:
        return {
            "judgment_matches": [
                {
                    "statement": m.core.statement,
                    "matched": m.matched,
                    "confidence": m.confidence,
                    "explanation": m.explanation,
                }
                for m in self.judgment_matches
            ],
            "reference_conclusion": self.reference_conclusion,
            "candidate_conclusion": self.candidate_conclusion,
            "conclusions_aligned": self.conclusions_aligned,
            "judge_reported_aligned": self.judge_reported_aligned,
            "engagement": self.engagement,
            "depth": self.depth,
        }


@dataclass(frozen=True)
class MeanStd:
    mean: float
    std: float

    def __str__(self) -> str:
        return f"{self.mean:.1f} ± {self.std:.2f}"


@dataclass
class MetricsSummary:
    reasoning_alignment_pct: MeanStd
    conclusion_agreement_pct: MeanStd
    positive_shift_pct: MeanStd
    negative_shift_pct: MeanStd
    depth_distribution: dict[str, float]
    engagement_distribution: dict[str, float]
    n_comparisons: int
    n_judge_runs: int

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for name in ("reasoning_alignment_pct", "conclusion_agreement_pct", "positive_shift_pct", "negative_shift_pct"):
            ms = getattr(self, name)
            out[name] = {"mean": ms.mean, "std": ms.std}
        out["depth_distribution"] = dict(self.depth_distribution)
        out["engagement_distribution"] = dict(self.engagement_distribution)
        out["n_comparisons"] = self.n_comparisons
        out["n_judge_runs"] = self.n_judge_runs
        return out


# --------------------------------------------------------------------------
# reference normalization


def normalize_review(
    full_review: str,
    novelty_statements: Sequence[str],
    gateway: Gateway,
    paper_id: str = "",
    review_id: str = "",
    diag: Diagnostics | None = None,
) -> ReferenceAssessment:
    statements = [s.strip() for s in novelty_statements if s.strip()]
    if not statements:
        raise ValueError("at least one novelty statement is required")
    text = render(
        "normalization",
        full_review=full_review.strip(),
        novelty_statements="\n".join(f"- {s}" for s in statements),
    )

    def parse(completion: str) -> str:
        body = completion.strip().strip('"').strip()
        paragraphs = [" ".join(p.split()) for p in body.split("\n\n") if p.strip()]
        if not paragraphs:
            raise Invalid("empty answer")
        if len(paragraphs) > 1:
            warn(diag, f"normalized review {review_id or '?'} had {len(paragraphs)} paragraphs; joined")
        return " ".join(paragraphs)

    paragraph = ask(gateway, "normalization", text, parse, diag=diag, label=f"normalize:{review_id}")
    return ReferenceAssessment(paper_id, review_id, paragraph, tuple(statements))


# --------------------------------------------------------------------------
# core judgments


def parse_core_judgments(text: str) -> list[CoreJudgment]:
    obj = parse_json_object(text)
    if obj is None:
        raise Invalid("answer is not a JSON object")
    items = obj.get("judgments", obj.get("core_judgments"))
    if not isinstance(items, list):
        raise Invalid('missing "judgments" list')
    out = []
    for item in items:
        if isinstance(item, str):
            item = {"statement": item}
        if not isinstance(item, dict) or not str(item.get("statement", "")).strip():
            raise Invalid("judgment without a statement")
        out.append(CoreJudgment(str(item["statement"]).strip(), str(item.get("rationale", "")).strip()))
    if not 2 <= len(out) <= 3:
        raise Invalid(f"expected 2 or 3 judgments, got {len(out)}")
    return out


class CoreJudgmentCache:
    """Per-review store so every candidate is judged against the same judgments."""

    def __init__(self, root: str | Path | None = None) -> None:
        self.root = Path(root) if root is not None else None
        self._memory: dict[str, tuple[str, list[CoreJudgment]]] = {}
        self._lock = threading.Lock()

    @staticmethod
    def _key(ref: ReferenceAssessment) -> str:
        return f"{ref.paper_id}__{ref.review_id}"

    @staticmethod
    def _fingerprint(ref: ReferenceAssessment) -> str:
        return hashlib.sha256(ref.normalized_text.encode("utf-8")).hexdigest()

    def get(self, ref: ReferenceAssessment) -> list[CoreJudgment] | None:
        key, fp = self._key(ref), self._fingerprint(ref)
        with self._lock:
            hit = self._memory.get(key)
        if hit is not None and hit[0] == fp:
            return list(hit[1])
        if self.root is None:
            return None
        path = self.root / f"{key}.json"
        if not path.exists():
            return None
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("reference_sha256") != fp:
            return None
        judgments = [CoreJudgment(j["statement"], j.get("rationale", "")) for j in doc["judgments"]]
        with self._lock:
            self._memory[key] = (fp, judgments)
        return list(judgments)

    def put(self, ref: ReferenceAssessment, judgments: list[CoreJudgment]) -> None:
        key, fp = self._key(ref), self._fingerprint(ref)
        with self._lock:
            self._memory[key] = (fp, list(judgments))
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            doc = {
                "paper_id": ref.paper_id,
                "review_id": ref.review_id,
                "reference_sha256": fp,
                "judgments": [{"statement": j.statement, "rationale": j.rationale} for j in judgments],
            }
            tmp = self.root / f".{key}.tmp"
            tmp.write_text(json.dumps(doc, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
            tmp.replace(self.root / f"{key}.json")


def extract_core_judgments(
    reference: ReferenceAssessment,
    gateway: Gateway,
    cache: CoreJudgmentCache | None = None,
    diag: Diagnostics | None = None,
) -> list[CoreJudgment]:
    if cache is not None:
        hit = cache.get(reference)
        if hit is not None:
            return hit
    text = render("core-judgments", reference_assessment=reference.normalized_text)
    judgments = ask(
        gateway, "core-judgments", text, parse_core_judgments, diag=diag, label=f"core:{reference.review_id}"
    )
    if cache is not None:
        cache.put(reference, judgments)
    return judgments


# --------------------------------------------------------------------------
# judging


def _enum(value: Any, allowed: Sequence[str], what: str) -> str:
    s = str(value or "").strip().upper().replace("_", " ")
    s = s.split()[0] if s else ""
    if s not in allowed:
        raise Invalid(f"{what} {value!r} is not one of {'/'.join(allowed)}")
    return s


def _bool(value: Any, what: str) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in ("true", "yes", "false", "no"):
        return value.strip().lower() in ("true", "yes")
    raise Invalid(f"{what} must be a boolean, got {value!r}")


def _confidence(value: Any) -> float:
    try:
        c = float(value)
    except (TypeError, ValueError):
        raise Invalid(f"confidence {value!r} is not a number") from None
    if 1.0 < c <= 100.0:
        c /= 100.0
    if not 0.0 <= c <= 1.0:
        raise Invalid(f"confidence {value!r} outside [0, 1]")
    return c


def _section(obj: dict[str, Any], *names: str) -> Any:
    for n in names:
        if n in obj:
            return obj[n]
    raise Invalid(f"missing field {names[0]!r}")


def parse_verdict(text: str, core: Sequence[CoreJudgment]) -> JudgeVerdict:
    obj = parse_json_object(text)
    if obj is None:
        raise Invalid("answer is not a JSON object")
    sims = _section(obj, "judgment_similarity", "judgement_similarity")
    if not isinstance(sims, list) or len(sims) != len(core):
        raise Invalid(f"expected {len(core)} judgment_similarity entries")
    if all(isinstance(s, dict) and "core_judgment" in s for s in sims):
        try:
            sims = sorted(sims, key=lambda s: int(s["core_judgment"]))
        except (TypeError, ValueError):
            raise Invalid("core_judgment indices must be integers") from None
    matches = []
    for cj, s in zip(core, sims):
        if not isinstance(s, dict):
            raise Invalid("judgment_similarity entries must be objects")
        matches.append(
            JudgmentMatch(
                cj,
                _bool(_section(s, "matched", "similar"), "matched"),
                _confidence(_section(s, "confidence")),
                str(s.get("explanation", "")),
            )
        )
    concl = _section(obj, "conclusion_alignment")
    engage = _section(obj, "prior_work_engagement")
    depth = _section(obj, "depth_of_analysis")
    if not all(isinstance(x, dict) for x in (concl, engage, depth)):
        raise Invalid("conclusion, engagement and depth must be objects")
    aligned = concl.get("aligned")
    return JudgeVerdict(
        judgment_matches=tuple(matches),
        reference_conclusion=_enum(_section(concl, "reference_conclusion"), CONCLUSIONS, "reference conclusion"),
        candidate_conclusion=_enum(
            _section(concl, "reviewer_conclusion", "candidate_conclusion"), CONCLUSIONS, "reviewer conclusion"
        ),
        engagement=_enum(_section(engage, "level"), ENGAGEMENT, "prior work engagement"),
        depth=_enum(_section(depth, "level"), DEPTH, "depth of analysis"),
        judge_reported_aligned=aligned if isinstance(aligned, bool) else None,
    )


def format_core_judgments(core: Sequence[CoreJudgment]) -> str:
    lines = []
    for i, c in enumerate(core, start=1):
        line = f"{i}. {c.statement}"
        if c.rationale:
            line += f" (Rationale: {c.rationale})"
        lines.append(line)
    return "\n" + "\n".join(lines)


def judge(
    core: Sequence[CoreJudgment],
    reference: ReferenceAssessment,
    candidate: str,
    gateway: Gateway,
    replicate: int = 0,
    diag: Diagnostics | None = None,
) -> JudgeVerdict:
    if not core:
        raise ValueError("core judgments are required")
    if not candidate.strip():
        raise ValueError("candidate assessment is empty")
    text = render(
        "judge",
        extracted_core_judgments=format_core_judgments(core),
        reference_assessment=reference.normalized_text,
        reviewer_assessment=candidate.strip(),
    )
    return ask(
        gateway,
        "judge",
        text,
        lambda t: parse_verdict(t, core),
        diag=diag,
        replicate=replicate,
        label=f"judge:{reference.review_id}",
    )


# --------------------------------------------------------------------------
# metrics


def sentiment_of(conclusion: str) -> str:
    try:
        return SENTIMENT[conclusion]
    except KeyError:
        raise ValueError(f"unknown conclusion {conclusion!r}") from None


def is_positive_shift(v: JudgeVerdict) -> bool:
    return sentiment_of(v.reference_conclusion) in ("neutral", "negative") and sentiment_of(
        v.candidate_conclusion
    ) == "positive"


def is_negative_shift(v: JudgeVerdict) -> bool:
    return sentiment_of(v.reference_conclusion) in ("neutral", "positive") and sentiment_of(
        v.candidate_conclusion
    ) == "negative"


def run_metrics(verdicts: Sequence[JudgeVerdict]) -> dict[str, Any]:
    """Percentages for one judge run."""
    if not verdicts:
        raise EmptyInput("a judge run must contain at least one verdict")
    n = len(verdicts)
    matched = sum(m.matched for v in verdicts for m in v.judgment_matches)
    total = sum(len(v.judgment_matches) for v in verdicts)
    depth = Counter(v.depth for v in verdicts)
    engage = Counter(v.engagement for v in verdicts)
    return {
        "reasoning_alignment": 100.0 * matched / total,
        "conclusion_agreement": 100.0 * sum(v.conclusions_aligned for v in verdicts) / n,
        "positive_shift": 100.0 * sum(map(is_positive_shift, verdicts)) / n,
        "negative_shift": 100.0 * sum(map(is_negative_shift, verdicts)) / n,
        "depth": {k: 100.0 * depth[k] / n for k in DEPTH},
        "engagement": {k: 100.0 * engage[k] / n for k in ENGAGEMENT},
    }


def _mean_std(values: Sequence[float]) -> MeanStd:
    return MeanStd(statistics.fmean(values), statistics.pstdev(values) if len(values) > 1 else 0.0)


def aggregate_metrics(verdict_runs: Sequence[Sequence[JudgeVerdict]]) -> MetricsSummary:
    """Mean and population standard deviation of each metric across judge runs."""
    if not verdict_runs or any(len(run) == 0 for run in verdict_runs):
        raise EmptyInput("need at least one non-empty judge run")
    sizes = {len(run) for run in verdict_runs}
    if len(sizes) != 1:
        raise ValueError(f"judge runs cover different comparison sets (sizes {sorted(sizes)})")
    per_run = [run_metrics(run) for run in verdict_runs]

    def col(name: str) -> MeanStd:
        return _mean_std([m[name] for m in per_run])

    return MetricsSummary(
        reasoning_alignment_pct=col("reasoning_alignment"),
        conclusion_agreement_pct=col("conclusion_agreement"),
        positive_shift_pct=col("positive_shift"),
        negative_shift_pct=col("negative_shift"),
        depth_distribution={k: statistics.fmean(m["depth"][k] for m in per_run) for k in DEPTH},
        engagement_distribution={k: statistics.fmean(m["engagement"][k] for m in per_run) for k in ENGAGEMENT},
        n_comparisons=sizes.pop(),
        n_judge_runs=len(verdict_runs),
    )


# --------------------------------------------------------------------------
# agreement


@dataclass(frozen=True)
class KappaResult:
    kappa: float
    observed: float
    expected: float
    degenerate: bool


def kappa_report(labels_a: Sequence[Hashable], labels_b: Sequence[Hashable]) -> KappaResult:
    if len(labels_a) != len(labels_b):
        raise LengthMismatch(f"label sequences differ in length ({len(labels_a)} vs {len(labels_b)})")
    n = len(labels_a)
    if n == 0:
        raise LengthMismatch("label sequences must be non-empty")
    po = Fraction(sum(a == b for a, b in zip(labels_a, labels_b)), n)
    ca, cb = Counter(labels_a), Counter(labels_b)
    pe = sum((Fraction(ca[c], n) * Fraction(cb[c], n) for c in ca.keys() & cb.keys()), Fraction(0))
    if pe == 1:
        return KappaResult(1.0 if po == 1 else 0.0, float(po), 1.0, True)
    return KappaResult(float((po - pe) / (1 - pe)), float(po), float(pe), False)


def cohen_kappa(labels_a: Sequence[Hashable], labels_b: Sequence[Hashable]) -> float:
    """Cohen's kappa from marginal label frequencies.

    When chance agreement is 1 (both raters used a single identical label)
    the ratio is undefined; 1.0 is returned for perfect agreement, else 0.0.
    """
    return kappa_report(labels_a, labels_b).kappa


# --------------------------------------------------------------------------
# dataset I/O and corpus statistics


@dataclass(frozen=True)
class Review:
    review_id: str
    text: str
    novelty_statements: tuple[str, ...]


@dataclass(frozen=True)
class PaperReviews:
    paper_id: str
    decision: str
    reviews: tuple[Review, ...]
    source: str = ""


def _require(d: Any, key: str, kind: type, path: str) -> Any:
    if not isinstance(d, dict) or key not in d:
        raise SchemaError(path, f"missing field {key!r}")
    if not isinstance(d[key], kind):
        raise SchemaError(path, f"field {key!r} must be {kind.__name__}")
    return d[key]


def _paper_from_json(doc: Any, path: str) -> PaperReviews:
    reviews = []
    for i, r in enumerate(_require(doc, "reviews", list, path)):
        where = f"{path}#reviews[{i}]"
        statements = r.get("novelty_statements", []) if isinstance(r, dict) else None
        if not isinstance(statements, list) or not all(isinstance(s, str) for s in statements):
            raise SchemaError(where, "novelty_statements must be a list of strings")
        reviews.append(
            Review(
                str(_require(r, "review_id", (str, int), where)),  # type: ignore[arg-type]
                _require(r, "text", str, where),
                tuple(statements),
            )
        )
    return PaperReviews(
        str(_require(doc, "paper_id", (str, int), path)),  # type: ignore[arg-type]
        str(doc.get("decision") or "Unknown"),
        tuple(reviews),
        path,
    )


def load_dataset(dataset_dir: str | Path) -> list[PaperReviews]:
    """Read one JSON document per paper (a file may also hold a list of papers)."""
    root = Path(dataset_dir)
    if not root.is_dir():
        raise SchemaError(str(root), "dataset directory does not exist")
    papers = []
    for path in sorted(root.rglob("*.json")):
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise SchemaError(str(path), f"invalid JSON: {exc}") from exc
        docs = doc if isinstance(doc, list) else [doc]
        papers += [_paper_from_json(d, str(path)) for d in docs]
    return papers


@dataclass(frozen=True)
class StatsRow:
    decision: str
    papers: int
    reviews: int
    words_per_review: float
    reviews_per_paper: float


def corpus_stats(reviews: Iterable[Mapping[str, Any]]) -> list[StatsRow]:
    """Per-decision paper and review counts; the last row is the total."""
    groups: dict[str, dict[str, Any]] = {}
    for r in reviews:
        g = groups.setdefault(r["decision"], {"papers": set(), "reviews": 0, "words": 0})
        g["papers"].add(r["paper_id"])
        g["reviews"] += 1
        g["words"] += len(str(r["review_text"]).split())

    def row(name: str, papers: int, n_reviews: int, words: int) -> StatsRow:
        return StatsRow(
            name,
            papers,
            n_reviews,
            words / n_reviews if n_reviews else 0.0,
            n_reviews / papers if papers else 0.0,
        )

    rows = [row(k, len(g["papers"]), g["reviews"], g["words"]) for k, g in groups.items()]
    all_papers = set().union(*(g["papers"] for g in groups.values())) if groups else set()
    rows.append(
        row(
            "Total",
            len(all_papers),
            sum(g["reviews"] for g in groups.values()),
            sum(g["words"] for g in groups.values()),
        )
    )
    return rows


def review_rows(papers: Iterable[PaperReviews]) -> list[dict[str, Any]]:
    return [
        {"paper_id": p.paper_id, "review_text": r.text, "decision": p.decision}
        for p in papers
        for r in p.reviews
    ]


def format_stats(rows: Sequence[StatsRow]) -> str:
    lines = [
        "| Decision | Papers | Reviews | Words/rev | Rev/paper |",
        "|---|---:|---:|---:|---:|",
    ]
    for r in rows:
        lines.append(
            f"| {r.decision} | {r.papers} | {r.reviews} | {r.words_per_review:.0f} | {r.reviews_per_paper:.2f} |"
        )
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# result tables


def _write_table(out_dir: Path, name: str, header: list[str], rows: list[list[str]]) -> None:
    with open(out_dir / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    md = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    md += ["| " + " | ".join(r) + " |" for r in rows]
    (out_dir / f"{name}.md").write_text("\n".join(md) + "\n", encoding="utf-8")


def write_tables(summaries: Mapping[str, MetricsSummary], out_dir: str | Path) -> list[Path]:
    """Write alignment, depth and engagement tables as CSV and markdown."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    systems = list(summaries)
    _write_table(
        out,
        "alignment",
        ["System", "Reasoning Alignment (%)", "Conclusion Agreement (%)", "Positive Shift (%)", "Negative Shift (%)"],
        [
            [
                s,
                str(summaries[s].reasoning_alignment_pct),
                str(summaries[s].conclusion_agreement_pct),
                str(summaries[s].positive_shift_pct),
                str(summaries[s].negative_shift_pct),
            ]
            for s in systems
        ],
    )
    _write_table(
        out,
        "depth",
        ["System", "Surface-Level (%)", "Moderate (%)", "Deep (%)"],
        [[s] + [f"{summaries[s].depth_distribution[k]:.1f}" for k in DEPTH] for s in systems],
    )
    _write_table(
        out,
        "engagement",
        ["System", "None (%)", "Limited (%)", "Extensive (%)"],
        [[s] + [f"{summaries[s].engagement_distribution[k]:.1f}" for k in ENGAGEMENT] for s in systems],
    )
    return [out / f"{n}.{ext}" for n in ("alignment", "depth", "engagement") for ext in ("csv", "md")]
