"""Versioned prompt templates.

Each template is a plain-text resource under ``templates/`` with ``{name}``
placeholders. Rendering substitutes in a single pass, so values that happen
to contain braces are never re-expanded.

=================  ==========================================================
template id        resource
=================  ==========================================================
extraction         Research Paper Information Extraction Prompt
landscape          Research Landscape Analysis Prompt
delta              Novelty Delta Analysis for Reviewer Support (parts 1 + 2)
summary            Reviewer Summary Prompt
normalization      Novelty Assessment Normalization Prompt
core-judgments     Core Novelty Judgment Extraction Prompt
judge              Reviewer Novelty Evaluation Prompt
query-gen          keyword query generation for uncited-work discovery
rerank             listwise candidate reranking
naive              single-shot novelty prompt (ablation baseline)
=================  ==========================================================
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")
TEMPLATE_VERSION = "1"

_FILES = {
    "extraction": "extraction.txt",
    "landscape": "landscape.txt",
    "delta": "delta.txt",
    "summary": "summary.txt",
    "normalization": "normalization.txt",
    "core-judgments": "core_judgments.txt",
    "judge": "judge.txt",
    "query-gen": "query_gen.txt",
    "rerank": "rerank.txt",
    "naive": "naive.txt",
}

# System messages pin the output shape where the user prompt leaves it open.
_SYSTEM = {
    "extraction": (
        "Respond with a single JSON object with exactly these keys: "
        '"methods", "problems", "datasets", "metrics", "results", "novelty_claims". '
        'Every value is a list of strings, except "results", which is a list of '
        'objects with string fields "metric" and "value". Output JSON only.'
    ),
    "core-judgments": (
        "Respond with a single JSON object of the form "
        '{"judgments": [{"statement": "...", "rationale": "..."}]} '
        "containing 2 or 3 judgments. Output JSON only."
    ),
    "judge": (
        "Respond with a single JSON object of the form "
        '{"judgment_similarity": [{"core_judgment": <1-based index>, "matched": true|false, '
        '"confidence": <0..1>, "explanation": "..."}], '
        '"conclusion_alignment": {"reference_conclusion": "SUFFICIENT|INSUFFICIENT|MIXED", '
        '"reviewer_conclusion": "SUFFICIENT|INSUFFICIENT|MIXED", "aligned": true|false, '
        '"explanation": "..."}, '
        '"prior_work_engagement": {"level": "NONE|LIMITED|EXTENSIVE", "explanation": "..."}, '
        '"depth_of_analysis": {"level": "SURFACE|MODERATE|DEEP", "explanation": "..."}}. '
        "Include one judgment_similarity entry per core judgment, in order. Output JSON only."
    ),
}


@dataclass(frozen=True)
class Template:
    template_id: str
    text: str
    system: str | None = None
    version: str = TEMPLATE_VERSION

    @property
    def placeholders(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(PLACEHOLDER.findall(self.text)))

    def render(self, **values: object) -> str:
        missing = [p for p in self.placeholders if p not in values]
        if missing:
            raise KeyError(f"template {self.template_id!r} missing values for {missing}")
        extra = set(values) - set(self.placeholders)
        if extra:
            raise KeyError(f"template {self.template_id!r} has no placeholders {sorted(extra)}")

        def sub(m: re.Match[str]) -> str:
            return str(values[m.group(1)])

        return PLACEHOLDER.sub(sub, self.text)


@lru_cache(maxsize=None)
def get_template(template_id: str) -> Template:
    try:
        name = _FILES[template_id]
    except KeyError:
        raise KeyError(f"unknown template {template_id!r}") from None
    text = resources.files(__package__).joinpath("templates", name).read_text(encoding="utf-8")
    return Template(template_id, text, _SYSTEM.get(template_id))


def template_ids() -> list[str]:
    return list(_FILES)


def render(template_id: str, **values: object) -> str:
    return get_template(template_id).render(**values)
