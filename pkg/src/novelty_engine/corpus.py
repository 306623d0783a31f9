"""PDF acquisition and introduction extraction for the selected related papers."""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Sequence

from .diagnostics import Diagnostics, count, warn
from .discovery import PaperRecord, titles_match
from .errors import FetchFailed, NoIntroFound, OcrFailed, ProviderError
from .gateway import Gateway
from .textutil import truncate_words

SOURCES = ("metadata-api", "acl-anthology", "arxiv")
INTRO_WORD_CAP = 2500
ATOM_NS = "{http://www.w3.org/2005/Atom}"


@dataclass(frozen=True)
class CorpusConfig:
    acl_pdf_url: str = "https://aclanthology.org/{id}.pdf"
    arxiv_pdf_url: str = "https://arxiv.org/pdf/{id}"
    arxiv_api_url: str = "http://export.arxiv.org/api/query"
    primary_ocr_url: str = "http://localhost:8010/extract"
    fallback_ocr_url: str = "http://localhost:8011/extract"
    intro_word_cap: int = INTRO_WORD_CAP
    parallelism: int = 4


@dataclass(frozen=True)
class AcquiredPaper:
    record: PaperRecord
    pdf_source: str = "none"
    intro_text: str = ""
    ocr_provider: str = "none"

    def __post_init__(self) -> None:
        if self.pdf_source == "none" and (self.intro_text or self.ocr_provider != "none"):
            raise ValueError("a paper without a PDF cannot carry introduction text")

    def to_dict(self) -> dict[str, Any]:
        return {
            "record": self.record.to_dict(),
            "pdf_source": self.pdf_source,
            "intro_text": self.intro_text,
            "ocr_provider": self.ocr_provider,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> AcquiredPaper:
        return cls(PaperRecord.from_dict(d["record"]), d["pdf_source"], d["intro_text"], d["ocr_provider"])


def _looks_like_pdf(data: bytes) -> bool:
    return data.lstrip()[:5] == b"%PDF-"


def _get_pdf(gateway: Gateway, url: str, label: str) -> bytes:
    resp = gateway.http("GET", url, label=label)
    if not resp.ok:
        raise FileNotFoundError(f"HTTP {resp.status}")
    if not _looks_like_pdf(resp.content):
        raise FileNotFoundError("response is not a PDF")
    return resp.content


def resolve_arxiv_id(record: PaperRecord, gateway: Gateway, cfg: CorpusConfig) -> str | None:
    """Look the title up in the arXiv export API; accept only a title match."""
    if not record.title:
        return None
    query = 'ti:"{}"'.format(re.sub(r'["\\]', " ", record.title))
    resp = gateway.http(
        "GET",
        cfg.arxiv_api_url,
        params={"search_query": query, "start": 0, "max_results": 1},
        label="arxiv-api",
    )
    if not resp.ok:
        return None
    try:
        feed = ET.fromstring(resp.content)
    except ET.ParseError:
        return None
    for entry in feed.iter(f"{ATOM_NS}entry"):
        title = entry.findtext(f"{ATOM_NS}title") or ""
        ident = entry.findtext(f"{ATOM_NS}id") or ""
        if ident and titles_match(title, record.title):
            return re.sub(r"v\d+$", "", ident.rsplit("/abs/", 1)[-1])
    return None


def fetch_pdf(record: PaperRecord, gateway: Gateway, cfg: CorpusConfig = CorpusConfig()) -> tuple[bytes, str]:
    """Try the metadata API's open-access link, then ACL Anthology, then arXiv."""
    if not record.title and not record.external_ids and not record.open_access_url:
        raise ValueError("record has neither identifiers nor a title")
    ids = record.ids
    causes: dict[str, str] = {}
    for source in SOURCES:
        try:
            if source == "metadata-api":
                if not record.open_access_url:
                    raise FileNotFoundError("no open-access link")
                return _get_pdf(gateway, record.open_access_url, "pdf:metadata-api"), source
            if source == "acl-anthology":
                acl = ids.get("ACL")
                if not acl:
                    raise FileNotFoundError("no ACL Anthology id")
                return _get_pdf(gateway, cfg.acl_pdf_url.format(id=acl), "pdf:acl-anthology"), source
            arxiv = ids.get("ArXiv") or resolve_arxiv_id(record, gateway, cfg)
            if not arxiv:
                raise FileNotFoundError("no arXiv id")
            return _get_pdf(gateway, cfg.arxiv_pdf_url.format(id=arxiv), "pdf:arxiv"), source
        except (FileNotFoundError, ProviderError) as exc:
            causes[source] = str(exc)
    raise FetchFailed(causes)


# --------------------------------------------------------------------------
# OCR and introduction detection

_HEADING = re.compile(r"^(#{1,6})\s+(.*?)\s*#*\s*$")
_SECTION_NUMBER = re.compile(r"^((?:\d+|[IVXLC]+)(?:\.\d+)*)\.?\s+")


def _ocr(gateway: Gateway, url: str, pdf: bytes, label: str) -> str:
    resp = gateway.http("POST", url, files={"file": ("paper.pdf", pdf, "application/pdf")}, label=label)
    if not resp.ok:
        raise ProviderError(f"OCR service returned HTTP {resp.status}", status=resp.status)
    text = resp.text
    if "json" in resp.content_type:
        body = resp.json()
        text = (body.get("markdown") or body.get("text") or "") if isinstance(body, dict) else ""
    if not text.strip():
        raise ProviderError("OCR service returned no text")
    return text


def find_introduction(markdown: str, word_cap: int = INTRO_WORD_CAP) -> str:
    """Return the introduction section of OCR markdown.

    Only the first two top-level headings (ignoring an Abstract heading) are
    considered. The section runs until the next top-level heading that is not
    a numbered subsection of the introduction.
    """
    lines = markdown.splitlines()
    headings = [(i, len(m.group(1)), m.group(2)) for i, line in enumerate(lines) if (m := _HEADING.match(line))]
    if not headings:
        raise NoIntroFound("document has no headings")
    top = min(level for _, level, _ in headings)
    top_headings = [h for h in headings if h[1] == top and h[2].strip().lower() != "abstract"]
    for idx, _, text in top_headings[:2]:
        if "introduction" not in text.lower():
            continue
        num = _SECTION_NUMBER.match(text)
        prefix = num.group(1) + "." if num else None
        body: list[str] = []
        for line in lines[idx + 1 :]:
            m = _HEADING.match(line)
            if m and len(m.group(1)) <= top:
                sub = _SECTION_NUMBER.match(m.group(2))
                if not (prefix and sub and sub.group(1).startswith(prefix)):
                    break
            body.append(line)
        intro = "\n".join(body).strip()
        if intro:
            return truncate_words(intro, word_cap)
    raise NoIntroFound("no introduction heading among the first two top-level headings")


def extract_introduction(
    pdf: bytes,
    gateway: Gateway,
    cfg: CorpusConfig = CorpusConfig(),
    missing_ok: bool = False,
) -> tuple[str, str]:
    """OCR the PDF (primary, then fallback) and cut out the introduction.

    With ``missing_ok`` a document without an introduction yields ``("", tag)``,
    meaning downstream steps fall back to the abstract alone.
    """
    if not pdf:
        raise ValueError("empty PDF")
    failures = []
    for tag, url in (("primary-ocr", cfg.primary_ocr_url), ("fallback-ocr", cfg.fallback_ocr_url)):
        try:
            markdown = _ocr(gateway, url, pdf, f"ocr:{tag}")
        except ProviderError as exc:
            failures.append(f"{tag}: {exc}")
            continue
        try:
            return find_introduction(markdown, cfg.intro_word_cap), tag
        except NoIntroFound:
            if missing_ok:
                return "", tag
            raise
    raise OcrFailed("; ".join(failures))


def acquire_paper(
    record: PaperRecord,
    gateway: Gateway,
    cfg: CorpusConfig = CorpusConfig(),
    diag: Diagnostics | None = None,
) -> AcquiredPaper:
    """Never raises: failures degrade the paper to title + abstract only."""
    try:
        pdf, source = fetch_pdf(record, gateway, cfg)
    except (FetchFailed, ValueError) as exc:
        warn(diag, f"fetch failed for {record.record_id}: {exc}")
        count(diag, "fetch_failed")
        return AcquiredPaper(record)
    try:
        intro, provider = extract_introduction(pdf, gateway, cfg, missing_ok=True)
    except OcrFailed as exc:
        warn(diag, f"OCR failed for {record.record_id}: {exc}")
        count(diag, "ocr_failed")
        return AcquiredPaper(record, source, "", "none")
    if provider == "fallback-ocr":
        count(diag, "ocr_fallback")
    if not intro:
        warn(diag, f"no introduction found for {record.record_id}; using abstract only")
        count(diag, "intro_missing")
    return AcquiredPaper(record, source, intro, provider)


def acquire_all(
    records: Sequence[PaperRecord],
    gateway: Gateway,
    cfg: CorpusConfig = CorpusConfig(),
    diag: Diagnostics | None = None,
) -> list[AcquiredPaper]:
    local = [Diagnostics() for _ in records]
    with ThreadPoolExecutor(max_workers=max(1, cfg.parallelism)) as pool:
        papers = list(pool.map(lambda rd: acquire_paper(rd[0], gateway, cfg, rd[1]), zip(records, local)))
    if diag is not None:
        # merged in input order so manifests do not depend on thread scheduling
        for d in local:
            diag.merge(d)
    return papers
