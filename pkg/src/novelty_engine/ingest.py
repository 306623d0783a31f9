"""Turn a submission PDF into title, abstract, bibliography and citation contexts.

The PDF is sent to a GROBID-compatible ``processFulltextDocument`` endpoint;
everything after that is a pure transformation of the returned TEI XML.
"""

from __future__ import annotations

import datetime as dt
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Any

from .diagnostics import Diagnostics, count, warn
from .errors import MissingTitle, ParseFailed, ProviderError
from .gateway import Gateway
from .textutil import collapse_ws, sentence_spans

TEI_NS = "http://www.tei-c.org/ns/1.0"
XML_ID = "{http://www.w3.org/XML/1998/namespace}id"
NS = {"tei": TEI_NS}


@dataclass(frozen=True)
class BibEntry:
    key: str
    raw_text: str
    title: str | None = None
    year: int | None = None
    authors: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "key": self.key,
            "raw_text": self.raw_text,
            "title": self.title,
            "year": self.year,
            "authors": list(self.authors),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> BibEntry:
        return cls(d["key"], d["raw_text"], d.get("title"), d.get("year"), tuple(d.get("authors", ())))


@dataclass(frozen=True)
class CitationContext:
    bib_key: str
    sentence: str
    section: str

    def to_dict(self) -> dict[str, str]:
        return {"bib_key": self.bib_key, "sentence": self.sentence, "section": self.section}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> CitationContext:
        return cls(d["bib_key"], d["sentence"], d.get("section", ""))


@dataclass
class ParsedSubmission:
    title: str
    abstract: str
    bibliography: list[BibEntry]
    citation_contexts: list[CitationContext]
    submission_date: dt.date
    section_texts: dict[str, str] = field(default_factory=dict)
    skipped_citations: int = 0
    warnings: list[str] = field(default_factory=list)

    def bib_by_key(self) -> dict[str, BibEntry]:
        return {b.key: b for b in self.bibliography}

    def to_dict(self) -> dict[str, Any]:
        return {
            "title": self.title,
            "abstract": self.abstract,
            "bibliography": [b.to_dict() for b in self.bibliography],
            "citation_contexts": [c.to_dict() for c in self.citation_contexts],
            "submission_date": self.submission_date.isoformat(),
            "section_texts": dict(self.section_texts),
            "skipped_citations": self.skipped_citations,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ParsedSubmission:
        return cls(
            title=d["title"],
            abstract=d.get("abstract", ""),
            bibliography=[BibEntry.from_dict(b) for b in d.get("bibliography", [])],
            citation_contexts=[CitationContext.from_dict(c) for c in d.get("citation_contexts", [])],
            submission_date=dt.date.fromisoformat(d["submission_date"]),
            section_texts=dict(d.get("section_texts", {})),
            skipped_citations=d.get("skipped_citations", 0),
            warnings=list(d.get("warnings", [])),
        )


# --------------------------------------------------------------------------
# service call


def parse_submission(
    pdf: bytes,
    submission_date: dt.date,
    gateway: Gateway,
    service_url: str,
    diag: Diagnostics | None = None,
) -> ParsedSubmission:
    """Run the PDF through the TEI service and parse the result."""
    if not pdf:
        raise ParseFailed("empty PDF")
    url = service_url.rstrip("/") + "/api/processFulltextDocument"
    try:
        resp = gateway.http(
            "POST",
            url,
            files={"input": ("submission.pdf", pdf, "application/pdf")},
            label="tei-service",
        )
    except ProviderError as exc:
        raise ParseFailed(f"TEI service unavailable: {exc}") from exc
    if not resp.ok:
        raise ParseFailed(f"TEI service returned HTTP {resp.status}: {resp.text[:200]}")
    return parse_tei(resp.content, submission_date, diag)


# --------------------------------------------------------------------------
# TEI parsing


def _q(path: str) -> str:
    return path.replace("tei:", "{%s}" % TEI_NS)


def _text(el: ET.Element | None) -> str:
    return collapse_ws("".join(el.itertext())) if el is not None else ""


def _load(tei: bytes | str | ET.Element) -> ET.Element:
    if isinstance(tei, ET.Element):
        return tei
    try:
        return ET.fromstring(tei)
    except ET.ParseError as exc:
        raise ParseFailed(f"malformed TEI: {exc}") from exc


def parse_tei(
    tei: bytes | str | ET.Element,
    submission_date: dt.date,
    diag: Diagnostics | None = None,
) -> ParsedSubmission:
    root = _load(tei)
    if root.tag != _q("tei:TEI"):
        raise ParseFailed(f"root element is {root.tag}, expected TEI")

    header = root.find(_q("tei:teiHeader"))
    title = ""
    if header is not None:
        title_el = header.find(_q(".//tei:titleStmt/tei:title[@type='main']"))
        if title_el is None:
            title_el = header.find(_q(".//tei:titleStmt/tei:title"))
        title = _text(title_el)
        if not title:
            title = _text(header.find(_q(".//tei:sourceDesc//tei:analytic/tei:title")))
    if not title:
        raise MissingTitle("no title found in TEI header")

    abstract_el = root.find(_q(".//tei:profileDesc/tei:abstract"))
    abstract = " ".join(_text(p) for p in abstract_el.iter(_q("tei:p"))) if abstract_el is not None else ""
    if abstract_el is not None and not abstract:
        abstract = _text(abstract_el)

    bibliography = parse_bibliography(root)
    contexts, skipped = _collect_contexts(root, {b.key for b in bibliography})

    result = ParsedSubmission(
        title=title,
        abstract=abstract,
        bibliography=bibliography,
        citation_contexts=contexts,
        submission_date=submission_date,
        section_texts=_section_texts(root),
        skipped_citations=skipped,
    )
    if not bibliography:
        result.warnings.append("submission has an empty bibliography")
        warn(diag, "submission has an empty bibliography")
    if skipped:
        count(diag, "unresolved_citations", skipped)
    return result


def parse_bibliography(tei: bytes | str | ET.Element) -> list[BibEntry]:
    root = _load(tei)
    entries: list[BibEntry] = []
    seen: set[str] = set()
    for i, bs in enumerate(root.iterfind(_q(".//tei:back//tei:listBibl/tei:biblStruct"))):
        key = bs.get(XML_ID) or f"b{i}"
        if key in seen:
            key = f"{key}_{i}"
        title = _text(bs.find(_q("tei:analytic/tei:title"))) or _text(bs.find(_q("tei:monogr/tei:title")))
        authors = tuple(
            a
            for a in (
                collapse_ws(" ".join(_text(p) for p in pn if p.tag in (_q("tei:forename"), _q("tei:surname"))))
                for pn in bs.iterfind(_q(".//tei:author/tei:persName"))
            )
            if a
        )
        year = None
        date_el = bs.find(_q(".//tei:imprint/tei:date"))
        if date_el is not None:
            when = date_el.get("when") or _text(date_el)
            if when[:4].isdigit():
                year = int(when[:4])
        raw = _text(bs.find(_q("tei:note[@type='raw_reference']"))) or collapse_ws(" ".join(bs.itertext()))
        if not raw:
            raw = collapse_ws(" ".join(filter(None, [", ".join(authors), title or "", str(year or "")])))
        if not raw:
            continue
        seen.add(key)
        entries.append(BibEntry(key, raw, title or None, year, authors))
    return entries


def _section_texts(root: ET.Element) -> dict[str, str]:
    out: dict[str, str] = {}
    body = root.find(_q(".//tei:text/tei:body"))
    if body is None:
        return out
    for div in body.iterfind(_q("tei:div")):
        name = _text(div.find(_q("tei:head"))) or "untitled"
        text = "\n".join(_text(p) for p in div.iterfind(_q("tei:p")))
        base, n = name, 2
        while name in out:
            name = f"{base} ({n})"
            n += 1
        out[name] = text
    return out


def _paragraph_with_refs(p: ET.Element) -> tuple[str, list[tuple[int, list[str]]]]:
    """Flatten a paragraph, returning its text and (offset, targets) per bibr ref."""
    parts: list[str] = []
    refs: list[tuple[int, list[str]]] = []
    pos = 0

    def walk(el: ET.Element) -> None:
        nonlocal pos
        is_ref = el.tag == _q("tei:ref") and el.get("type") == "bibr"
        if is_ref:
            targets = [t.lstrip("#") for t in (el.get("target") or "").split()]
            refs.append((pos, targets))
        if el.text:
            parts.append(el.text)
            pos += len(el.text)
        for child in el:
            walk(child)
            if child.tail:
                parts.append(child.tail)
                pos += len(child.tail)

    walk(p)
    return "".join(parts), refs


def _collect_contexts(root: ET.Element, keys: set[str]) -> tuple[list[CitationContext], int]:
    contexts: list[CitationContext] = []
    seen: set[tuple[str, str]] = set()
    skipped = 0

    blocks: list[tuple[str, ET.Element]] = []
    abstract_el = root.find(_q(".//tei:profileDesc/tei:abstract"))
    if abstract_el is not None:
        blocks += [("Abstract", p) for p in abstract_el.iter(_q("tei:p"))]
    body = root.find(_q(".//tei:text/tei:body"))
    if body is not None:
        for div in body.iter(_q("tei:div")):
            section = _text(div.find(_q("tei:head")))
            blocks += [(section, p) for p in div.iterfind(_q("tei:p"))]

    for section, p in blocks:
        text, refs = _paragraph_with_refs(p)
        if not refs:
            continue
        spans = sentence_spans(text)
        for offset, targets in refs:
            span = next((s for s in spans if s[0] <= offset < s[1]), None)
            if span is None:
                span = min(spans, key=lambda s: abs(s[0] - offset)) if spans else None
            resolved = [t for t in targets if t in keys]
            if span is None or not resolved:
                skipped += 1
                continue
            sentence = collapse_ws(text[span[0] : span[1]])
            for key in resolved:
                if (key, sentence) in seen:
                    continue
                seen.add((key, sentence))
                contexts.append(CitationContext(key, sentence, section))
    return contexts, skipped


def extract_citation_contexts(
    tei: bytes | str | ET.Element, diag: Diagnostics | None = None
) -> list[CitationContext]:
    """One context per (sentence, resolved reference); unresolved refs are counted and skipped."""
    root = _load(tei)
    keys = {b.key for b in parse_bibliography(root)}
    contexts, skipped = _collect_contexts(root, keys)
    if skipped:
        count(diag, "unresolved_citations", skipped)
    return contexts


def skipped_citation_count(tei: bytes | str | ET.Element) -> int:
    root = _load(tei)
    keys = {b.key for b in parse_bibliography(root)}
    return _collect_contexts(root, keys)[1]
