"""Resolve cited works and discover uncited related work.

Metadata comes from a Semantic Scholar Graph API compatible service:
``/paper/search/match`` for bibliography titles and ``/paper/search`` for
the generated keyword queries.
"""

from __future__ import annotations

import datetime as dt
import difflib
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Any, Iterable, NamedTuple

from .diagnostics import Diagnostics, count, warn
from .errors import ProviderError
from .gateway import Gateway
from .ingest import BibEntry, ParsedSubmission
from .llm import Invalid, ask
from .prompts import render
from .textutil import collapse_ws, normalize_title

S2_FIELDS = "title,abstract,authors,year,publicationDate,venue,externalIds,openAccessPdf"
TITLE_MATCH_RATIO = 0.9


@dataclass(frozen=True)
class PaperRecord:
    record_id: str
    title: str
    abstract: str = ""
    authors: tuple[str, ...] = ()
    publication_date: dt.date | None = None
    venue: str | None = None
    origin: str = "cited"
    source_query: str | None = None
    external_ids: tuple[tuple[str, str], ...] = ()
    open_access_url: str | None = None
    # "day", "year" (only a year was known; date set to Jan 1) or "missing"
    date_precision: str = "day"

    def __post_init__(self) -> None:
        if self.origin not in ("cited", "discovered"):
            raise ValueError(f"origin must be cited or discovered, got {self.origin!r}")
        if self.origin == "discovered" and not self.source_query:
            raise ValueError("discovered records need a source_query")

    @property
    def ids(self) -> dict[str, str]:
        return dict(self.external_ids)

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "title": self.title,
            "abstract": self.abstract,
            "authors": list(self.authors),
            "publication_date": self.publication_date.isoformat() if self.publication_date else None,
            "venue": self.venue,
            "origin": self.origin,
            "source_query": self.source_query,
            "external_ids": dict(self.external_ids),
            "open_access_url": self.open_access_url,
            "date_precision": self.date_precision,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> PaperRecord:
        pub = d.get("publication_date")
        return cls(
            record_id=d["record_id"],
            title=d["title"],
            abstract=d.get("abstract") or "",
            authors=tuple(d.get("authors", ())),
            publication_date=dt.date.fromisoformat(pub) if pub else None,
            venue=d.get("venue"),
            origin=d.get("origin", "cited"),
            source_query=d.get("source_query"),
            external_ids=tuple(sorted((d.get("external_ids") or {}).items())),
            open_access_url=d.get("open_access_url"),
            date_precision=d.get("date_precision", "day" if pub else "missing"),
        )


@dataclass(frozen=True)
class DiscoveryConfig:
    query_count: int = 5
    results_per_query: int = 20
    date_filter_enabled: bool = True

    def __post_init__(self) -> None:
        if self.query_count < 1:
            raise ValueError("query_count must be >= 1")
        if self.results_per_query < 1:
            raise ValueError("results_per_query must be >= 1")


def record_from_s2(
    paper: dict[str, Any], origin: str = "cited", source_query: str | None = None
) -> PaperRecord:
    pub, precision = None, "missing"
    if paper.get("publicationDate"):
        try:
            pub, precision = dt.date.fromisoformat(paper["publicationDate"][:10]), "day"
        except ValueError:
            pass
    if pub is None and paper.get("year"):
        pub, precision = dt.date(int(paper["year"]), 1, 1), "year"
    ext = paper.get("externalIds") or {}
    oa = paper.get("openAccessPdf") or {}
    return PaperRecord(
        record_id=str(paper["paperId"]),
        title=collapse_ws(paper.get("title") or ""),
        abstract=collapse_ws(paper.get("abstract") or ""),
        authors=tuple(a.get("name", "") for a in paper.get("authors") or [] if a.get("name")),
        publication_date=pub,
        venue=paper.get("venue") or None,
        origin=origin,
        source_query=source_query,
        external_ids=tuple(sorted((str(k), str(v)) for k, v in ext.items() if v is not None)),
        open_access_url=oa.get("url") or None,
        date_precision=precision,
    )


class ScholarClient:
    def __init__(
        self,
        gateway: Gateway,
        base_url: str = "https://api.semanticscholar.org/graph/v1",
        api_key_env: str = "S2_API_KEY",
    ) -> None:
        self.gateway = gateway
        self.base_url = base_url.rstrip("/")
        key = gateway.env.get(api_key_env, "")
        self.headers = {"x-api-key": key} if key else {}

    def match_title(self, title: str) -> dict[str, Any] | None:
        resp = self.gateway.http(
            "GET",
            f"{self.base_url}/paper/search/match",
            params={"query": title, "fields": S2_FIELDS},
            headers=self.headers,
            label="s2-match",
        )
        if resp.status == 404:
            return None
        if not resp.ok:
            raise ProviderError(f"title match failed with HTTP {resp.status}", status=resp.status)
        data = resp.json().get("data") or []
        return data[0] if data else None

    def search(self, query: str, limit: int) -> list[dict[str, Any]]:
        resp = self.gateway.http(
            "GET",
            f"{self.base_url}/paper/search",
            params={"query": query, "limit": limit, "fields": S2_FIELDS},
            headers=self.headers,
            label="s2-search",
        )
        if resp.status == 404:
            return []
        if not resp.ok:
            raise ProviderError(f"search failed with HTTP {resp.status}", status=resp.status)
        return list(resp.json().get("data") or [])


def titles_match(a: str, b: str) -> bool:
    na, nb = normalize_title(a), normalize_title(b)
    if not na or not nb:
        return False
    return na == nb or difflib.SequenceMatcher(None, na, nb).ratio() >= TITLE_MATCH_RATIO


class CitedMatches(NamedTuple):
    records: list[PaperRecord]
    unmatched: list[tuple[BibEntry, str]]


def match_cited_works(
    bib: Iterable[BibEntry], client: ScholarClient, diag: Diagnostics | None = None
) -> CitedMatches:
    records: list[PaperRecord] = []
    unmatched: list[tuple[BibEntry, str]] = []
    seen: set[str] = set()
    for entry in bib:
        if not entry.title:
            unmatched.append((entry, "bibliography entry has no title"))
            continue
        hit = client.match_title(entry.title)
        if hit is None or not hit.get("paperId"):
            unmatched.append((entry, "no title match in metadata service"))
            continue
        if not titles_match(entry.title, hit.get("title") or ""):
            unmatched.append((entry, f"best match {hit.get('title')!r} differs from entry title"))
            continue
        record = record_from_s2(hit, origin="cited")
        if record.record_id in seen:
            continue
        seen.add(record.record_id)
        records.append(record)
    if unmatched:
        count(diag, "unmatched_bib_entries", len(unmatched))
    return CitedMatches(records, unmatched)


# --------------------------------------------------------------------------
# query generation

_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)]|\(\d+\))\s*")


def parse_query_lines(text: str) -> list[str]:
    queries: list[str] = []
    seen: set[str] = set()
    for line in text.splitlines():
        q = _BULLET.sub("", line).strip().strip("\"'`").strip()
        if not q:
            continue
        key = q.casefold()
        if key in seen:
            continue
        seen.add(key)
        queries.append(q)
    return queries


def generate_queries(
    submission: ParsedSubmission,
    gateway: Gateway,
    cfg: DiscoveryConfig = DiscoveryConfig(),
    diag: Diagnostics | None = None,
) -> list[str]:
    if not submission.title.strip() or not submission.abstract.strip():
        raise ValueError("query generation needs a title and an abstract")
    text = render(
        "query-gen",
        title=submission.title,
        abstract=submission.abstract,
        query_count=cfg.query_count,
    )

    def parse(completion: str) -> list[str]:
        queries = parse_query_lines(completion)
        if len(queries) < cfg.query_count:
            raise Invalid(f"expected {cfg.query_count} queries, found {len(queries)}")
        return queries[: cfg.query_count]

    return ask(gateway, "query-gen", text, parse, diag=diag, max_output_tokens=512)


# --------------------------------------------------------------------------
# filtering and merging


def filter_candidates(
    records: Iterable[PaperRecord],
    submission_title: str,
    submission_date: dt.date,
    date_filter_enabled: bool = True,
    diag: Diagnostics | None = None,
) -> list[PaperRecord]:
    """Drop the submission itself (title match) and anything published after it."""
    own = normalize_title(submission_title)
    kept: list[PaperRecord] = []
    for r in records:
        if own and normalize_title(r.title) == own:
            count(diag, "filtered_title_match")
            continue
        if r.publication_date is None:
            count(diag, "missing_publication_date")
            kept.append(replace(r, date_precision="missing"))
            continue
        if date_filter_enabled and r.publication_date > submission_date:
            count(diag, "filtered_after_submission")
            continue
        kept.append(r)
    return kept


def discover_uncited(
    queries: list[str],
    submission_title: str,
    submission_date: dt.date,
    client: ScholarClient,
    cfg: DiscoveryConfig = DiscoveryConfig(),
    diag: Diagnostics | None = None,
    parallelism: int = 4,
) -> list[PaperRecord]:
    if not queries:
        raise ValueError("at least one query is required")
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        per_query = list(pool.map(lambda q: client.search(q, cfg.results_per_query), queries))

    pooled: list[PaperRecord] = []
    seen: set[str] = set()
    for query, hits in zip(queries, per_query):
        for hit in hits:
            if not hit.get("paperId") or not hit.get("title"):
                continue
            record = record_from_s2(hit, origin="discovered", source_query=query)
            if record.record_id in seen:
                continue
            seen.add(record.record_id)
            pooled.append(record)
    kept = filter_candidates(
        pooled, submission_title, submission_date, cfg.date_filter_enabled, diag
    )
    missing = sum(1 for r in kept if r.date_precision == "missing")
    if missing:
        warn(diag, f"{missing} discovered records have no publication date; kept unfiltered")
    return kept


def merge_candidates(
    cited: Iterable[PaperRecord], discovered: Iterable[PaperRecord]
) -> list[PaperRecord]:
    """Union of both pools, deduplicated by id and then by normalized title.

    Cited records win every collision; otherwise the smaller record_id wins.
    """
    ordered = [*cited, *discovered]

    def better(a: PaperRecord, b: PaperRecord) -> bool:
        if (a.origin == "cited") != (b.origin == "cited"):
            return a.origin == "cited"
        return a.record_id < b.record_id

    by_id: dict[str, PaperRecord] = {}
    for r in ordered:
        cur = by_id.get(r.record_id)
        if cur is None or (r.origin == "cited" and cur.origin != "cited"):
            by_id[r.record_id] = r

    by_title: dict[str, PaperRecord] = {}
    for r in by_id.values():
        key = normalize_title(r.title) or f"\x00{r.record_id}"
        cur = by_title.get(key)
        if cur is None or better(r, cur):
            by_title[key] = r

    winners = {id(r) for r in by_title.values()}
    return [r for r in by_id.values() if id(r) in winners]
