import datetime as dt

import pytest
from fakeworld import SCHOLAR_URL, SUBMISSION_TITLE, s2_json, BY_ID

from novelty_engine.diagnostics import Diagnostics
from novelty_engine.discovery import (
    DiscoveryConfig,
    PaperRecord,
    ScholarClient,
    filter_candidates,
    generate_queries,
    match_cited_works,
    merge_candidates,
    parse_query_lines,
    record_from_s2,
    titles_match,
)
from novelty_engine.errors import MalformedCompletion
from novelty_engine.ingest import BibEntry, ParsedSubmission

DATE = dt.date(2024, 3, 1)


def rec(rid, title, date=None, origin="cited", **kw):
    if origin == "discovered":
        kw.setdefault("source_query", "q")
    return PaperRecord(rid, title, publication_date=date, origin=origin, **kw)


def test_record_from_s2_dates():
    full = record_from_s2(s2_json(BY_ID["p01"]))
    assert full.publication_date == dt.date(2022, 5, 10) and full.date_precision == "day"
    year_only = record_from_s2(s2_json(BY_ID["p03"]))
    assert year_only.publication_date == dt.date(2021, 1, 1) and year_only.date_precision == "year"
    missing = record_from_s2(s2_json(BY_ID["p08"]))
    assert missing.publication_date is None and missing.date_precision == "missing"
    assert record_from_s2(s2_json(BY_ID["p02"])).ids["ACL"] == "2020.emnlp-main.550"


def test_record_round_trip():
    r = record_from_s2(s2_json(BY_ID["p02"]), origin="discovered", source_query="dense")
    assert PaperRecord.from_dict(r.to_dict()) == r


def test_discovered_record_needs_query():
    with pytest.raises(ValueError):
        PaperRecord("x", "t", origin="discovered")
    with pytest.raises(ValueError):
        PaperRecord("x", "t", origin="elsewhere")


def test_titles_match():
    assert titles_match("Deep Learning.", "deep   learning")
    assert titles_match("Attention Is All You Need", "Attention is all you needs")
    assert not titles_match("Attention Is All You Need", "Attention Is Not Explanation")
    assert not titles_match("", "")


def test_match_cited_works(gateway):
    client = ScholarClient(gateway, SCHOLAR_URL)
    bib = [
        BibEntry("b0", "raw", BY_ID["p01"].title),
        BibEntry("b1", "raw", "Nothing Like This Exists"),
        BibEntry("b2", "raw", None),
        BibEntry("b3", "raw", BY_ID["p01"].title),
    ]
    diag = Diagnostics()
    out = match_cited_works(bib, client, diag)
    assert [r.record_id for r in out.records] == ["p01"]
    assert [e.key for e, _ in out.unmatched] == ["b1", "b2"]
    assert diag.counters["unmatched_bib_entries"] == 2


def test_parse_query_lines():
    text = '1. "sparse routing"\n- dense retrieval\n\n* Sparse Routing\n(4) long context\n'
    assert parse_query_lines(text) == ["sparse routing", "dense retrieval", "long context"]


def test_generate_queries(gateway):
    sub = ParsedSubmission(SUBMISSION_TITLE, "An abstract.", [], [], DATE)
    assert len(generate_queries(sub, gateway, DiscoveryConfig(query_count=5))) == 5
    assert len(generate_queries(sub, gateway, DiscoveryConfig(query_count=3))) == 3
    with pytest.raises(MalformedCompletion):
        generate_queries(sub, gateway, DiscoveryConfig(query_count=6))
    with pytest.raises(ValueError):
        generate_queries(ParsedSubmission(SUBMISSION_TITLE, "", [], [], DATE), gateway)


def test_filter_candidates():
    diag = Diagnostics()
    records = [
        rec("a", "The Submission!", dt.date(2020, 1, 1)),
        rec("b", "Later Work", dt.date(2024, 3, 2)),
        rec("c", "Same Day", DATE),
        rec("d", "Undated"),
    ]
    kept = filter_candidates(records, "the submission", DATE, True, diag)
    assert [r.record_id for r in kept] == ["c", "d"]
    assert kept[1].date_precision == "missing"
    assert diag.counters == {"filtered_title_match": 1, "filtered_after_submission": 1, "missing_publication_date": 1}
    assert [r.record_id for r in filter_candidates(records, "x", DATE, False)] == ["a", "b", "c", "d"]


def test_merge_candidates_prefers_cited_then_smaller_id():
    cited = [rec("c1", "Shared Title"), rec("c2", "Only Cited")]
    found = [
        rec("d9", "shared title", origin="discovered"),
        rec("c2", "Only Cited", origin="discovered"),
        rec("d5", "Twin", origin="discovered"),
        rec("d3", "Twin", origin="discovered"),
    ]
    merged = merge_candidates(cited, found)
    assert [(r.record_id, r.origin) for r in merged] == [("c1", "cited"), ("c2", "cited"), ("d3", "discovered")]
