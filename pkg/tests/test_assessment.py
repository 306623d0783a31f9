import httpx
import pytest
from fakeworld import SUBMISSION_TITLE

from novelty_engine.assessment import (
    DELTA_SECTIONS,
    LANDSCAPE_SECTIONS,
    NONE_MARKER,
    NoveltyReport,
    PaperContent,
    StructuredExtraction,
    build_landscape,
    delta_analysis,
    delta_prompt,
    extract_all,
    format_citation_contexts,
    landscape_papers_block,
    naive_assessment,
    parse_extraction,
    parse_sections,
    raw_view,
    summarize,
)
from novelty_engine.diagnostics import Diagnostics
from novelty_engine.errors import MalformedCompletion
from novelty_engine.ingest import BibEntry, CitationContext
from novelty_engine.llm import Invalid


def sections_text(headers, style="## {h}"):
    return "\n\n".join(f"{style.format(h=h, i=i)}\nBody {i}." for i, h in enumerate(headers, 1))


@pytest.mark.parametrize(
    "style", ["## {h}", "**{h}**", "{i}. {h}", "### {i}. {h}:", "{h}:", "## {i}) **{h}**"]
)
def test_parse_sections_accepts_header_styles(style):
    out = parse_sections(sections_text(DELTA_SECTIONS, style), DELTA_SECTIONS)
    assert list(out) == list(DELTA_SECTIONS)
    assert out["KEY OBSERVATION SUMMARY"] == "Body 7."


def test_parse_sections_is_case_insensitive():
    text = sections_text([h.title() for h in LANDSCAPE_SECTIONS])
    assert set(parse_sections(text, LANDSCAPE_SECTIONS)) == set(LANDSCAPE_SECTIONS)


def test_parse_sections_rejects_empty_body():
    text = sections_text(LANDSCAPE_SECTIONS).replace("Body 3.", "")
    with pytest.raises(Invalid, match="empty"):
        parse_sections(text, LANDSCAPE_SECTIONS)


def test_header_words_inside_prose_do_not_count():
    text = sections_text(LANDSCAPE_SECTIONS[:-1]) + "\n\nWe discuss TECHNICAL EVOLUTION below."
    with pytest.raises(Invalid, match="TECHNICAL EVOLUTION"):
        parse_sections(text, LANDSCAPE_SECTIONS)


def test_parse_extraction_tolerates_shapes():
    diag = Diagnostics()
    text = '```json\n{"methods": "one", "problems": ["p"], "datasets": [], "metrics": ["m"],' \
           ' "results": [{"metric": "acc", "value": 0.9}, {"metric": ""}], "novelty_claims": [{"claim": "c"}]}\n```'
    ex = parse_extraction(text, "x", "T", diag)
    assert ex.methods == ["one"] and ex.results == [{"metric": "acc", "value": "0.9"}]
    assert ex.novelty_claims == ["claim: c"]
    assert diag.counters["dropped_results"] == 1
    partial = parse_extraction('{"methods": ["a"]}', "x", "T", diag)
    assert partial.datasets == [] and len(diag.warnings) == 5
    with pytest.raises(Invalid):
        parse_extraction("not json", "x")
    assert StructuredExtraction.from_dict(ex.to_dict()) == ex


def test_extract_all_keeps_input_order(gateway):
    papers = [PaperContent(f"p{i}", f"Paper number {i} about routing") for i in range(5)]
    out = extract_all(papers, gateway, parallelism=3)
    assert [e.paper_id for e in out] == [p.paper_id for p in papers]
    assert all(e.methods for e in out)


def test_landscape_block_puts_submission_first():
    sub = raw_view(PaperContent("s", "Sub", "abs"))
    rel = [raw_view(PaperContent("r", "Rel", "abs2", "intro"))]
    block = landscape_papers_block(sub, rel)
    assert block.index("Submission paper") < block.index("Paper 1: Rel")
    assert "Introduction: intro" in block


def test_landscape_and_delta_with_fake_llm(gateway):
    sub = raw_view(PaperContent("s", SUBMISSION_TITLE, "abs"))
    rel = [raw_view(PaperContent("r", "Related", "abs"))]
    land = build_landscape(sub, rel, gateway)
    assert list(land.sections) == list(LANDSCAPE_SECTIONS)
    delta = delta_analysis(land, sub, [], ["Uncited"], gateway)
    assert list(delta.sections) == list(DELTA_SECTIONS)
    with pytest.raises(ValueError):
        build_landscape(sub, [], gateway)


def test_delta_prompt_marks_absent_inputs():
    sub = raw_view(PaperContent("s", "Sub", "abs"))
    text = delta_prompt(None, sub, [], [])
    assert text.count(NONE_MARKER) == 3


def test_citation_contexts_grouped_by_title():
    ctx = [
        CitationContext("b0", "First use.", "Introduction"),
        CitationContext("b1", "Other.", ""),
        CitationContext("b0", "Second use.", "Related Work"),
    ]
    bib = [BibEntry("b0", "raw 0", "Cited Zero"), BibEntry("b1", "raw one")]
    assert format_citation_contexts(ctx, bib) == (
        "[Cited Zero]\n- 'First use.' (Introduction)\n- 'Second use.' (Related Work)\n\n[raw one]\n- 'Other.'"
    )


def _script(*answers):
    it = iter(answers)
    return httpx.MockTransport(
        lambda r: httpx.Response(200, json={"choices": [{"message": {"content": next(it)}}]})
    )


def test_summary_reprompts_once_on_length(make_gateway):
    gw = make_gateway(_script("One. Two.", "One. Two. Three. Four. Five."))
    diag = Diagnostics()
    assert summarize("delta text", gw, diag).endswith("Five.")
    assert diag.counters["reprompt:summary"] == 1
    gw2 = make_gateway(_script("Only one.", "Still one."))
    diag2 = Diagnostics()
    assert summarize("delta text", gw2, diag2) == "Still one."
    assert diag2.warnings


def test_delta_fails_after_two_malformed_answers(make_gateway):
    gw = make_gateway(_script("no headers", "still none"))
    sub = raw_view(PaperContent("s", "Sub", "abs"))
    with pytest.raises(MalformedCompletion):
        delta_analysis(None, sub, [], [], gw)


def test_naive_and_report_markdown(gateway):
    text = naive_assessment("T", "A", gateway)
    report = NoveltyReport("T", text, None, None, variant="naive", inputs_manifest=["abc"])
    md = report.to_markdown()
    assert md.startswith("# Novelty assessment: T") and "`abc`" in md
    with pytest.raises(ValueError):
        NoveltyReport("T", " ", None, None)
