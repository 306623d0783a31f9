"""A deterministic stand-in for every external service the pipeline talks to.

``FakeWorld.transport()`` returns an ``httpx.MockTransport`` serving the TEI
service, the scholarly metadata API, chat and embedding endpoints, PDF hosts,
the arXiv export API and two OCR services. Every request is appended to
``FakeWorld.requests`` so tests can assert exactly which calls went out.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass
from xml.sax.saxutils import escape

import httpx

from novelty_engine.assessment import DELTA_SECTIONS, LANDSCAPE_SECTIONS
from novelty_engine.textutil import normalize_title

TEI_URL = "http://tei.test"
SCHOLAR_URL = "http://scholar.test/graph/v1"
CHAT_URL = "http://llm.test/v1/chat/completions"
EMBED_URL = "http://llm.test/v1/embeddings"
EMBED_DIM = 8

SUBMISSION_TITLE = "Sparse Mixture Routing for Efficient Long-Context Retrieval"
SUBMISSION_ABSTRACT = (
    "We route query tokens through a sparse mixture of retrieval experts. "
    "The router keeps memory flat as the context grows to a million tokens. "
    "Experiments on three long-context benchmarks show gains over dense retrievers."
)
SUBMISSION_DATE = "2024-03-01"
SUBMISSION_PDF = b"%PDF-1.4\n% fake submission\n"


@dataclass(frozen=True)
class FakePaper:
    pid: str
    title: str
    abstract: str
    date: str | None = None
    year: int | None = None
    oa: bool = False
    acl: str | None = None
    arxiv: str | None = None
    arxiv_by_title: str | None = None
    oa_html: bool = False


PAPERS = [
    FakePaper("p01", "Routing Tokens with Learned Sparse Experts",
              "Learned routers send each token to a few experts.", "2022-05-10", oa=True),
    FakePaper("p02", "Dense Passage Retrieval for Open-Domain Question Answering",
              "Dual encoders retrieve passages for question answering.", "2020-04-10",
              acl="2020.emnlp-main.550"),
    FakePaper("p03", "Long-Context Transformers via Memory Compression",
              "Compressed memories extend the context of transformers.", None, year=2021, arxiv="2101.00001"),
    FakePaper("p04", "Hierarchical Expert Routing for Document Retrieval", "", "2023-06-01"),
    FakePaper("p05", "Efficient Retrieval with Mixture-of-Experts Encoders",
              "Mixture-of-experts encoders cut retrieval cost.", "2023-11-20",
              oa=True, oa_html=True, arxiv_by_title="2311.12345"),
    FakePaper("p06", "Sparse Routing Beyond Transformers",
              "Sparse routing for state space models.", "2024-08-01", oa=True),
    FakePaper("p07", SUBMISSION_TITLE, SUBMISSION_ABSTRACT, "2024-02-01", oa=True),
    FakePaper("p08", "Benchmarking Long-Context Retrieval Systems",
              "A benchmark of retrieval systems over long documents.", None, oa=True),
    FakePaper("p09", "Learned Index Structures for Neural Search",
              "Index structures learned end to end for neural search.", "2019-07-01", oa=True),
    FakePaper("p10", "Conditional Computation in Large Language Models",
              "Conditional computation activates parts of a model per input.", "2022-12-01",
              acl="2022.acl-long.99"),
    FakePaper("p11", "Product Quantization for Approximate Nearest Neighbor Search",
              "Product quantization compresses vectors for nearest neighbor search.", "2011-01-01", oa=True),
    FakePaper("p12", "Token Pruning for Efficient Transformers",
              "Pruning uninformative tokens speeds up transformers.", "2021-09-09", oa=True),
]
BY_ID = {p.pid: p for p in PAPERS}

BIBLIOGRAPHY = [
    ("b0", "p01"),
    ("b1", "p02"),
    ("b2", "p03"),
    ("b3", None),  # not in the metadata service
]
UNMATCHED_TITLE = "An Unpublished Manuscript on Routing"

QUERIES = [
    "sparse expert routing retrieval",
    "long-context retrieval efficiency",
    "mixture of experts dense retrieval",
    "memory compression transformers",
    "approximate nearest neighbor search",
]


def submission_tei() -> str:
    bibl = []
    for key, pid in BIBLIOGRAPHY:
        title = BY_ID[pid].title if pid else UNMATCHED_TITLE
        bibl.append(
            f'<biblStruct xml:id="{key}"><analytic><title level="a" type="main">{escape(title)}</title>'
            f'<author><persName><forename>A.</forename><surname>Author{key}</surname></persName></author>'
            f'</analytic><monogr><imprint><date type="published" when="2021"/></imprint></monogr></biblStruct>'
        )
    return f"""<?xml version="1.0" encoding="UTF-8"?>
<TEI xmlns="http://www.tei-c.org/ns/1.0">
<teiHeader><fileDesc><titleStmt><title level="a" type="main">{escape(SUBMISSION_TITLE)}</title></titleStmt>
<sourceDesc><biblStruct><analytic/></biblStruct></sourceDesc></fileDesc>
<profileDesc><abstract><div><p>{escape(SUBMISSION_ABSTRACT)}</p></div></abstract></profileDesc></teiHeader>
<text><body>
<div><head n="1">Introduction</head>
<p>Long contexts strain retrieval. Sparse experts were introduced for language modeling <ref type="bibr" target="#b0">[1]</ref>. Dense retrievers remain the default choice <ref type="bibr" target="#b1">[2]</ref>. We combine both ideas.</p>
</div>
<div><head n="2">Related Work</head>
<p>Memory compression is an alternative <ref type="bibr" target="#b2">[3]</ref>. Some routing ideas are folklore <ref type="bibr" target="#b3">[4]</ref>. Others remain unpublished <ref type="bibr">[5]</ref>.</p>
</div>
</body>
<back><div type="references"><listBibl>{''.join(bibl)}</listBibl></div></back>
</text></TEI>
"""


def s2_json(p: FakePaper) -> dict:
    ext = {}
    if p.acl:
        ext["ACL"] = p.acl
    if p.arxiv:
        ext["ArXiv"] = p.arxiv
    return {
        "paperId": p.pid,
        "title": p.title,
        "abstract": p.abstract or None,
        "authors": [{"name": f"Writer {p.pid}"}],
        "year": int(p.date[:4]) if p.date else p.year,
        "publicationDate": p.date,
        "venue": "Fake Venue",
        "externalIds": ext,
        "openAccessPdf": {"url": f"http://pdfs.test/{p.pid}.pdf"} if p.oa else None,
    }


def pdf_bytes(pid: str) -> bytes:
    return f"%PDF-1.4\n% fake paper {pid}\n".encode()


def ocr_markdown(pid: str) -> str:
    p = BY_ID[pid]
    if pid == "p09":
        return f"# {p.title}\n\n# Abstract\n\n{p.abstract}\n\n# Background\n\nNo introduction here.\n"
    return (
        f"# Abstract\n\n{p.abstract}\n\n"
        f"# 1 Introduction\n\nThe paper {p.title} studies an important problem. It builds on prior work.\n\n"
        f"## 1.1 Contributions\n\nWe contribute a method named after {pid}.\n\n"
        f"# 2 Method\n\nDetails follow.\n"
    )


# --------------------------------------------------------------------------
# fake LLM behaviour


def _between(text: str, start: str, end: str | None) -> str:
    i = text.find(start)
    if i < 0:
        return ""
    i += len(start)
    j = text.find(end, i) if end else -1
    return text[i:j] if j >= 0 else text[i:]


def _verdict(text: str) -> str:
    m = re.search(r"VERDICT=(SUFFICIENT|INSUFFICIENT|MIXED)", text)
    return m.group(1) if m else "MIXED"


def chat_answer(user: str, system: str) -> str:
    retry = "NOTE: A previous answer" in user
    if user.startswith("Generate ") and "keyword search queries" in user:
        return "\n".join(f"{i}. {q}" for i, q in enumerate(QUERIES, start=1))
    if user.startswith("You are ranking candidate"):
        n = int(re.search(r"The following are (\d+) candidate", user).group(1))
        if "Learned Index Structures" in user and not retry:
            return "The first candidate looks most relevant overall."
        return " > ".join(f"[{i}]" for i in range(n, 0, -1))
    if user.startswith("You are tasked with extracting"):
        title = re.search(r"Paper title: (.*)", user).group(1).strip()
        words = [w for w in re.findall(r"[A-Za-z-]+", title) if len(w) > 4]
        return json.dumps(
            {
                "methods": [f"{w.lower()} method" for w in words[:2]],
                "problems": [f"efficiency of {title.lower()}"],
                "datasets": ["FakeBench"],
                "metrics": ["recall@10"],
                "results": [{"metric": "recall@10", "value": str(40 + len(title) % 17)}],
                "novelty_claims": [f"first to study {words[0].lower() if words else 'this'}"],
            }
        )
    if user.startswith("# Research Landscape Analysis"):
        return "\n\n".join(f"## {h}\nObservations about {h.lower()}." for h in LANDSCAPE_SECTIONS)
    if user.startswith("# Novelty Delta Analysis"):
        return "\n\n".join(f"### {i}. {h}\nAnalysis of {h.lower()}." for i, h in enumerate(DELTA_SECTIONS, 1))
    if user.startswith("Summarize the following assessment in 5 sentences"):
        return (
            "The submission combines sparse routing with dense retrieval. "
            "Its closest prior work is sparse expert routing. "
            "The delta is mainly the application to long-context retrieval. "
            "Several uncited works cover similar ground. "
            "Overall the novelty is moderate."
        )
    if user.startswith("Assess the novelty of this paper"):
        return "The paper applies known routing ideas to retrieval; its novelty appears incremental."
    if user.startswith("I'll provide you with a novelty assessment"):
        stmts = _between(user, "Extracted novelty assessment to be reformatted:\n", "\n\nImportant guidelines")
        lines = [ln[2:].strip() for ln in stmts.splitlines() if ln.startswith("- ")]
        return "This paper presents a retrieval method. " + " ".join(lines)
    if user.startswith("Extract 2-3 core novelty judgments"):
        ref = _between(user, "from this assessment:\n\n", "\n\nFocus on")
        return json.dumps(
            {
                "judgments": [
                    {"statement": f"Judgment A about: {ref[:40]}", "rationale": "speaks to originality"},
                    {"statement": "Judgment B: relation to prior work", "rationale": "positions the work"},
                ]
            }
        )
    if user.startswith("Compare reviewer assessment against reference"):
        core = _between(user, "Core Judgments:", "\nReference:")
        n = len(re.findall(r"^\d+\. ", core, flags=re.M))
        ref = _between(user, "\nReference:", "\nReviewer:")
        rev = _between(user, "\nReviewer:", "\n\nEvaluate three dimensions")
        words = len(rev.split())
        cites = len(re.findall(r"\(\w+ et al\.", rev))
        return json.dumps(
            {
                "judgment_similarity": [
                    {"core_judgment": i, "matched": i % 2 == 1, "confidence": 0.8, "explanation": "fake"}
                    for i in range(1, n + 1)
                ],
                "conclusion_alignment": {
                    "reference_conclusion": _verdict(ref),
                    "reviewer_conclusion": _verdict(rev),
                    "aligned": _verdict(ref) == _verdict(rev),
                    "explanation": "fake",
                },
                "prior_work_engagement": {
                    "level": "NONE" if cites == 0 else "LIMITED" if cites < 3 else "EXTENSIVE",
                    "explanation": "fake",
                },
                "depth_of_analysis": {
                    "level": "SURFACE LEVEL" if words < 15 else "MODERATE" if words < 40 else "DEEP",
                    "explanation": "fake",
                },
            }
        )
    raise AssertionError(f"fake LLM got an unknown prompt: {user[:80]!r}")


def fake_embedding(text: str) -> list[float]:
    vec = [0.05] * EMBED_DIM
    for w in re.findall(r"[a-z]+", text.lower()):
        if len(w) > 3:
            h = hashlib.sha256(w.encode()).digest()
            vec[h[0] % EMBED_DIM] += 1.0
    return vec


# --------------------------------------------------------------------------
# transport


class FakeWorld:
    def __init__(self, *, fail_pdfs: bool = False) -> None:
        self.fail_pdfs = fail_pdfs
        self.requests: list[httpx.Request] = []
        self._lock = threading.Lock()

    def transport(self) -> httpx.MockTransport:
        return httpx.MockTransport(self.handle)

    def urls(self) -> list[str]:
        return [str(r.url) for r in self.requests]

    def handle(self, request: httpx.Request) -> httpx.Response:
        with self._lock:
            self.requests.append(request)
        url = request.url
        host, path = url.host, url.path
        if host == "tei.test":
            return httpx.Response(200, text=submission_tei(), headers={"content-type": "application/xml"})
        if host == "scholar.test":
            return self._scholar(path, url.params)
        if host == "llm.test" and path.endswith("/chat/completions"):
            body = json.loads(request.content)
            msgs = body["messages"]
            system = next((m["content"] for m in msgs if m["role"] == "system"), "")
            user = next(m["content"] for m in msgs if m["role"] == "user")
            text = chat_answer(user, system)
            return httpx.Response(
                200,
                json={
                    "id": "fake",
                    "model": body["model"],
                    "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}],
                    "usage": {"prompt_tokens": len(user) // 4, "completion_tokens": len(text) // 4},
                },
            )
        if host == "llm.test" and path.endswith("/embeddings"):
            body = json.loads(request.content)
            return httpx.Response(
                200,
                json={"data": [{"index": i, "embedding": fake_embedding(t)} for i, t in enumerate(body["input"])]},
            )
        if host in ("pdfs.test", "acl.test", "arxiv.test") and self.fail_pdfs and "/api/" not in path:
            return httpx.Response(404, text="not found")
        if host == "pdfs.test":
            pid = path.strip("/").removesuffix(".pdf")
            if BY_ID[pid].oa_html:
                return httpx.Response(200, text="<html>paywall</html>", headers={"content-type": "text/html"})
            return httpx.Response(200, content=pdf_bytes(pid), headers={"content-type": "application/pdf"})
        if host == "acl.test":
            acl = path.strip("/").removesuffix(".pdf")
            pid = next((p.pid for p in PAPERS if p.acl == acl), None)
            if pid is None:
                return httpx.Response(404)
            return httpx.Response(200, content=pdf_bytes(pid), headers={"content-type": "application/pdf"})
        if host == "arxiv.test" and path == "/api/query":
            return self._arxiv_api(url.params.get("search_query", ""))
        if host == "arxiv.test" and path.startswith("/pdf/"):
            aid = path.removeprefix("/pdf/")
            pid = next((p.pid for p in PAPERS if aid in (p.arxiv, p.arxiv_by_title)), None)
            if pid is None:
                return httpx.Response(404)
            return httpx.Response(200, content=pdf_bytes(pid), headers={"content-type": "application/pdf"})
        if host in ("ocr1.test", "ocr2.test"):
            m = re.search(rb"fake paper (p\d+)", request.content)
            if m is None:
                return httpx.Response(400, text="unreadable")
            pid = m.group(1).decode()
            if host == "ocr1.test" and pid == "p08":
                return httpx.Response(422, text="cannot process")
            return httpx.Response(200, json={"markdown": ocr_markdown(pid)})
        return httpx.Response(404, text=f"no route for {url}")

    def _scholar(self, path: str, params: httpx.QueryParams) -> httpx.Response:
        query = params.get("query", "")
        if path.endswith("/paper/search/match"):
            hit = next((p for p in PAPERS if normalize_title(p.title) == normalize_title(query)), None)
            if hit is None:
                return httpx.Response(404, json={"error": "Title match not found"})
            return httpx.Response(200, json={"data": [s2_json(hit) | {"matchScore": 99.0}]})
        if path.endswith("/paper/search"):
            limit = int(params.get("limit", 10))
            words = {w for w in re.findall(r"[a-z]+", query.lower()) if len(w) > 3}
            hits = [
                s2_json(p)
                for p in PAPERS
                if words & {w for w in re.findall(r"[a-z]+", p.title.lower())}
            ]
            return httpx.Response(200, json={"total": len(hits), "data": hits[:limit]})
        return httpx.Response(404)

    def _arxiv_api(self, query: str) -> httpx.Response:
        title = query.removeprefix("ti:").strip().strip('"')
        entries = ""
        for p in PAPERS:
            aid = p.arxiv or p.arxiv_by_title
            if aid and normalize_title(p.title) == normalize_title(title):
                entries = (
                    f"<entry><id>http://arxiv.org/abs/{aid}v2</id><title>{escape(p.title)}</title></entry>"
                )
        feed = f'<feed xmlns="http://www.w3.org/2005/Atom">{entries}</feed>'
        return httpx.Response(200, text=feed, headers={"content-type": "application/atom+xml"})


def bundle_config(fixtures_dir: str | None = None, mode: str = "replay", **overrides) -> dict:
    """Pipeline config wired to the fake hosts."""
    cfg = {
        "providers": {
            "chat_url": CHAT_URL,
            "chat_model": "fake-chat-1",
            "embed_url": EMBED_URL,
            "embed_model": "fake-embed-1",
            "embed_dim": EMBED_DIM,
        },
        "tei_service_url": TEI_URL,
        "scholar_url": SCHOLAR_URL,
        "corpus": {
            "acl_pdf_url": "http://acl.test/{id}.pdf",
            "arxiv_pdf_url": "http://arxiv.test/pdf/{id}",
            "arxiv_api_url": "http://arxiv.test/api/query",
            "primary_ocr_url": "http://ocr1.test/extract",
            "fallback_ocr_url": "http://ocr2.test/extract",
        },
        "ranking": {"rerank_pool_size": 10, "top_k": 6, "rerank_window": 4, "rerank_stride": 2},
        "discovery": {"query_count": 5, "results_per_query": 20},
        "fixtures_dir": fixtures_dir,
        "mode": mode,
        "cache_dir": None,
        "parallelism": 4,
    }
    cfg.update(overrides)
    return cfg
