"""Embedding ranking, listwise LLM reranking and top-K selection."""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .diagnostics import Diagnostics, count, warn
from .discovery import PaperRecord
from .errors import EmptyCompletion, ZeroVector
from .gateway import EmbeddingVector, Gateway, PromptRequest
from .llm import reprompt_text
from .prompts import get_template, render
from .textutil import truncate_words

RERANK_ABSTRACT_WORDS = 200
TIE_EPS = 1e-12


@dataclass(frozen=True)
class RankedCandidate:
    record: PaperRecord
    embedding_score: float
    embedding_rank: int
    final_rank: int


@dataclass(frozen=True)
class RankingConfig:
    rerank_pool_size: int = 50
    top_k: int = 20
    rerank_window: int = 20
    rerank_stride: int = 10

    def __post_init__(self) -> None:
        for name in ("rerank_pool_size", "top_k", "rerank_window", "rerank_stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.top_k > self.rerank_pool_size:
            raise ValueError("top_k must not exceed rerank_pool_size")
        if self.rerank_stride > self.rerank_window:
            raise ValueError("rerank_stride must not exceed rerank_window")


def embedding_text(title: str, abstract: str) -> str:
    """Title, newline, abstract; title alone when the abstract is empty."""
    title, abstract = title.strip(), abstract.strip()
    return f"{title}\n{abstract}" if abstract else title


def embed_candidates(
    records: Sequence[PaperRecord],
    submission_title: str,
    submission_abstract: str,
    gateway: Gateway,
    diag: Diagnostics | None = None,
) -> tuple[EmbeddingVector, list[EmbeddingVector]]:
    no_abstract = sum(1 for r in records if not r.abstract.strip())
    if no_abstract:
        count(diag, "title_only_embeddings", no_abstract)
        warn(diag, f"{no_abstract} candidates have no abstract; embedded by title only")
    texts = [embedding_text(submission_title, submission_abstract)]
    texts += [embedding_text(r.title, r.abstract) for r in records]
    vectors = gateway.embed(texts, label="embed")
    return vectors[0], vectors[1:]


def _as_array(v: EmbeddingVector | Sequence[float]) -> np.ndarray:
    values = v.values if isinstance(v, EmbeddingVector) else v
    return np.asarray(values, dtype=np.float64)


def _tie_aware_order(scores: list[float], ids: list[str]) -> list[int]:
    """Descending score, ascending id among ties.

    Scores within TIE_EPS of their neighbour form one tie group, so cosines
    that are equal in exact arithmetic but differ by rounding still tie.
    """
    by_score = sorted(range(len(scores)), key=lambda i: -scores[i])
    order: list[int] = []
    group = by_score[:1]
    for prev, i in zip(by_score, by_score[1:]):
        if scores[prev] - scores[i] <= TIE_EPS:
            group.append(i)
        else:
            order += sorted(group, key=lambda j: ids[j])
            group = [i]
    order += sorted(group, key=lambda j: ids[j])
    return order


def cosine_rank(
    candidates: Sequence[PaperRecord],
    submission_vec: EmbeddingVector | Sequence[float],
    candidate_vecs: Sequence[EmbeddingVector | Sequence[float]],
) -> list[RankedCandidate]:
    """Sort by descending cosine similarity, ties broken by ascending record_id."""
    if len(candidates) != len(candidate_vecs):
        raise ValueError(f"{len(candidates)} candidates but {len(candidate_vecs)} vectors")
    if not candidates:
        return []
    query = _as_array(submission_vec)
    matrix = np.stack([_as_array(v) for v in candidate_vecs])
    if matrix.shape[1] != query.shape[0]:
        raise ValueError(f"dimension mismatch: {matrix.shape[1]} vs {query.shape[0]}")
    qnorm = float(np.linalg.norm(query))
    norms = np.linalg.norm(matrix, axis=1)
    if qnorm == 0.0:
        raise ZeroVector("submission embedding has zero norm")
    if np.any(norms == 0.0):
        bad = [candidates[i].record_id for i in np.flatnonzero(norms == 0.0)]
        raise ZeroVector(f"zero-norm embeddings for {bad}")
    scores = np.clip((matrix / norms[:, None]) @ (query / qnorm), -1.0, 1.0)
    order = _tie_aware_order(scores.tolist(), [c.record_id for c in candidates])
    return [
        RankedCandidate(candidates[i], float(scores[i]), rank, rank)
        for rank, i in enumerate(order, start=1)
    ]


# --------------------------------------------------------------------------
# listwise reranking

_BRACKETED = re.compile(r"\[(\d+)\]")
_BARE = re.compile(r"\b(\d+)\b")


def parse_permutation(text: str, size: int) -> list[int] | None:
    """Return 0-based indices if ``text`` names each of 1..size exactly once."""
    found = _BRACKETED.findall(text) or _BARE.findall(text)
    try:
        idx = [int(x) - 1 for x in found]
    except ValueError:
        return None
    if sorted(idx) != list(range(size)):
        return None
    return idx


def window_bounds(pool: int, window: int, stride: int) -> list[tuple[int, int]]:
    """Back-to-front sliding windows over ``pool`` items."""
    if pool <= 0:
        return []
    bounds = []
    end = pool
    start = max(0, pool - window)
    while True:
        bounds.append((start, end))
        if start == 0:
            break
        end -= stride
        start = max(0, start - stride)
    return bounds


def _candidate_block(items: Sequence[RankedCandidate]) -> str:
    lines = []
    for i, c in enumerate(items, start=1):
        abstract = truncate_words(c.record.abstract, RERANK_ABSTRACT_WORDS) or "(no abstract)"
        lines.append(f"[{i}] {c.record.title}\n{abstract}")
    return "\n\n".join(lines)


def _rerank_window(
    items: list[RankedCandidate],
    title: str,
    abstract: str,
    gateway: Gateway,
    diag: Diagnostics | None,
) -> list[RankedCandidate]:
    text = render(
        "rerank",
        title=title,
        abstract=abstract or "(no abstract)",
        num_candidates=len(items),
        candidates=_candidate_block(items),
    )
    system = get_template("rerank").system
    reason = ""
    for attempt in range(2):
        rendered = text if attempt == 0 else reprompt_text(text, reason)
        req = PromptRequest("rerank", rendered, max_output_tokens=512, role_context=system)
        try:
            out = gateway.chat_complete(req, label="rerank").text
        except EmptyCompletion:
            out = ""
        perm = parse_permutation(out, len(items))
        if perm is not None:
            return [items[i] for i in perm]
        reason = f"answer did not rank each of [1]..[{len(items)}] exactly once"
        if attempt == 0:
            count(diag, "reprompt:rerank")
    count(diag, "rerank_fallback")
    return items


def llm_rerank(
    ranked: Sequence[RankedCandidate],
    submission_title: str,
    submission_abstract: str,
    gateway: Gateway,
    cfg: RankingConfig = RankingConfig(),
    diag: Diagnostics | None = None,
) -> list[RankedCandidate]:
    """Rerank the top ``rerank_pool_size`` candidates with sliding listwise windows.

    A window whose answer is not a permutation after one reprompt keeps its
    incoming order and increments the ``rerank_fallback`` counter. Items past
    the pool keep embedding order behind the reranked block.
    """
    if not ranked:
        raise ValueError("nothing to rerank")
    items = sorted(ranked, key=lambda c: c.embedding_rank)
    pool, rest = items[: cfg.rerank_pool_size], items[cfg.rerank_pool_size :]
    for start, end in window_bounds(len(pool), cfg.rerank_window, cfg.rerank_stride):
        if end - start < 2:
            continue
        pool[start:end] = _rerank_window(
            pool[start:end], submission_title, submission_abstract, gateway, diag
        )
    return [replace(c, final_rank=i) for i, c in enumerate([*pool, *rest], start=1)]


def select_top_k(
    ranked: Sequence[RankedCandidate],
    cfg: RankingConfig = RankingConfig(),
    diag: Diagnostics | None = None,
) -> list[RankedCandidate]:
    k = cfg.top_k
    if k < 1:
        raise ValueError("top_k must be >= 1")
    ordered = sorted(ranked, key=lambda c: c.final_rank)
    if len(ordered) < k:
        warn(diag, f"only {len(ordered)} candidates available for top-{k} selection")
    return ordered[:k]
