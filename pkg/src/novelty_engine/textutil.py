from __future__ import annotations

import json
import re
import unicodedata
from typing import Any

ABBREVIATIONS = frozenset(
    {
        "al", "e.g", "i.e", "fig", "figs", "eq", "eqs", "sec", "secs", "cf", "vs",
        "resp", "approx", "no", "nos", "dr", "mr", "mrs", "ms", "prof", "st", "tab",
        "ref", "refs", "ch", "vol", "pp", "inc", "ltd", "jr", "sr", "viz", "ca",
    }
)

_BOUNDARY = re.compile(r"[.!?]+(?=\s+[\"'(\[]?[A-Z])")
_WORD_BEFORE = re.compile(r"([\w.]+)$")


def normalize_title(title: str) -> str:
    """Lowercase, drop punctuation, collapse whitespace. Idempotent."""
    s = unicodedata.normalize("NFKC", title).casefold()
    s = unicodedata.normalize("NFKC", s)
    s = "".join(ch for ch in s if not unicodedata.category(ch).startswith("P"))
    return " ".join(s.split())


def sentence_spans(text: str) -> list[tuple[int, int]]:
    """Split ``text`` into sentence spans.

    A boundary is ``.``, ``!`` or ``?`` followed by whitespace and an
    uppercase letter, unless the token before the period is a known
    abbreviation or a single-letter initial.
    """
    spans: list[tuple[int, int]] = []
    start = 0
    for m in _BOUNDARY.finditer(text):
        end = m.end()
        if text[m.start()] == ".":
            w = _WORD_BEFORE.search(text, 0, m.start())
            token = w.group(1).lower() if w else ""
            if token in ABBREVIATIONS or (len(token) == 1 and token.isalpha()):
                continue
        spans.append(_trim(text, start, end))
        start = end
    if text[start:].strip():
        spans.append(_trim(text, start, len(text)))
    return [s for s in spans if s[1] > s[0]]


def _trim(text: str, start: int, end: int) -> tuple[int, int]:
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    return start, end


def split_sentences(text: str) -> list[str]:
    return [text[a:b] for a, b in sentence_spans(text)]


def collapse_ws(text: str) -> str:
    return " ".join(text.split())


_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.S)


def parse_json_object(text: str) -> dict[str, Any] | None:
    """Best-effort extraction of one JSON object from a completion."""
    candidates = [text.strip()]
    candidates += [m.strip() for m in _FENCE.findall(text)]
    lo, hi = text.find("{"), text.rfind("}")
    if lo != -1 and hi > lo:
        candidates.append(text[lo : hi + 1])
    for c in candidates:
        try:
            obj = json.loads(c)
        except (json.JSONDecodeError, ValueError):
            continue
        if isinstance(obj, dict):
            return obj
    return None


def truncate_words(text: str, limit: int) -> str:
    """Keep the first ``limit`` words, preserving the original spacing."""
    end = None
    for i, m in enumerate(re.finditer(r"\S+", text)):
        if i == limit - 1:
            end = m.end()
            break
    if end is None or limit <= 0:
        return text.strip() if limit > 0 else ""
    return text[:end].strip()
