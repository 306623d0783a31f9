"""Prompt-then-validate helper shared by every LLM-backed step."""

from __future__ import annotations

from typing import Callable, TypeVar

from .diagnostics import Diagnostics, count
from .errors import EmptyCompletion, MalformedCompletion
from .gateway import Gateway, PromptRequest
from .prompts import get_template

T = TypeVar("T")


class Invalid(ValueError):
    """Raised by a parser when a completion does not satisfy its contract."""


def reprompt_text(text: str, reason: str) -> str:
    return (
        f"{text}\n\n"
        f"NOTE: A previous answer to this request was rejected ({reason}). "
        "Follow the requested output format exactly."
    )


def ask(
    gateway: Gateway,
    template_id: str,
    text: str,
    parse: Callable[[str], T],
    *,
    diag: Diagnostics | None = None,
    temperature: float = 0.0,
    max_output_tokens: int = 4096,
    replicate: int = 0,
    system: str | None = None,
    label: str = "",
) -> T:
    """Complete ``text`` and parse it, reprompting once on a contract violation."""
    if system is None:
        system = get_template(template_id).system
    reason = ""
    for attempt in range(2):
        rendered = text if attempt == 0 else reprompt_text(text, reason)
        req = PromptRequest(
            template_id=template_id,
            rendered_text=rendered,
            temperature=temperature,
            max_output_tokens=max_output_tokens,
            role_context=system,
            replicate=replicate,
        )
        try:
            completion = gateway.chat_complete(req, label=label or template_id)
        except EmptyCompletion:
            if attempt == 1:
                raise
            reason = "empty answer"
            count(diag, f"reprompt:{template_id}")
            continue
        try:
            return parse(completion.text)
        except Invalid as exc:
            reason = str(exc)
            if attempt == 1:
                raise MalformedCompletion(f"{template_id}: {reason}") from exc
            count(diag, f"reprompt:{template_id}")
    raise AssertionError("unreachable")
