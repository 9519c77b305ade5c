"""Triplet prompt templating and token-span alignment.

A prompt is rendered from (agent, verb, object) and must contain the verb
and object phrases exactly once each — attention recording attributes image
positions to those token spans, so an ambiguous or absent phrase would make
the recorded map meaningless.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass

from .errors import PromptError, TokenAlignmentError

DEFAULT_TEMPLATE = "add a {agent} to {verb} the {object}"
DEFAULT_AGENT = "hand"

_SLOTS = ("agent", "verb", "object")


def normalize_token(text: str) -> str:
    """Lowercase, trim, and map underscores to spaces ("sit_on" -> "sit on")."""
    return re.sub(r"\s+", " ", str(text).replace("_", " ").strip().lower())


def tokenize(prompt: str) -> list[str]:
    """Deterministic toy tokenizer: lowercase alphanumeric runs.

    Hyphenated and multi-word phrases come apart into several tokens, which
    is what exercises the span (rather than single-index) alignment path.
    """
    return re.findall(r"[a-z0-9]+", prompt.lower())


def find_span(tokens: list[str], phrase: str) -> tuple[int, int]:
    """Locate ``phrase`` as a contiguous token run; returns [start, end).

    Raises TokenAlignmentError with the full token dump when absent.
    """
    target = tokenize(phrase)
    if not target:
        raise TokenAlignmentError(phrase, tokens)
    n, m = len(tokens), len(target)
    for start in range(n - m + 1):
        if tokens[start : start + m] == target:
            return start, start + m
    raise TokenAlignmentError(phrase, tokens)


@dataclass(frozen=True)
class PromptTemplate:
    pattern: str = DEFAULT_TEMPLATE

    def __post_init__(self):
        counts = {s: 0 for s in _SLOTS}
        try:
            fields = [f for _, f, _, _ in string.Formatter().parse(self.pattern) if f is not None]
        except ValueError as exc:
            raise PromptError(f"unparseable template {self.pattern!r}: {exc}") from exc
        for f in fields:
            if f not in counts:
                raise PromptError(f"template has unknown slot {{{f}}}; allowed: {_SLOTS}")
            counts[f] += 1
        if counts["verb"] != 1 or counts["object"] != 1:
            raise PromptError(
                f"template must use {{verb}} and {{object}} exactly once, got {counts}"
            )
        if counts["agent"] > 1:
            raise PromptError("template may use {agent} at most once")

    def render(self, verb: str, object: str, agent: str = DEFAULT_AGENT) -> str:
        verb_n, obj_n, agent_n = (normalize_token(x) for x in (verb, object, agent))
        if not verb_n or not obj_n:
            raise PromptError("verb and object must be non-empty")
        prompt = self.pattern.format(agent=agent_n, verb=verb_n, object=obj_n)
        # exactly-once check on the rendered text: whole-phrase matches only,
        # so "hold"/"holder" do not collide but verb == object does
        for name, phrase in (("verb", verb_n), ("object", obj_n)):
            hits = len(re.findall(rf"\b{re.escape(phrase)}\b", prompt))
            if hits != 1:
                raise PromptError(
                    f"{name} {phrase!r} occurs {hits} times in rendered prompt {prompt!r}"
                )
        return prompt

    def render_with_spans(
        self, verb: str, object: str, agent: str = DEFAULT_AGENT
    ) -> tuple[str, list[str], tuple[int, int], tuple[int, int]]:
        """Render and align: (prompt, tokens, verb_span, object_span)."""
        prompt = self.render(verb, object, agent)
        tokens = tokenize(prompt)
        verb_span = find_span(tokens, normalize_token(verb))
        object_span = find_span(tokens, normalize_token(object))
        return prompt, tokens, verb_span, object_span
