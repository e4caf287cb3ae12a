"""Deterministic whitespace-and-punctuation tokenizer.

A token is either a maximal run of word characters (letters, digits,
underscore) or a single other non-space character. Whitespace separates
tokens and is never part of one. The scheme is dependency-free and stable
across platforms, which is what chunk offsets and token accounting need.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


@dataclass(frozen=True)
class Token:
    text: str
    start: int  # character offset, inclusive
    end: int    # character offset, exclusive


def tokenize(text: str) -> list[Token]:
    """Split text into tokens with exact character offsets."""
    return [Token(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def token_texts(text: str) -> list[str]:
    return [m.group() for m in _TOKEN_RE.finditer(text)]


def count_tokens(text: str) -> int:
    return sum(1 for _ in _TOKEN_RE.finditer(text))


def truncate_to_tokens(text: str, max_tokens: int) -> str:
    """Return the prefix of ``text`` covering at most ``max_tokens`` tokens."""
    if max_tokens <= 0:
        return ""
    toks = tokenize(text)
    if len(toks) <= max_tokens:
        return text
    return text[: toks[max_tokens - 1].end]
