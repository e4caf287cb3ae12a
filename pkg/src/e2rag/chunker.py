"""Token-window document chunking with exact byte offsets.

Windows slide over the token stream with a fixed overlap; boundaries land on
token edges, so a byte offset can never split a multi-byte character. The
first chunk's span is extended to byte 0 and the last chunk's to EOF so the
union of spans covers the whole document.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import Chunk, make_chunk_id
from .tokens import tokenize

KNOWN_TOKENIZERS = ("simple",)


@dataclass(frozen=True)
class ChunkerConfig:
    chunk_size_tokens: int = 1200
    overlap_tokens: int = 100
    tokenizer: str = "simple"

    def __post_init__(self) -> None:
        if self.chunk_size_tokens <= 0:
            raise ValueError("chunk_size_tokens must be positive")
        if not 0 <= self.overlap_tokens < self.chunk_size_tokens:
            raise ValueError("overlap_tokens must be in [0, chunk_size_tokens)")
        if self.tokenizer not in KNOWN_TOKENIZERS:
            raise ValueError(f"unknown tokenizer {self.tokenizer!r}")


def chunk_document(doc_id: str, text: str, cfg: ChunkerConfig | None = None) -> list[Chunk]:
    """Split a document into overlapping token windows.

    Consecutive chunks overlap by exactly ``overlap_tokens`` tokens; the last
    chunk may be shorter than ``chunk_size_tokens``. Empty (or whitespace-only)
    text yields an empty list. Pure function: same inputs, same chunk list.
    """
    cfg = cfg or ChunkerConfig()
    toks = tokenize(text)
    if not toks:
        return []

    # Cumulative byte offset of each character boundary; token edges are
    # character boundaries, so slicing the encoded document here is safe.
    byte_at = [0] * (len(text) + 1)
    pos = 0
    for i, ch in enumerate(text):
        pos += len(ch.encode("utf-8"))
        byte_at[i + 1] = pos
    doc_bytes = text.encode("utf-8")

    step = cfg.chunk_size_tokens - cfg.overlap_tokens
    chunks: list[Chunk] = []
    start = 0
    ordinal = 0
    while True:
        end = min(start + cfg.chunk_size_tokens, len(toks))
        byte_start = byte_at[toks[start].start]
        byte_end = byte_at[toks[end - 1].end]
        if ordinal == 0:
            byte_start = 0
        if end == len(toks):
            byte_end = len(doc_bytes)
        chunk_text = doc_bytes[byte_start:byte_end].decode("utf-8")
        chunks.append(
            Chunk(
                chunk_id=make_chunk_id(doc_id, byte_start, byte_end, chunk_text),
                doc_id=doc_id,
                text=chunk_text,
                token_count=end - start,
                byte_start=byte_start,
                byte_end=byte_end,
                ordinal=ordinal,
            )
        )
        if end == len(toks):
            break
        start += step
        ordinal += 1
    return chunks
