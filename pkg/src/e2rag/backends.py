"""Chat and embedding backends with central token accounting.

Two families: a live OpenAI-compatible HTTP client, and deterministic offline
mocks that make the whole pipeline testable with zero network access. The
mock chat backend is a scripted responder keyed by a prompt classifier; the
mock embedder is a feature-hashing scheme, so every output is a pure function
of its inputs.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import threading
import time
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import httpx

from . import prompts
from .tokens import count_tokens, token_texts

DEFAULT_API_BASE = "https://api.openai.com/v1"
DEFAULT_CHAT_MODEL = "gpt-4o-mini"
DEFAULT_EMBED_MODEL = "text-embedding-3-small"
DEFAULT_EMBEDDING_DIM = 1536

LEDGER_STAGES = ("extraction", "embedding", "hypothetical", "answer", "judge")


class BackendUnavailableError(RuntimeError):
    """Transport failure that survived the retry policy."""


@dataclass(frozen=True)
class BackendConfig:
    base_url: str = DEFAULT_API_BASE
    api_key: str = ""
    chat_model: str = DEFAULT_CHAT_MODEL
    embedding_model: str = DEFAULT_EMBED_MODEL
    max_extract_tokens: int = 4096   # cap for extraction calls and canonical texts
    max_output_tokens: int = 4096    # cap for generation (hypothetical, answer, judge)
    timeout_s: float = 60.0
    retry_count: int = 3
    retry_backoff_s: float = 0.5
    embedding_dim: int = DEFAULT_EMBEDDING_DIM

    def __post_init__(self) -> None:
        if self.max_extract_tokens <= 0 or self.max_output_tokens <= 0:
            raise ValueError("token caps must be positive")
        if self.embedding_dim <= 0:
            raise ValueError("embedding_dim must be positive")

    @classmethod
    def from_env(cls, **overrides) -> "BackendConfig":
        env = {
            "base_url": os.environ.get("E2RAG_API_BASE"),
            "api_key": os.environ.get("E2RAG_API_KEY"),
            "chat_model": os.environ.get("E2RAG_CHAT_MODEL"),
            "embedding_model": os.environ.get("E2RAG_EMBED_MODEL"),
        }
        kwargs = {k: v for k, v in env.items() if v}
        kwargs.update(overrides)
        return cls(**kwargs)


@dataclass(frozen=True)
class LedgerRecord:
    purpose: str
    input_tokens: int
    output_tokens: int
    truncated: bool = False
    detail: str = ""

    def as_dict(self) -> dict:
        return {
            "purpose": self.purpose,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "truncated": self.truncated,
            "detail": self.detail,
        }


class TokenLedger:
    """Per-call token records with running totals by stage. Thread-safe appends."""

    def __init__(self) -> None:
        self._records: list[LedgerRecord] = []
        self._totals: dict[str, dict[str, int]] = {}
        self._lock = threading.Lock()

    def add(self, purpose: str, input_tokens: int, output_tokens: int,
            truncated: bool = False, detail: str = "") -> LedgerRecord:
        record = LedgerRecord(purpose, input_tokens, output_tokens, truncated, detail)
        with self._lock:
            self._records.append(record)
            bucket = self._totals.setdefault(purpose, {"calls": 0, "input_tokens": 0, "output_tokens": 0})
            bucket["calls"] += 1
            bucket["input_tokens"] += input_tokens
            bucket["output_tokens"] += output_tokens
        return record

    @property
    def records(self) -> tuple[LedgerRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def totals_by_stage(self) -> dict[str, dict[str, int]]:
        with self._lock:
            return {k: dict(v) for k, v in self._totals.items()}

    def calls(self, purpose: Optional[str] = None) -> int:
        with self._lock:
            if purpose is None:
                return len(self._records)
            return sum(1 for r in self._records if r.purpose == purpose)

    def total_tokens(self) -> int:
        with self._lock:
            return sum(r.input_tokens + r.output_tokens for r in self._records)

    def verify(self) -> bool:
        """Running totals equal the sums over records (conservation check)."""
        with self._lock:
            recomputed: dict[str, dict[str, int]] = {}
            for r in self._records:
                bucket = recomputed.setdefault(r.purpose, {"calls": 0, "input_tokens": 0, "output_tokens": 0})
                bucket["calls"] += 1
                bucket["input_tokens"] += r.input_tokens
                bucket["output_tokens"] += r.output_tokens
            return recomputed == self._totals

    def mark(self) -> int:
        """Position marker for slicing the records made after this point."""
        with self._lock:
            return len(self._records)

    def since(self, mark: int) -> tuple[LedgerRecord, ...]:
        with self._lock:
            return tuple(self._records[mark:])


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-length real vector; all components finite."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if any(not math.isfinite(v) for v in self.values):
            raise ValueError("embedding contains non-finite values")

    @property
    def dim(self) -> int:
        return len(self.values)


def cosine(a: EmbeddingVector | Sequence[float], b: EmbeddingVector | Sequence[float]) -> float:
    """Cosine similarity; zero vectors compare as 0.0."""
    va = a.values if isinstance(a, EmbeddingVector) else tuple(a)
    vb = b.values if isinstance(b, EmbeddingVector) else tuple(b)
    if len(va) != len(vb):
        raise ValueError(f"dimension mismatch: {len(va)} vs {len(vb)}")
    dot = sum(x * y for x, y in zip(va, vb))
    na = math.sqrt(sum(x * x for x in va))
    nb = math.sqrt(sum(y * y for y in vb))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def mock_embed(text: str, dim: int) -> EmbeddingVector:
    """Deterministic feature-hashing embedding.

    Each casefolded token is hashed to a bucket in [0, dim) and accumulated
    with a +/-1 sign drawn from a second hash bit, then L2-normalized. Empty
    or fully-cancelled input yields an (un-normalizable) all-zeros vector.
    """
    if dim <= 0:
        raise ValueError("dim must be positive")
    acc = [0.0] * dim
    for tok in token_texts(text):
        digest = hashlib.sha256(tok.casefold().encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:8], "big") % dim
        sign = 1.0 if digest[8] & 1 else -1.0
        acc[bucket] += sign
    norm = math.sqrt(sum(v * v for v in acc))
    if norm == 0.0:
        return EmbeddingVector(tuple(acc))
    return EmbeddingVector(tuple(v / norm for v in acc))


def _require_texts(texts: Sequence[str]) -> None:
    if not texts:
        raise ValueError("texts must be a non-empty list")
    for t in texts:
        if not isinstance(t, str) or not t:
            raise ValueError("texts must all be non-empty strings")


class LiveChatBackend:
    """OpenAI-compatible /chat/completions client with retries and accounting."""

    def __init__(self, config: BackendConfig, ledger: TokenLedger,
                 client: Optional[httpx.Client] = None) -> None:
        self.config = config
        self.ledger = ledger
        self._client = client or httpx.Client(timeout=config.timeout_s)

    def complete(self, prompt: str, max_tokens: int, purpose: str = "answer") -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        payload = {
            "model": self.config.chat_model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": max_tokens,
        }
        data = _post_with_retries(self._client, self.config, "/chat/completions", payload)
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailableError(f"malformed chat response: {exc}") from exc
        usage = data.get("usage") or {}
        # Truncation is not an error; it is flagged on the ledger record.
        truncated = choice.get("finish_reason") == "length"
        self.ledger.add(
            purpose,
            int(usage.get("prompt_tokens", count_tokens(prompt))),
            int(usage.get("completion_tokens", count_tokens(text))),
            truncated=truncated,
            detail=self.config.chat_model,
        )
        return text


class LiveEmbeddingBackend:
    """OpenAI-compatible /embeddings client."""

    def __init__(self, config: BackendConfig, ledger: TokenLedger,
                 client: Optional[httpx.Client] = None) -> None:
        self.config = config
        self.ledger = ledger
        self._client = client or httpx.Client(timeout=config.timeout_s)

    @property
    def dim(self) -> int:
        return self.config.embedding_dim

    def embed(self, texts: Sequence[str], purpose: str = "embedding") -> list[EmbeddingVector]:
        _require_texts(texts)
        payload = {"model": self.config.embedding_model, "input": list(texts)}
        data = _post_with_retries(self._client, self.config, "/embeddings", payload)
        try:
            rows = sorted(data["data"], key=lambda d: d["index"])
            vectors = [EmbeddingVector(tuple(float(x) for x in row["embedding"])) for row in rows]
        except (KeyError, TypeError) as exc:
            raise BackendUnavailableError(f"malformed embeddings response: {exc}") from exc
        if len(vectors) != len(texts):
            raise BackendUnavailableError("embeddings response count mismatch")
        usage = data.get("usage") or {}
        self.ledger.add(
            purpose,
            int(usage.get("prompt_tokens", sum(count_tokens(t) for t in texts))),
            0,
            detail=self.config.embedding_model,
        )
        return vectors


def _post_with_retries(client: httpx.Client, config: BackendConfig, path: str, payload: dict) -> dict:
    url = config.base_url.rstrip("/") + path
    headers = {"Content-Type": "application/json"}
    if config.api_key:
        headers["Authorization"] = f"Bearer {config.api_key}"
    last_error = "no attempts made"
    for attempt in range(config.retry_count):
        try:
            response = client.post(url, json=payload, headers=headers)
        except httpx.HTTPError as exc:
            last_error = f"transport error: {exc}"
        else:
            if response.status_code == 200:
                try:
                    return response.json()
                except ValueError as exc:
                    raise BackendUnavailableError(f"non-JSON response from {url}: {exc}") from exc
            if response.status_code not in (429,) and response.status_code < 500:
                raise BackendUnavailableError(f"HTTP {response.status_code} from {url}: {response.text[:200]}")
            last_error = f"HTTP {response.status_code}"
        if attempt + 1 < config.retry_count:
            time.sleep(config.retry_backoff_s * (2 ** attempt))
    raise BackendUnavailableError(f"{url} unavailable after {config.retry_count} attempts ({last_error})")


# --- deterministic mock machinery -----------------------------------------

# Capitalized words that are almost never entity names in prose.
_CAP_STOPWORDS = {
    "the", "a", "an", "and", "or", "but", "if", "then", "so", "yet", "nor",
    "he", "she", "it", "they", "we", "i", "you", "his", "her", "its", "their",
    "our", "my", "your", "him", "them", "us", "me",
    "in", "on", "at", "of", "to", "by", "for", "with", "from", "into", "over",
    "under", "after", "before", "during", "between", "as", "about",
    "this", "that", "these", "those", "there", "here",
    "what", "who", "whom", "whose", "how", "why", "where", "when", "which",
    "not", "no", "yes", "all", "each", "every", "some", "any", "one", "two",
    "is", "was", "were", "are", "be", "been", "am", "do", "did", "does",
    "had", "has", "have", "will", "would", "could", "should", "may", "might",
    "chapter", "once", "now", "soon", "still", "only", "even", "never",
    "later", "earlier", "meanwhile", "finally", "suddenly", "however",
    "tonight", "yesterday", "tomorrow", "today", "again", "perhaps",
}

# Lowercase tokens that look inflected but are not verbs.
_VERB_STOPWORDS = {
    "this", "thus", "less", "miss", "unless", "across", "perhaps", "always",
    "against", "towards", "besides", "sometimes", "its", "his", "hers",
    "ours", "theirs", "yours", "news", "series", "does", "years", "days",
    "words", "stairs", "united", "red", "tired", "hundred", "was", "has",
}

_WORD_RE = re.compile(r"[A-Za-z][\w']*")
_SENTENCE_RE = re.compile(r"[^.!?\n]+[.!?]?")


def _sentences(text: str) -> list[str]:
    return [m.group().strip() for m in _SENTENCE_RE.finditer(text) if m.group().strip()]


def _capitalized_groups(sentence: str) -> list[str]:
    """Runs of adjacent capitalized words, stopwords excluded."""
    groups: list[str] = []
    current: list[str] = []
    last_end = None
    for m in _WORD_RE.finditer(sentence):
        word = m.group()
        adjacent = last_end is not None and sentence[last_end:m.start()].isspace()
        capitalized = word[0].isupper() and word.lower() not in _CAP_STOPWORDS
        if capitalized and current and adjacent:
            current.append(word)
        elif capitalized:
            if current:
                groups.append(" ".join(current))
            current = [word]
        else:
            if current:
                groups.append(" ".join(current))
            current = []
        last_end = m.end()
    if current:
        groups.append(" ".join(current))
    return groups


def _verb_tokens(sentence: str) -> list[str]:
    verbs = []
    for m in _WORD_RE.finditer(sentence):
        word = m.group()
        if word[0].isupper() or len(word) < 4:
            continue
        lowered = word.lower()
        if lowered in _VERB_STOPWORDS:
            continue
        if lowered.endswith(("s", "ed", "ing")):
            verbs.append(word)
    return verbs


def _dedupe(items: Iterable[str]) -> list[str]:
    seen = set()
    out = []
    for item in items:
        key = item.casefold()
        if key not in seen:
            seen.add(key)
            out.append(item)
    return out


def _extract_between(prompt: str, start_marker: str, end_marker: str) -> str:
    start = prompt.find(start_marker)
    if start < 0:
        return ""
    start += len(start_marker)
    end = prompt.find(end_marker, start)
    if end < 0:
        end = len(prompt)
    return prompt[start:end].strip()


def _jaccard(a: str, b: str) -> float:
    sa = {t.casefold() for t in token_texts(a)}
    sb = {t.casefold() for t in token_texts(b)}
    if not sa or not sb:
        return 0.0
    return len(sa & sb) / len(sa | sb)


class MockChatBackend:
    """Scripted chat responder keyed by a prompt classifier.

    Extraction prompts get templated JSON derived from capitalized tokens and
    verb-bearing sentences in the chunk; the hypothetical prompt gets an echo
    expansion of the query; the judge prompt gets fixed-rubric scores. Canned
    responses (exact prompt match, then substring match) take priority, which
    is how the worked examples in the cue template are reproduced offline.
    """

    def __init__(self, ledger: TokenLedger, canned: Optional[dict[str, str]] = None) -> None:
        self.ledger = ledger
        self.canned = dict(canned or {})

    def complete(self, prompt: str, max_tokens: int, purpose: str = "answer") -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        response = self._respond(prompt)
        self.ledger.add(purpose, count_tokens(prompt), count_tokens(response), detail="mock")
        return response

    def _respond(self, prompt: str) -> str:
        if prompt in self.canned:
            return self.canned[prompt]
        for key in sorted(self.canned):
            if key and key in prompt:
                return self.canned[key]
        if prompts.MARK_JUDGE in prompt:
            return self._judge_response(prompt)
        if prompts.MARK_QUERY_CUES in prompt:
            query = _extract_between(prompt, "-Real Data-", "Output:")
            query = query.split("Query:", 1)[-1].strip().strip("#").strip()
            return self._cues_response(query)
        if prompts.MARK_ENTITY_EXTRACTION in prompt:
            chunk = _extract_between(prompt, "---Passage---", "---Output---")
            return self._entity_response(chunk)
        if prompts.MARK_EVENT_EXTRACTION in prompt:
            chunk = _extract_between(prompt, "---Passage---", "---Output---")
            return self._event_response(chunk)
        if prompts.MARK_HYPOTHETICAL in prompt:
            query = _extract_between(prompt, "---Question---", "---Response---")
            return self._hypothetical_response(query)
        if prompts.MARK_ANSWER in prompt:
            question = _extract_between(prompt, prompts.ANSWER_QUESTION_MARKER, "\x00")
            context = _extract_between(prompt, "---Documents---", prompts.ANSWER_QUESTION_MARKER)
            return self._answer_response(question, context)
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:12]
        return f"[mock reply {digest}]"

    @staticmethod
    def _entity_response(chunk: str) -> str:
        entities = []
        relations = []
        for sentence in _sentences(chunk):
            names = _capitalized_groups(sentence)
            for name in names:
                entities.append({
                    "name": name,
                    "type": "person",
                    "description": f'{name} is mentioned in the passage: "{sentence}"',
                })
            for left, right in zip(names, names[1:]):
                if left.casefold() == right.casefold():
                    continue
                relations.append({
                    "src": left,
                    "dst": right,
                    "description": f'{left} and {right} are co-mentioned: "{sentence}"',
                    "keywords": "co-mention",
                    "weight": 1.0,
                })
        return json.dumps({"entities": entities, "relations": relations}, ensure_ascii=False)

    @staticmethod
    def _event_response(chunk: str) -> str:
        events = []
        labels = []
        for sentence in _sentences(chunk):
            verbs = _verb_tokens(sentence)
            if not verbs:
                continue
            names = _capitalized_groups(sentence)
            label = f"{names[0]} {verbs[0]}" if names else verbs[0]
            events.append({"name": label, "description": sentence})
            labels.append(label)
        relations = [
            {
                "src": a,
                "dst": b,
                "description": f"{a} happens before {b}",
                "keywords": "sequence",
                "weight": 1.0,
            }
            for a, b in zip(labels, labels[1:])
            if a.casefold() != b.casefold()
        ]
        return json.dumps({"events": events, "relations": relations}, ensure_ascii=False)

    @staticmethod
    def _cues_response(query: str) -> str:
        entities = _dedupe(name for s in _sentences(query) for name in _capitalized_groups(s))
        verbs = set(_verb_tokens(query))
        events = []
        words = [m.group() for m in _WORD_RE.finditer(query)]
        for i, word in enumerate(words):
            if word in verbs:
                phrase = word if i + 1 >= len(words) else f"{word} {words[i + 1]}"
                events.append(phrase)
        return json.dumps({"entities": entities, "events": _dedupe(events)}, ensure_ascii=False)

    @staticmethod
    def _hypothetical_response(query: str) -> str:
        emphasis = _dedupe(
            [name for s in _sentences(query) for name in _capitalized_groups(s)]
            + _verb_tokens(query)
        )
        detail = ", ".join(emphasis) if emphasis else "the story"
        return (
            f'Considering the question "{query}", a plausible response is that the narrative '
            f"turns on {detail}. The passage most likely describes how these elements unfold "
            f"in sequence and what the consequences are."
        )

    @staticmethod
    def _answer_response(question: str, context: str) -> str:
        digest = hashlib.sha256(context.encode("utf-8")).hexdigest()[:10]
        n_sources = context.count("[chunk ")
        return (
            f'Based on {n_sources} retrieved passage(s) (context digest {digest}), '
            f'the answer to "{question}" follows from the supplied sources.'
        )

    @staticmethod
    def _judge_response(prompt: str) -> str:
        marker = prompt.find(prompts.JUDGE_DATA_MARKER)
        if marker < 0:
            return json.dumps({"error": "no evaluation data"})
        try:
            payload = json.loads(prompt[marker + len(prompts.JUDGE_DATA_MARKER):])
        except ValueError:
            return json.dumps({"error": "unparseable evaluation data"})
        truth = payload.get("ground_truth", "")
        verdicts = []
        for entry in payload.get("answers", []):
            answer = entry.get("answer", "")
            if answer.strip() == truth.strip():
                score, reason = 10, "Matches ground truth exactly."
            else:
                overlap = _jaccard(answer, truth)
                if overlap >= 0.75:
                    score, reason = 7, "Mostly correct; minor omissions or wording differences."
                elif overlap >= 0.4:
                    score, reason = 5, "Partially correct; major missing points or inaccuracies."
                elif overlap > 0.1:
                    score, reason = 3, "Mostly incorrect; small overlap."
                else:
                    score, reason = 1, "Off-topic or hallucinated."
            verdicts.append({"mode": entry.get("mode", ""), "reason": reason, "score": score})
        return json.dumps(verdicts, ensure_ascii=False)


class MockEmbeddingBackend:
    """Feature-hashing embedder; identical inputs give identical vectors."""

    def __init__(self, ledger: TokenLedger, dim: int = 16) -> None:
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.ledger = ledger
        self.dim = dim

    def embed(self, texts: Sequence[str], purpose: str = "embedding") -> list[EmbeddingVector]:
        _require_texts(texts)
        vectors = [mock_embed(t, self.dim) for t in texts]
        self.ledger.add(purpose, sum(count_tokens(t) for t in texts), 0, detail="mock")
        return vectors


def cue_example_canned_responses() -> dict[str, str]:
    """Canned cue outputs for the worked examples shipped in the cue template."""
    return {
        "Query: How did Napoleon's invasion of Russia affect his empire's strength?": json.dumps({
            "entities": ["Napoleon", "Russia", "Napoleon's empire"],
            "events": ["invasion of Russia", "empire's decline"],
        }),
        "Query: What role did MIT scientists play in the Manhattan Project?": json.dumps({
            "entities": ["MIT", "MIT scientists", "Manhattan Project"],
            "events": ["scientific research", "atomic bomb development"],
        }),
    }
