"""Turning chunks into mention lists and queries into cue sets.

Each chunk is fed to the chat backend twice (entities, events); relations
between same-kind mentions ride along in the same call so the call count
stays at two per chunk. Model output goes through a tolerant JSON parser
with one reprompt before the pipeline degrades to an empty result.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Any

from . import prompts
from .model import Chunk, CueSets, normalize_name

logger = logging.getLogger(__name__)


class JsonRecoveryError(ValueError):
    """No JSON value could be recovered from the model output."""


@dataclass
class ExtractedEntity:
    name: str
    entity_type: str
    description: str


@dataclass
class ExtractedEvent:
    name: str
    description: str


@dataclass
class ExtractedRelation:
    src: str
    dst: str
    description: str
    keywords: str
    weight: float


@dataclass
class ExtractionResult:
    entities: list[ExtractedEntity] = field(default_factory=list)
    events: list[ExtractedEvent] = field(default_factory=list)
    relations: list[ExtractedRelation] = field(default_factory=list)
    raw_response: str = ""
    parse_warnings: list[str] = field(default_factory=list)


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n?|```")
_SMART_QUOTES = {
    "“": '"', "”": '"', "‘": "'", "’": "'",
}
_TRAILING_COMMA_RE = re.compile(r",(\s*[}\]])")


def parse_model_json(raw: str) -> tuple[Any, list[str]]:
    """Recover a JSON value from model output.

    Strips code fences, normalizes smart quotes, scans for the first balanced
    object/array, and tolerates trailing commas (with a warning). Raises
    JsonRecoveryError when nothing recoverable remains.
    """
    warnings: list[str] = []
    text = raw or ""
    for smart, plain in _SMART_QUOTES.items():
        if smart in text:
            text = text.replace(smart, plain)
            warnings.append("normalized smart quotes")
    if "```" in text:
        text = _FENCE_RE.sub("", text)
        warnings.append("stripped code fences")
    text = text.strip()

    try:
        return json.loads(text), warnings
    except ValueError:
        pass

    candidate = _first_balanced(text)
    if candidate is None:
        raise JsonRecoveryError("no balanced JSON object or array found")
    try:
        return json.loads(candidate), warnings + ["recovered embedded JSON"]
    except ValueError:
        fixed = _TRAILING_COMMA_RE.sub(r"\1", candidate)
        if fixed != candidate:
            try:
                value = json.loads(fixed)
                warnings.append("removed trailing commas")
                return value, warnings
            except ValueError:
                pass
    raise JsonRecoveryError("candidate JSON could not be parsed")


def _first_balanced(text: str) -> str | None:
    """First balanced {...} or [...] span, string- and escape-aware."""
    openers = {"{": "}", "[": "]"}
    start = None
    opener = ""
    depth = 0
    in_string = False
    escaped = False
    for i, ch in enumerate(text):
        if start is None:
            if ch in openers:
                start = i
                opener = ch
                depth = 1
            continue
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == opener:
            depth += 1
        elif ch == openers[opener]:
            depth -= 1
            if depth == 0:
                return text[start:i + 1]
    return None


def _complete_with_reprompt(prompt: str, chat, max_tokens: int, purpose: str) -> tuple[Any, str, list[str]]:
    """One call, one reprompt on parse failure; raises on the second failure."""
    raw = chat.complete(prompt, max_tokens, purpose=purpose)
    try:
        value, warnings = parse_model_json(raw)
        return value, raw, warnings
    except JsonRecoveryError:
        pass
    raw = chat.complete(prompt + prompts.REPROMPT_SUFFIX, max_tokens, purpose=purpose)
    value, warnings = parse_model_json(raw)  # may raise; caller decides the degrade
    return value, raw, warnings + ["reprompted after unparseable output"]


def _as_str(value: Any) -> str:
    return value.strip() if isinstance(value, str) else ""


def _parse_relations(payload: Any, warnings: list[str]) -> list[ExtractedRelation]:
    relations = []
    for item in payload if isinstance(payload, list) else []:
        if not isinstance(item, dict):
            warnings.append(f"dropped non-object relation entry: {item!r}")
            continue
        src, dst = _as_str(item.get("src")), _as_str(item.get("dst"))
        if not src or not dst:
            warnings.append("dropped relation with missing endpoint name")
            continue
        try:
            weight = float(item.get("weight", 1.0))
        except (TypeError, ValueError):
            weight = 1.0
        relations.append(ExtractedRelation(
            src=src,
            dst=dst,
            description=_as_str(item.get("description")),
            keywords=_as_str(item.get("keywords")),
            weight=max(weight, 0.0),
        ))
    return relations


def extract_entities(chunk: Chunk, chat, max_tokens: int) -> ExtractionResult:
    """Entity mentions for one chunk; duplicate names within the chunk merge."""
    if not chunk.text:
        raise ValueError("chunk text must be non-empty")
    prompt = prompts.entity_extraction_prompt(chunk.text)
    try:
        value, raw, warnings = _complete_with_reprompt(prompt, chat, max_tokens, "extraction")
    except JsonRecoveryError as exc:
        logger.warning("entity extraction for %s degraded to empty: %s", chunk.chunk_id, exc)
        return ExtractionResult(raw_response="", parse_warnings=[f"unparseable after reprompt: {exc}"])

    merged: dict[str, ExtractedEntity] = {}
    payload = value.get("entities") if isinstance(value, dict) else None
    for item in payload if isinstance(payload, list) else []:
        if not isinstance(item, dict):
            warnings.append(f"dropped non-object entity entry: {item!r}")
            continue
        name = _as_str(item.get("name"))
        description = _as_str(item.get("description"))
        if not name or not description:
            warnings.append("dropped entity with empty name or description")
            continue
        entity_type = _as_str(item.get("type") or item.get("entity_type")) or "unknown"
        key = normalize_name(name)
        if key in merged:
            existing = merged[key]
            if description not in existing.description:
                existing.description = f"{existing.description} {description}"
        else:
            merged[key] = ExtractedEntity(name=name, entity_type=entity_type, description=description)
    relations = _parse_relations(value.get("relations") if isinstance(value, dict) else None, warnings)
    return ExtractionResult(
        entities=list(merged.values()),
        relations=relations,
        raw_response=raw,
        parse_warnings=warnings,
    )


def extract_events(chunk: Chunk, chat, max_tokens: int) -> ExtractionResult:
    """Event mentions for one chunk; duplicate labels within the chunk merge."""
    if not chunk.text:
        raise ValueError("chunk text must be non-empty")
    prompt = prompts.event_extraction_prompt(chunk.text)
    try:
        value, raw, warnings = _complete_with_reprompt(prompt, chat, max_tokens, "extraction")
    except JsonRecoveryError as exc:
        logger.warning("event extraction for %s degraded to empty: %s", chunk.chunk_id, exc)
        return ExtractionResult(raw_response="", parse_warnings=[f"unparseable after reprompt: {exc}"])

    merged: dict[str, ExtractedEvent] = {}
    payload = value.get("events") if isinstance(value, dict) else None
    for item in payload if isinstance(payload, list) else []:
        if not isinstance(item, dict):
            warnings.append(f"dropped non-object event entry: {item!r}")
            continue
        name = _as_str(item.get("name"))
        description = _as_str(item.get("description"))
        if not name or not description:
            warnings.append("dropped event with empty name or description")
            continue
        key = normalize_name(name)
        if key in merged:
            existing = merged[key]
            if description not in existing.description:
                existing.description = f"{existing.description} {description}"
        else:
            merged[key] = ExtractedEvent(name=name, description=description)
    relations = _parse_relations(value.get("relations") if isinstance(value, dict) else None, warnings)
    return ExtractionResult(
        events=list(merged.values()),
        relations=relations,
        raw_response=raw,
        parse_warnings=warnings,
    )


def extract_query_cues(text: str, chat, max_tokens: int) -> CueSets:
    """Entity/event phrase sets for a query (or hypothetical response)."""
    if not text:
        raise ValueError("query text must be non-empty")
    prompt = prompts.query_cues_prompt(text)
    try:
        value, _, _ = _complete_with_reprompt(prompt, chat, max_tokens, "extraction")
    except JsonRecoveryError as exc:
        logger.warning("cue extraction degraded to empty cue sets: %s", exc)
        return CueSets()
    if not isinstance(value, dict):
        logger.warning("cue extraction returned non-object JSON; using empty cue sets")
        return CueSets()
    raw_entities = value.get("entities")
    raw_events = value.get("events")
    entities = [p for p in raw_entities if isinstance(p, str)] if isinstance(raw_entities, list) else []
    events = [p for p in raw_events if isinstance(p, str)] if isinstance(raw_events, list) else []
    return CueSets(entity_phrases=entities, event_phrases=events)
