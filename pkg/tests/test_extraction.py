"""Extraction: JSON recovery, chunk passes, query cues, reprompt behavior."""

from __future__ import annotations

import json

import pytest

from e2rag.chunker import ChunkerConfig, chunk_document
from e2rag.extraction import (
    JsonRecoveryError,
    extract_entities,
    extract_events,
    extract_query_cues,
    parse_model_json,
)
from e2rag.model import CueSets


def _chunk(text, doc_id="doc"):
    chunks = chunk_document(doc_id, text, ChunkerConfig(chunk_size_tokens=512, overlap_tokens=0))
    assert len(chunks) == 1
    return chunks[0]


class TestParseModelJson:
    def test_fenced_json(self):
        value, warnings = parse_model_json('```json {"entities":[]} ```')
        assert value == {"entities": []}
        assert "stripped code fences" in warnings

    def test_balanced_scan_with_noise(self):
        value, _ = parse_model_json('prefix {"a":1} suffix')
        assert value == {"a": 1}

    def test_trailing_comma_with_warning(self):
        value, warnings = parse_model_json('{"a":1,}')
        assert value == {"a": 1}
        assert "removed trailing commas" in warnings

    def test_smart_quotes(self):
        value, warnings = parse_model_json('{“a”: 1}')
        assert value == {"a": 1}
        assert "normalized smart quotes" in warnings

    def test_array_payload(self):
        value, _ = parse_model_json('noise [1, 2, 3] more noise')
        assert value == [1, 2, 3]

    def test_braces_inside_strings(self):
        value, _ = parse_model_json('x {"a": "}{", "b": 2} y')
        assert value == {"a": "}{", "b": 2}

    def test_unrecoverable_raises(self):
        with pytest.raises(JsonRecoveryError):
            parse_model_json("no json here at all")

    def test_empty_raises(self):
        with pytest.raises(JsonRecoveryError):
            parse_model_json("")


class TestExtractEntities:
    def test_mock_rule_over_capitalized_tokens(self, mock_chat):
        result = extract_entities(_chunk("Hermione scolds Ron."), mock_chat, 512)
        names = [e.name for e in result.entities]
        assert names == ["Hermione", "Ron"]
        hermione = result.entities[0]
        assert "scolds" in hermione.description
        assert result.relations and result.relations[0].src == "Hermione"

    def test_no_capitalized_tokens_empty_no_error(self, mock_chat):
        result = extract_entities(_chunk("the rain fell on the quiet harbor"), mock_chat, 512)
        assert result.entities == []
        assert result.parse_warnings == []

    def test_descriptions_are_chunk_specific(self, mock_chat):
        first = extract_entities(_chunk("Hermione scolds Ron for casting Lumos."), mock_chat, 512)
        second = extract_entities(_chunk("Hermione brews an illicit potion quietly."), mock_chat, 512)
        d1 = next(e.description for e in first.entities if e.name == "Hermione")
        d2 = next(e.description for e in second.entities if e.name == "Hermione")
        assert d1 != d2
        assert "scolds" in d1 and "brews" in d2

    def test_duplicate_names_merge_with_concatenated_descriptions(self, ledger):
        from e2rag.backends import MockChatBackend

        raw = json.dumps({
            "entities": [
                {"name": "Hermione", "type": "person", "description": "first facet."},
                {"name": '"HERMIONE"', "type": "person", "description": "second facet."},
            ],
            "relations": [],
        })
        chunk = _chunk("placeholder text")
        from e2rag import prompts
        chat = MockChatBackend(ledger, canned={prompts.entity_extraction_prompt(chunk.text): raw})
        result = extract_entities(chunk, chat, 512)
        assert len(result.entities) == 1
        merged = result.entities[0]
        assert "first facet." in merged.description and "second facet." in merged.description

    def test_empty_chunk_precondition(self, mock_chat):
        from e2rag.model import Chunk
        empty = Chunk(chunk_id="c", doc_id="d", text="", token_count=0,
                      byte_start=0, byte_end=0, ordinal=0)
        with pytest.raises(ValueError):
            extract_entities(empty, mock_chat, 512)

    def test_unparseable_after_reprompt_degrades_to_empty(self, ledger):
        class GarbageChat:
            def __init__(self):
                self.calls = 0
            def complete(self, prompt, max_tokens, purpose="answer"):
                self.calls += 1
                ledger.add(purpose, 1, 1)
                return "still not json"
        chat = GarbageChat()
        result = extract_entities(_chunk("Hermione scolds Ron."), chat, 512)
        assert chat.calls == 2  # one reprompt, then degrade
        assert result.entities == []
        assert result.parse_warnings and "unparseable" in result.parse_warnings[0]


class TestExtractEvents:
    def test_event_description_names_participant(self, mock_chat):
        result = extract_events(
            _chunk("Holmes elaborates on his strategy to catch the assassin."), mock_chat, 512)
        assert len(result.events) == 1
        assert "Holmes" in result.events[0].description

    def test_verbless_chunk_empty(self, mock_chat):
        result = extract_events(_chunk("Calder Point. A quiet harbor."), mock_chat, 512)
        assert result.events == []

    def test_deterministic(self, mock_chat):
        chunk = _chunk("Mira relit the lamp. Tomas followed the light.")
        first = extract_events(chunk, mock_chat, 512)
        second = extract_events(chunk, mock_chat, 512)
        assert [e.description for e in first.events] == [e.description for e in second.events]


class TestExtractQueryCues:
    def test_worked_example_one(self, mock_chat):
        cues = extract_query_cues(
            "How did Napoleon's invasion of Russia affect his empire's strength?", mock_chat, 512)
        assert cues.entity_phrases == ["Napoleon", "Russia", "Napoleon's empire"]
        assert cues.event_phrases == ["invasion of Russia", "empire's decline"]

    def test_worked_example_two(self, mock_chat):
        cues = extract_query_cues(
            "What role did MIT scientists play in the Manhattan Project?", mock_chat, 512)
        assert cues.entity_phrases == ["MIT", "MIT scientists", "Manhattan Project"]
        assert cues.event_phrases == ["scientific research", "atomic bomb development"]

    def test_empty_query_precondition(self, mock_chat):
        with pytest.raises(ValueError):
            extract_query_cues("", mock_chat, 512)

    def test_malformed_output_degrades_to_empty_cues(self, ledger):
        class GarbageChat:
            def complete(self, prompt, max_tokens, purpose="answer"):
                ledger.add(purpose, 1, 1)
                return "not json"
        cues = extract_query_cues("any question", GarbageChat(), 512)
        assert isinstance(cues, CueSets)
        assert cues.empty


class TestCallAccounting:
    def test_two_chat_calls_per_chunk(self, ledger, mock_chat):
        """Both passes for one chunk: exactly two extraction-stage calls."""
        chunk = _chunk("Hermione scolds Ron. Ron grumbles about rules.")
        extract_entities(chunk, mock_chat, 512)
        extract_events(chunk, mock_chat, 512)
        assert ledger.calls("extraction") == 2

    def test_chunk_extraction_is_order_invariant(self, mock_chat):
        """Extraction of one chunk never reads another chunk."""
        a = _chunk("Hermione scolds Ron.", doc_id="d1")
        b = _chunk("Tomas repairs the pier.", doc_id="d2")
        forward = (extract_entities(a, mock_chat, 512).entities,
                   extract_entities(b, mock_chat, 512).entities)
        backward = (extract_entities(b, mock_chat, 512).entities,
                    extract_entities(a, mock_chat, 512).entities)
        assert [e.name for e in forward[0]] == [e.name for e in backward[1]]
        assert [e.name for e in forward[1]] == [e.name for e in backward[0]]
