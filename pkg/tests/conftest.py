"""Shared fixtures: mock backends, small chunker configs, bundle factory."""

from __future__ import annotations

import pytest

from e2rag.backends import (
    MockChatBackend,
    MockEmbeddingBackend,
    TokenLedger,
    cue_example_canned_responses,
)
from e2rag.chunker import ChunkerConfig
from e2rag.indexer import IndexBuilder, IndexBundle, VectorIndex, config_hash
from e2rag.backends import BackendConfig
from e2rag.model import (
    BipartiteEdge,
    Chunk,
    DualGraph,
    EntityNode,
    EventNode,
    RelationEdge,
    make_chunk_id,
)


def pytest_runtest_logreport(report):
    """One PASS/FAIL/SKIP line per acceptance criterion."""
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.skipped:
        print(f"\n[ACCEPTANCE] SKIP: {name}")
    elif report.when == "call":
        outcome = "PASS" if report.passed else "FAIL"
        print(f"\n[ACCEPTANCE] {outcome}: {name}")


@pytest.fixture
def ledger():
    return TokenLedger()


@pytest.fixture
def mock_chat(ledger):
    return MockChatBackend(ledger, canned=cue_example_canned_responses())


@pytest.fixture
def mock_embedder(ledger):
    return MockEmbeddingBackend(ledger, dim=16)


@pytest.fixture
def small_chunker_cfg():
    return ChunkerConfig(chunk_size_tokens=64, overlap_tokens=8)


@pytest.fixture
def builder(mock_chat, mock_embedder, small_chunker_cfg):
    return IndexBuilder(mock_chat, mock_embedder, chunker_cfg=small_chunker_cfg)


# Three-part story sized so ChunkerConfig(48, 8) yields exactly three chunks,
# each containing one distinct Hermione sentence (verified by tests).
HERMIONE_STORY = (
    "Hermione scolds Ron for casting Lumos in the corridor after curfew. "
    "She reminds every first-year that rules keep the castle safe from harm. "
    "Ron grumbles quietly and puts his wand away before the prefects arrive. "
    "During the troll panic, Hermione shields Neville behind a broken pillar. "
    "She shouts directions until the teachers storm into the dungeon hall. "
    "The rescue leaves the three students breathless beside the shattered sinks. "
    "Weeks later, Hermione brews an illicit potion to protect the Stone. "
    "She slips past the teachers at night and never mentions the rules once."
)
HERMIONE_CFG = ChunkerConfig(chunk_size_tokens=48, overlap_tokens=8)


@pytest.fixture
def hermione_story():
    return HERMIONE_STORY, HERMIONE_CFG


class BundleFactory:
    """Assemble small in-memory bundles without running extraction."""

    def __init__(self, dim: int = 4):
        self.dim = dim
        self.graph = DualGraph.empty()
        self.chunks: dict[str, Chunk] = {}
        self.entity_index = VectorIndex("entity", dim)
        self.event_index = VectorIndex("event", dim)
        self._ordinal = 0

    def add_chunk(self, text: str = "fixture chunk", doc_id: str = "doc") -> str:
        ordinal = self._ordinal
        self._ordinal += 1
        chunk_id = make_chunk_id(doc_id, ordinal * 100, ordinal * 100 + len(text), text)
        self.chunks[chunk_id] = Chunk(
            chunk_id=chunk_id, doc_id=doc_id, text=text, token_count=len(text.split()),
            byte_start=ordinal * 100, byte_end=ordinal * 100 + len(text), ordinal=ordinal,
        )
        return chunk_id

    def add_entity(self, name: str, chunk_id: str, vector, description: str | None = None,
                   node_id: str | None = None) -> str:
        nid = node_id or f"{name.casefold()}__{chunk_id}"
        self.graph.entities[nid] = EntityNode(
            node_id=nid, name=name, entity_type="person",
            description=description or f"{name} appears here", source_chunk=chunk_id,
        )
        self.entity_index.add(nid, vector)
        return nid

    def add_event(self, name: str, chunk_id: str, vector, description: str | None = None,
                  node_id: str | None = None) -> str:
        nid = node_id or f"evt-{name.casefold().replace(' ', '-')}__{chunk_id}"
        self.graph.events[nid] = EventNode(
            node_id=nid, name=name,
            description=description or f"{name} happens here", source_chunk=chunk_id,
        )
        self.event_index.add(nid, vector)
        return nid

    def link(self, entity_id: str, event_id: str) -> None:
        self.graph.bipartite.append(BipartiteEdge(entity=entity_id, event=event_id))

    def relate(self, src: str, dst: str, kind: str, description: str = "rel") -> None:
        edge = RelationEdge(src=src, dst=dst, kind=kind, description=description,
                            keywords="", weight=1.0,
                            source_chunk=self.graph.entities.get(src, self.graph.events.get(src)).source_chunk)
        if kind == "entity_relation":
            self.graph.entity_edges.append(edge)
        else:
            self.graph.event_edges.append(edge)

    def bundle(self) -> IndexBundle:
        manifest = {
            "schema_version": 1,
            "config_hash": config_hash(ChunkerConfig(), BackendConfig(), self.dim),
            "dim": self.dim,
            "doc_ids": sorted({c.doc_id for c in self.chunks.values()}),
            "counts": {**self.graph.counts(), "chunks": len(self.chunks)},
            "created_at": "",
            "warnings": [],
        }
        return IndexBundle(
            graph=self.graph, entity_index=self.entity_index,
            event_index=self.event_index, chunks=self.chunks, manifest=manifest,
        )


@pytest.fixture
def bundle_factory():
    return BundleFactory


class CapturingChat:
    """Wraps a chat backend, recording every (purpose, prompt) pair."""

    def __init__(self, inner):
        self.inner = inner
        self.calls: list[dict] = []

    def complete(self, prompt, max_tokens, purpose="answer"):
        self.calls.append({"purpose": purpose, "prompt": prompt})
        return self.inner.complete(prompt, max_tokens, purpose=purpose)

    def purposes(self):
        return [c["purpose"] for c in self.calls]


class CapturingEmbedder:
    """Wraps an embedder, recording every list of texts embedded."""

    def __init__(self, inner):
        self.inner = inner
        self.batches: list[list[str]] = []

    @property
    def dim(self):
        return self.inner.dim

    def embed(self, texts, purpose="embedding"):
        self.batches.append(list(texts))
        return self.inner.embed(texts, purpose=purpose)

    def all_texts(self):
        return [t for batch in self.batches for t in batch]


@pytest.fixture
def capturing_chat(mock_chat):
    return CapturingChat(mock_chat)


@pytest.fixture
def capturing_embedder(mock_embedder):
    return CapturingEmbedder(mock_embedder)
