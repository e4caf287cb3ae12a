"""Shared domain types for the entity-event dual graph.

Entity and event nodes are per-mention: two mentions of the same name in
different chunks are distinct nodes, each carrying its own chunk-specific
description. The bipartite edge set links entity mentions to the same-chunk
events whose descriptions contain the entity's name.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional


class GraphIntegrityError(ValueError):
    """Raised when a DualGraph violates one of its structural invariants."""


def normalize_name(raw: str) -> str:
    """Strip surrounding double quotes and whitespace, then casefold.

    Extractor output carries quoting and casing artifacts (e.g. '"HOLMES"')
    that would otherwise break substring matching. Quote/whitespace layers
    are peeled to a fixpoint so the function is idempotent.
    """
    s = raw
    while True:
        t = s.strip().strip('"')
        if t == s:
            break
        s = t
    return s.casefold()


def name_in_description(name: str, description: str) -> bool:
    """Case-insensitive substring containment of a normalized name.

    Empty normalized names never match: '' is a substring of everything,
    which would link every event to a degenerate entity.
    """
    needle = normalize_name(name)
    return bool(needle) and needle in description.casefold()


def make_chunk_id(doc_id: str, byte_start: int, byte_end: int, text: str) -> str:
    payload = f"{doc_id}\x00{byte_start}\x00{byte_end}\x00{text}"
    return "chunk-" + hashlib.sha256(payload.encode("utf-8")).hexdigest()[:32]


def entity_node_id(name: str, chunk_id: str) -> str:
    return f"{normalize_name(name)}__{chunk_id}"


def event_node_id(label: str, chunk_id: str) -> str:
    digest = hashlib.sha256(normalize_name(label).encode("utf-8")).hexdigest()[:12]
    return f"{digest}__{chunk_id}"


@dataclass(frozen=True)
class Chunk:
    """A contiguous span of a source document; the unit of extraction and retrieval."""

    chunk_id: str
    doc_id: str
    text: str
    token_count: int
    byte_start: int
    byte_end: int
    ordinal: int


@dataclass(frozen=True)
class EntityNode:
    """One entity mention. Never merged with mentions from other chunks."""

    node_id: str
    name: str
    entity_type: str
    description: str
    source_chunk: str
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EventNode:
    """One event mention with a one-sentence description."""

    node_id: str
    name: str
    description: str
    source_chunk: str
    metadata: dict = field(default_factory=dict)


ENTITY_RELATION = "entity_relation"
EVENT_RELATION = "event_relation"


@dataclass(frozen=True)
class RelationEdge:
    """Intra-chunk co-mention edge between two nodes of the same subgraph."""

    src: str
    dst: str
    kind: str  # entity_relation | event_relation
    description: str
    keywords: str
    weight: float
    source_chunk: str


@dataclass(frozen=True)
class BipartiteEdge:
    """Entity-mention to event link; both nodes share a source chunk."""

    entity: str
    event: str


class RetrievalMode(str, Enum):
    VANILLA = "vanilla"
    COMB_EXTRACTION = "comb_extraction"
    HYP_EXTRACTION = "hyp_extraction"
    COMB_EMBEDDING = "comb_embedding"
    HYP_EMBEDDING = "hyp_embedding"

    @property
    def needs_hypothetical(self) -> bool:
        return self is not RetrievalMode.VANILLA

    @property
    def uses_extractor(self) -> bool:
        return self in (
            RetrievalMode.VANILLA,
            RetrievalMode.COMB_EXTRACTION,
            RetrievalMode.HYP_EXTRACTION,
        )

    @classmethod
    def parse(cls, value: str) -> "RetrievalMode":
        try:
            return cls(value)
        except ValueError:
            known = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown retrieval mode {value!r} (known: {known})") from None


@dataclass
class CueSets:
    """Entity and event phrase lists extracted from a query or hypothetical."""

    entity_phrases: list[str] = field(default_factory=list)
    event_phrases: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.entity_phrases = [p.strip() for p in self.entity_phrases if p and p.strip()]
        self.event_phrases = [p.strip() for p in self.event_phrases if p and p.strip()]

    @property
    def empty(self) -> bool:
        return not self.entity_phrases and not self.event_phrases


@dataclass
class DualGraph:
    """Entity subgraph, event subgraph, and the bipartite mapping between them."""

    entities: dict[str, EntityNode] = field(default_factory=dict)
    events: dict[str, EventNode] = field(default_factory=dict)
    entity_edges: list[RelationEdge] = field(default_factory=list)
    event_edges: list[RelationEdge] = field(default_factory=list)
    bipartite: list[BipartiteEdge] = field(default_factory=list)

    @classmethod
    def empty(cls) -> "DualGraph":
        return cls()

    def node_kind(self, node_id: str) -> Optional[str]:
        if node_id in self.entities:
            return "entity"
        if node_id in self.events:
            return "event"
        return None

    def bipartite_adjacency(self) -> tuple[dict[str, list[str]], dict[str, list[str]]]:
        """Adjacency maps (entity -> events, event -> entities) over B."""
        ent2evt: dict[str, list[str]] = {}
        evt2ent: dict[str, list[str]] = {}
        for edge in self.bipartite:
            ent2evt.setdefault(edge.entity, []).append(edge.event)
            evt2ent.setdefault(edge.event, []).append(edge.entity)
        return ent2evt, evt2ent

    def counts(self) -> dict[str, int]:
        return {
            "entities": len(self.entities),
            "events": len(self.events),
            "entity_edges": len(self.entity_edges),
            "event_edges": len(self.event_edges),
            "bipartite": len(self.bipartite),
        }

    def validate(self) -> None:
        """Assert structural invariants; raises GraphIntegrityError on violation."""
        for node in self.entities.values():
            if not node.description:
                raise GraphIntegrityError(f"entity {node.node_id} has empty description")
            if not normalize_name(node.name):
                raise GraphIntegrityError(f"entity {node.node_id} has empty name")
        for node in self.events.values():
            if not node.description:
                raise GraphIntegrityError(f"event {node.node_id} has empty description")
        for edge in self.entity_edges:
            self._check_relation(edge, ENTITY_RELATION, self.entities)
        for edge in self.event_edges:
            self._check_relation(edge, EVENT_RELATION, self.events)
        for edge in self.bipartite:
            ent = self.entities.get(edge.entity)
            evt = self.events.get(edge.event)
            if ent is None or evt is None:
                raise GraphIntegrityError(f"bipartite edge {edge} has a dangling endpoint")
            if ent.source_chunk != evt.source_chunk:
                raise GraphIntegrityError(f"bipartite edge {edge} crosses chunks")
            if not name_in_description(ent.name, evt.description):
                raise GraphIntegrityError(
                    f"bipartite edge {edge}: name {ent.name!r} not in event description"
                )

    @staticmethod
    def _check_relation(edge: RelationEdge, kind: str, nodes: dict) -> None:
        if edge.kind != kind:
            raise GraphIntegrityError(f"edge {edge.src}->{edge.dst} has kind {edge.kind}, expected {kind}")
        if edge.src == edge.dst:
            raise GraphIntegrityError(f"self-loop on {edge.src}")
        if edge.src not in nodes or edge.dst not in nodes:
            raise GraphIntegrityError(f"edge {edge.src}->{edge.dst} has a dangling endpoint")
        if edge.weight < 0:
            raise GraphIntegrityError(f"edge {edge.src}->{edge.dst} has negative weight")


@dataclass(frozen=True)
class PassageRecord:
    chunk_id: str
    text: str
    score: float


@dataclass
class ContextBundle:
    """Assembled generation input: passages, subgraph dump, metadata, and trace."""

    passages: list[PassageRecord] = field(default_factory=list)
    subgraph_dump: str = ""
    node_metadata: list[dict] = field(default_factory=list)
    edge_metadata: list[dict] = field(default_factory=list)
    trace: dict = field(default_factory=dict)
