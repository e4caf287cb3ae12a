"""Entity-event dual-graph retrieval engine.

Builds a knowledge graph of un-deduplicated entity mentions and events
linked by a bipartite mapping, retrieves over it with optional
hypothetical-response coupling, and ships a narrative QA evaluation harness.
"""

from .backends import (
    BackendConfig,
    BackendUnavailableError,
    EmbeddingVector,
    LiveChatBackend,
    LiveEmbeddingBackend,
    MockChatBackend,
    MockEmbeddingBackend,
    TokenLedger,
    cosine,
    mock_embed,
)
from .chunker import ChunkerConfig, chunk_document
from .chronoqa import (
    JudgeScore,
    QARecord,
    ScoreTable,
    load_dataset,
    run_benchmark,
    score_aggregate,
    validate_offsets,
)
from .extraction import (
    ExtractionResult,
    extract_entities,
    extract_events,
    extract_query_cues,
    parse_model_json,
)
from .indexer import (
    IndexBuilder,
    IndexBundle,
    VectorIndex,
    build_bipartite,
    canonical_text,
    intra_chunk_edges,
    load_bundle,
    save_bundle,
)
from .model import (
    BipartiteEdge,
    Chunk,
    ContextBundle,
    CueSets,
    DualGraph,
    EntityNode,
    EventNode,
    RelationEdge,
    RetrievalMode,
    normalize_name,
)
from .retrieval import (
    EmptyCorpusError,
    QueryContext,
    RetrievalEngine,
    assemble_context,
    generate_hypothetical,
    one_hop_expand,
    rank_candidates,
    retrieval_embeddings,
    seed_lookup,
)

__version__ = "0.1.0"

__all__ = [
    "BackendConfig",
    "BackendUnavailableError",
    "BipartiteEdge",
    "Chunk",
    "ChunkerConfig",
    "ContextBundle",
    "CueSets",
    "DualGraph",
    "EmbeddingVector",
    "EmptyCorpusError",
    "EntityNode",
    "EventNode",
    "ExtractionResult",
    "IndexBuilder",
    "IndexBundle",
    "JudgeScore",
    "LiveChatBackend",
    "LiveEmbeddingBackend",
    "MockChatBackend",
    "MockEmbeddingBackend",
    "QARecord",
    "QueryContext",
    "RelationEdge",
    "RetrievalEngine",
    "RetrievalMode",
    "ScoreTable",
    "TokenLedger",
    "VectorIndex",
    "assemble_context",
    "build_bipartite",
    "canonical_text",
    "chunk_document",
    "cosine",
    "extract_entities",
    "extract_events",
    "extract_query_cues",
    "generate_hypothetical",
    "intra_chunk_edges",
    "load_bundle",
    "load_dataset",
    "mock_embed",
    "normalize_name",
    "one_hop_expand",
    "parse_model_json",
    "rank_candidates",
    "retrieval_embeddings",
    "run_benchmark",
    "save_bundle",
    "score_aggregate",
    "seed_lookup",
    "validate_offsets",
]
