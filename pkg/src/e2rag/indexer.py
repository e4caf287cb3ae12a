"""Document insertion and index persistence.

Insertion chunks a document, runs both extraction passes per chunk, builds
the per-mention node sets, intra-chunk relation edges and the bipartite
mapping, and embeds every node's canonical text into twin vector indices.
Builds are atomic at the manifest level: everything happens in memory and
nothing is persisted until save_bundle.

Persistence layout (all little-endian, UTF-8):
    manifest.json           doc ids, config hash, counts, timestamps, warnings
    chunks.jsonl            one chunk per line, sorted by (doc_id, ordinal)
    nodes_entities.jsonl    one node per line, sorted by node_id
    nodes_events.jsonl      one node per line, sorted by node_id
    edges.jsonl             relation edges, sorted
    bipartite.jsonl         bipartite edges, sorted
    vectors_entities.bin    header {magic, version, dim, count} + float32 rows
    vectors_events.bin      rows follow the sorted node_id order of the jsonl
    checksums.txt           sha256 of every data file (manifest excluded: it
                            carries a timestamp and must not break build
                            reproducibility checks)
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .backends import BackendConfig, EmbeddingVector
from .chunker import ChunkerConfig, chunk_document
from .extraction import ExtractionResult, extract_entities, extract_events
from .model import (
    ENTITY_RELATION,
    EVENT_RELATION,
    BipartiteEdge,
    Chunk,
    DualGraph,
    EntityNode,
    EventNode,
    RelationEdge,
    entity_node_id,
    event_node_id,
    name_in_description,
    normalize_name,
)
from .prompts import PROMPT_VERSION
from .tokens import count_tokens, truncate_to_tokens

SCHEMA_VERSION = 1
_VECTOR_MAGIC = b"E2RV"

MANIFEST_FILE = "manifest.json"
CHUNKS_FILE = "chunks.jsonl"
ENTITY_NODES_FILE = "nodes_entities.jsonl"
EVENT_NODES_FILE = "nodes_events.jsonl"
EDGES_FILE = "edges.jsonl"
BIPARTITE_FILE = "bipartite.jsonl"
ENTITY_VECTORS_FILE = "vectors_entities.bin"
EVENT_VECTORS_FILE = "vectors_events.bin"
CHECKSUMS_FILE = "checksums.txt"
DATA_FILES = (
    CHUNKS_FILE,
    ENTITY_NODES_FILE,
    EVENT_NODES_FILE,
    EDGES_FILE,
    BIPARTITE_FILE,
    ENTITY_VECTORS_FILE,
    EVENT_VECTORS_FILE,
)

EXTRACTION_ORDERS = ("entity_first", "event_first", "interleaved")


class DuplicateDocumentError(RuntimeError):
    """Document id already present in the manifest and re-ingest not requested."""


class ConfigMismatchError(RuntimeError):
    """Bundle built under a different configuration; refusing to merge."""


class BundleLoadError(RuntimeError):
    """Persisted bundle is missing, corrupt, or from an unknown version."""


class VectorIndex:
    """Exact-similarity store mapping node id to a float32 embedding.

    Vectors are quantized to float32 on insert so a save/load round trip is
    bit-exact and pre/post-save rankings are identical.
    """

    def __init__(self, kind: str, dim: int) -> None:
        if kind not in ("entity", "event"):
            raise ValueError(f"unknown index kind {kind!r}")
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.kind = kind
        self.dim = dim
        self._entries: dict[str, np.ndarray] = {}

    def add(self, node_id: str, vector: EmbeddingVector | Sequence[float]) -> None:
        values = vector.values if isinstance(vector, EmbeddingVector) else tuple(vector)
        if len(values) != self.dim:
            raise ValueError(f"vector dim {len(values)} != index dim {self.dim}")
        self._entries[node_id] = np.asarray(values, dtype=np.float32)

    def get(self, node_id: str) -> np.ndarray:
        return self._entries[node_id]

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._entries

    def node_ids(self) -> list[str]:
        return list(self._entries)

    def scores(self, query: EmbeddingVector | Sequence[float]) -> dict[str, float]:
        """Cosine of the query against every entry, computed in float64."""
        values = query.values if isinstance(query, EmbeddingVector) else tuple(query)
        q = np.asarray(values, dtype=np.float64)
        qn = float(np.linalg.norm(q))
        out: dict[str, float] = {}
        for node_id, vec in self._entries.items():
            v = vec.astype(np.float64)
            vn = float(np.linalg.norm(v))
            if qn == 0.0 or vn == 0.0:
                out[node_id] = 0.0
            else:
                out[node_id] = float(np.dot(q, v) / (qn * vn))
        return out


@dataclass
class IndexBundle:
    """A dual graph plus its twin vector indices, chunk store, and manifest."""

    graph: DualGraph
    entity_index: VectorIndex
    event_index: VectorIndex
    chunks: dict[str, Chunk] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.graph.entities and not self.graph.events

    def chunk_ordinal(self, chunk_id: str) -> int:
        chunk = self.chunks.get(chunk_id)
        return chunk.ordinal if chunk else 0

    def node_source_chunk(self, node_id: str) -> str:
        node = self.graph.entities.get(node_id) or self.graph.events.get(node_id)
        if node is None:
            raise KeyError(node_id)
        return node.source_chunk

    def validate(self) -> None:
        self.graph.validate()
        ent_ids = set(self.entity_index.node_ids())
        evt_ids = set(self.event_index.node_ids())
        if ent_ids != set(self.graph.entities):
            raise BundleLoadError("entity index and entity node set disagree")
        if evt_ids != set(self.graph.events):
            raise BundleLoadError("event index and event node set disagree")
        for node in list(self.graph.entities.values()) + list(self.graph.events.values()):
            if node.source_chunk not in self.chunks:
                raise BundleLoadError(f"node {node.node_id} references missing chunk")


def config_hash(chunker_cfg: ChunkerConfig, backend_cfg: BackendConfig, dim: int) -> str:
    payload = json.dumps(
        {
            "schema": SCHEMA_VERSION,
            "prompts": PROMPT_VERSION,
            "chunk_size_tokens": chunker_cfg.chunk_size_tokens,
            "overlap_tokens": chunker_cfg.overlap_tokens,
            "tokenizer": chunker_cfg.tokenizer,
            "embedding_model": backend_cfg.embedding_model,
            "dim": dim,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def canonical_text(node: EntityNode | EventNode) -> str:
    """Text embedded for a node: byte-exact name/description concatenation."""
    return f"{node.name}: {node.description}"


def build_bipartite(entities: Iterable[EntityNode], events: Iterable[EventNode]) -> list[BipartiteEdge]:
    """Link every entity mention to same-chunk events whose description names it."""
    events_by_chunk: dict[str, list[EventNode]] = {}
    for event in events:
        events_by_chunk.setdefault(event.source_chunk, []).append(event)
    edges: list[BipartiteEdge] = []
    for entity in entities:
        for event in events_by_chunk.get(entity.source_chunk, ()):
            if name_in_description(entity.name, event.description):
                edges.append(BipartiteEdge(entity=entity.node_id, event=event.node_id))
    return edges


def intra_chunk_edges(
    chunk_id: str,
    kind: str,
    nodes: Sequence[EntityNode] | Sequence[EventNode],
    relations: Iterable,
) -> tuple[list[RelationEdge], list[str]]:
    """Relation edges between this chunk's mention nodes.

    Relations naming an unextracted node (or a self-loop) are dropped with a
    warning; edges never cross chunks by construction.
    """
    by_name = {normalize_name(n.name): n.node_id for n in nodes}
    edges: list[RelationEdge] = []
    warnings: list[str] = []
    for rel in relations:
        src = by_name.get(normalize_name(rel.src))
        dst = by_name.get(normalize_name(rel.dst))
        if src is None or dst is None:
            warnings.append(f"{chunk_id}: dropped relation {rel.src!r}->{rel.dst!r} (unknown endpoint)")
            continue
        if src == dst:
            warnings.append(f"{chunk_id}: dropped self-relation on {rel.src!r}")
            continue
        edges.append(RelationEdge(
            src=src,
            dst=dst,
            kind=kind,
            description=rel.description,
            keywords=rel.keywords,
            weight=rel.weight,
            source_chunk=chunk_id,
        ))
    return edges, warnings


def _empty_bundle(chunker_cfg: ChunkerConfig, backend_cfg: BackendConfig, dim: int) -> IndexBundle:
    return IndexBundle(
        graph=DualGraph.empty(),
        entity_index=VectorIndex("entity", dim),
        event_index=VectorIndex("event", dim),
        chunks={},
        manifest={
            "schema_version": SCHEMA_VERSION,
            "config_hash": config_hash(chunker_cfg, backend_cfg, dim),
            "dim": dim,
            "doc_ids": [],
            "counts": {},
            "created_at": "",
            "warnings": [],
        },
    )


class IndexBuilder:
    """Runs document insertion against a chat extractor and an embedder."""

    def __init__(
        self,
        chat,
        embedder,
        chunker_cfg: Optional[ChunkerConfig] = None,
        backend_cfg: Optional[BackendConfig] = None,
        max_workers: int = 4,
        clock=time.time,
    ) -> None:
        self.chat = chat
        self.embedder = embedder
        self.chunker_cfg = chunker_cfg or ChunkerConfig()
        self.backend_cfg = backend_cfg or BackendConfig()
        self.max_workers = max(1, max_workers)
        self.clock = clock

    @property
    def dim(self) -> int:
        return getattr(self.embedder, "dim", self.backend_cfg.embedding_dim)

    def new_bundle(self) -> IndexBundle:
        return _empty_bundle(self.chunker_cfg, self.backend_cfg, self.dim)

    def insert_document(
        self,
        doc_id: str,
        text: str,
        bundle: Optional[IndexBundle] = None,
        re_ingest: bool = False,
        extraction_order: str = "entity_first",
    ) -> IndexBundle:
        """Insert one document, returning a new merged bundle.

        The input bundle is never mutated; a failed build leaves nothing
        behind. Re-inserting a known doc_id requires re_ingest=True, which
        first drops the document's previous artifacts.
        """
        if extraction_order not in EXTRACTION_ORDERS:
            raise ValueError(f"extraction_order must be one of {EXTRACTION_ORDERS}")
        base = bundle if bundle is not None else self.new_bundle()
        expected_hash = config_hash(self.chunker_cfg, self.backend_cfg, self.dim)
        if base.manifest.get("config_hash") != expected_hash:
            raise ConfigMismatchError(
                f"bundle config hash {base.manifest.get('config_hash')!r} != current {expected_hash!r}"
            )
        if doc_id in base.manifest.get("doc_ids", []):
            if not re_ingest:
                raise DuplicateDocumentError(f"document {doc_id!r} already ingested")
            base = _drop_document(base, doc_id)

        chunks = chunk_document(doc_id, text, self.chunker_cfg)
        warnings: list[str] = []
        if not chunks:
            warnings.append(f"document {doc_id!r} produced no chunks")

        ent_results, evt_results = self._run_extractions(chunks, extraction_order)

        new_entities: list[EntityNode] = []
        new_events: list[EventNode] = []
        new_edges: list[RelationEdge] = []
        for chunk in chunks:  # merge deterministically by ordinal
            ent_res = ent_results[chunk.chunk_id]
            evt_res = evt_results[chunk.chunk_id]
            warnings.extend(f"{chunk.chunk_id}: {w}" for w in ent_res.parse_warnings)
            warnings.extend(f"{chunk.chunk_id}: {w}" for w in evt_res.parse_warnings)
            chunk_entities = [
                EntityNode(
                    node_id=entity_node_id(e.name, chunk.chunk_id),
                    name=e.name,
                    entity_type=e.entity_type,
                    description=e.description,
                    source_chunk=chunk.chunk_id,
                )
                for e in ent_res.entities
            ]
            chunk_events = [
                EventNode(
                    node_id=event_node_id(e.name, chunk.chunk_id),
                    name=e.name,
                    description=e.description,
                    source_chunk=chunk.chunk_id,
                )
                for e in evt_res.events
            ]
            ent_edges, ent_warn = intra_chunk_edges(
                chunk.chunk_id, ENTITY_RELATION, chunk_entities, ent_res.relations)
            evt_edges, evt_warn = intra_chunk_edges(
                chunk.chunk_id, EVENT_RELATION, chunk_events, evt_res.relations)
            warnings.extend(ent_warn + evt_warn)
            new_entities.extend(chunk_entities)
            new_events.extend(chunk_events)
            new_edges.extend(ent_edges + evt_edges)

        bipartite = build_bipartite(new_entities, new_events)

        merged = IndexBundle(
            graph=DualGraph(
                entities=dict(base.graph.entities),
                events=dict(base.graph.events),
                entity_edges=list(base.graph.entity_edges),
                event_edges=list(base.graph.event_edges),
                bipartite=list(base.graph.bipartite),
            ),
            entity_index=_copy_index(base.entity_index),
            event_index=_copy_index(base.event_index),
            chunks=dict(base.chunks),
            manifest=json.loads(json.dumps(base.manifest)),
        )
        for chunk in chunks:
            merged.chunks[chunk.chunk_id] = chunk
        for node in new_entities:
            merged.graph.entities[node.node_id] = node
        for node in new_events:
            merged.graph.events[node.node_id] = node
        merged.graph.entity_edges.extend(e for e in new_edges if e.kind == ENTITY_RELATION)
        merged.graph.event_edges.extend(e for e in new_edges if e.kind == EVENT_RELATION)
        merged.graph.bipartite.extend(bipartite)

        warnings.extend(self._embed_nodes(merged.entity_index, new_entities))
        warnings.extend(self._embed_nodes(merged.event_index, new_events))

        merged.manifest["doc_ids"] = sorted(set(merged.manifest.get("doc_ids", [])) | {doc_id})
        merged.manifest["counts"] = {**merged.graph.counts(), "chunks": len(merged.chunks)}
        merged.manifest["created_at"] = _iso(self.clock())
        merged.manifest["warnings"] = merged.manifest.get("warnings", []) + warnings
        merged.validate()
        return merged

    def _run_extractions(
        self, chunks: Sequence[Chunk], extraction_order: str
    ) -> tuple[dict[str, ExtractionResult], dict[str, ExtractionResult]]:
        max_tokens = self.backend_cfg.max_extract_tokens

        def run_entities(chunk: Chunk) -> tuple[str, ExtractionResult]:
            return chunk.chunk_id, extract_entities(chunk, self.chat, max_tokens)

        def run_events(chunk: Chunk) -> tuple[str, ExtractionResult]:
            return chunk.chunk_id, extract_events(chunk, self.chat, max_tokens)

        if extraction_order == "entity_first":
            tasks = [(run_entities, c) for c in chunks] + [(run_events, c) for c in chunks]
        elif extraction_order == "event_first":
            tasks = [(run_events, c) for c in chunks] + [(run_entities, c) for c in chunks]
        else:
            tasks = [t for c in chunks for t in ((run_entities, c), (run_events, c))]

        results: list[tuple[str, ExtractionResult]] = []
        if self.max_workers == 1 or len(tasks) <= 1:
            results = [fn(chunk) for fn, chunk in tasks]
        else:
            with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                futures = [pool.submit(fn, chunk) for fn, chunk in tasks]
                results = [f.result() for f in futures]

        ent_results: dict[str, ExtractionResult] = {}
        evt_results: dict[str, ExtractionResult] = {}
        for (chunk_id, result), (fn, _) in zip(results, tasks):
            if fn is run_entities:
                ent_results[chunk_id] = result
            else:
                evt_results[chunk_id] = result
        return ent_results, evt_results

    def _embed_nodes(self, index: VectorIndex, nodes: Sequence[EntityNode] | Sequence[EventNode]) -> list[str]:
        if not nodes:
            return []
        warnings = []
        texts = []
        cap = self.backend_cfg.max_extract_tokens
        for node in nodes:
            text = canonical_text(node)
            if count_tokens(text) > cap:
                text = truncate_to_tokens(text, cap)
                warnings.append(f"canonical text for {node.node_id} truncated to {cap} tokens")
            texts.append(text)
        vectors = self.embedder.embed(texts)
        for node, vector in zip(nodes, vectors):
            index.add(node.node_id, vector)
        return warnings


def _copy_index(index: VectorIndex) -> VectorIndex:
    out = VectorIndex(index.kind, index.dim)
    for node_id in index.node_ids():
        out.add(node_id, index.get(node_id))
    return out


def _drop_document(bundle: IndexBundle, doc_id: str) -> IndexBundle:
    dropped_chunks = {cid for cid, c in bundle.chunks.items() if c.doc_id == doc_id}
    keep_entities = {nid: n for nid, n in bundle.graph.entities.items() if n.source_chunk not in dropped_chunks}
    keep_events = {nid: n for nid, n in bundle.graph.events.items() if n.source_chunk not in dropped_chunks}
    out = IndexBundle(
        graph=DualGraph(
            entities=keep_entities,
            events=keep_events,
            entity_edges=[e for e in bundle.graph.entity_edges if e.source_chunk not in dropped_chunks],
            event_edges=[e for e in bundle.graph.event_edges if e.source_chunk not in dropped_chunks],
            bipartite=[b for b in bundle.graph.bipartite if b.entity in keep_entities and b.event in keep_events],
        ),
        entity_index=VectorIndex("entity", bundle.entity_index.dim),
        event_index=VectorIndex("event", bundle.event_index.dim),
        chunks={cid: c for cid, c in bundle.chunks.items() if cid not in dropped_chunks},
        manifest=json.loads(json.dumps(bundle.manifest)),
    )
    for nid in keep_entities:
        out.entity_index.add(nid, bundle.entity_index.get(nid))
    for nid in keep_events:
        out.event_index.add(nid, bundle.event_index.get(nid))
    out.manifest["doc_ids"] = [d for d in out.manifest.get("doc_ids", []) if d != doc_id]
    return out


def _iso(timestamp: float) -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(timestamp))


# --- persistence -----------------------------------------------------------

def _dump_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":")) + "\n"


def save_bundle(bundle: IndexBundle, directory: str | Path) -> Path:
    """Persist a bundle; every data file is deterministic given the bundle."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    chunks = sorted(bundle.chunks.values(), key=lambda c: (c.doc_id, c.ordinal))
    with open(directory / CHUNKS_FILE, "w", encoding="utf-8") as fh:
        for c in chunks:
            fh.write(_dump_line({
                "chunk_id": c.chunk_id, "doc_id": c.doc_id, "ordinal": c.ordinal,
                "byte_start": c.byte_start, "byte_end": c.byte_end,
                "token_count": c.token_count, "text": c.text,
            }))

    entity_ids = sorted(bundle.graph.entities)
    with open(directory / ENTITY_NODES_FILE, "w", encoding="utf-8") as fh:
        for nid in entity_ids:
            n = bundle.graph.entities[nid]
            fh.write(_dump_line({
                "node_id": n.node_id, "name": n.name, "entity_type": n.entity_type,
                "description": n.description, "source_chunk": n.source_chunk,
                "metadata": n.metadata,
            }))

    event_ids = sorted(bundle.graph.events)
    with open(directory / EVENT_NODES_FILE, "w", encoding="utf-8") as fh:
        for nid in event_ids:
            n = bundle.graph.events[nid]
            fh.write(_dump_line({
                "node_id": n.node_id, "name": n.name, "description": n.description,
                "source_chunk": n.source_chunk, "metadata": n.metadata,
            }))

    edges = sorted(
        bundle.graph.entity_edges + bundle.graph.event_edges,
        key=lambda e: (e.kind, e.src, e.dst, e.description),
    )
    with open(directory / EDGES_FILE, "w", encoding="utf-8") as fh:
        for e in edges:
            fh.write(_dump_line({
                "src": e.src, "dst": e.dst, "kind": e.kind, "description": e.description,
                "keywords": e.keywords, "weight": e.weight, "source_chunk": e.source_chunk,
            }))

    bipartite = sorted(bundle.graph.bipartite, key=lambda b: (b.entity, b.event))
    with open(directory / BIPARTITE_FILE, "w", encoding="utf-8") as fh:
        for b in bipartite:
            fh.write(_dump_line({"entity": b.entity, "event": b.event}))

    _write_vectors(directory / ENTITY_VECTORS_FILE, bundle.entity_index, entity_ids)
    _write_vectors(directory / EVENT_VECTORS_FILE, bundle.event_index, event_ids)

    with open(directory / MANIFEST_FILE, "w", encoding="utf-8") as fh:
        json.dump(bundle.manifest, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")

    with open(directory / CHECKSUMS_FILE, "w", encoding="utf-8") as fh:
        for name in sorted(DATA_FILES):
            digest = hashlib.sha256((directory / name).read_bytes()).hexdigest()
            fh.write(f"{digest}  {name}\n")
    return directory


def _write_vectors(path: Path, index: VectorIndex, node_ids: Sequence[str]) -> None:
    if set(node_ids) != set(index.node_ids()):
        raise ValueError(f"{index.kind} index entries disagree with node set")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", _VECTOR_MAGIC, SCHEMA_VERSION, index.dim, len(node_ids)))
        for nid in node_ids:
            fh.write(index.get(nid).astype("<f4").tobytes())


def _read_vectors(path: Path, expected_dim: int, node_ids: Sequence[str], kind: str) -> VectorIndex:
    blob = path.read_bytes()
    header_size = struct.calcsize("<4sIII")
    if len(blob) < header_size:
        raise BundleLoadError(f"{path.name}: truncated header")
    magic, version, dim, count = struct.unpack("<4sIII", blob[:header_size])
    if magic != _VECTOR_MAGIC:
        raise BundleLoadError(f"{path.name}: bad magic {magic!r}")
    if version != SCHEMA_VERSION:
        raise BundleLoadError(f"{path.name}: unsupported version {version}")
    if dim != expected_dim:
        raise BundleLoadError(f"{path.name}: dim {dim} != manifest dim {expected_dim}")
    if count != len(node_ids):
        raise BundleLoadError(f"{path.name}: row count {count} != node count {len(node_ids)}")
    expected_bytes = header_size + count * dim * 4
    if len(blob) != expected_bytes:
        raise BundleLoadError(f"{path.name}: size {len(blob)} != expected {expected_bytes}")
    rows = np.frombuffer(blob[header_size:], dtype="<f4").reshape(count, dim)
    index = VectorIndex(kind, dim)
    for nid, row in zip(node_ids, rows):
        index.add(nid, row.tolist())
    return index


def _load_jsonl(path: Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except ValueError as exc:
                raise BundleLoadError(f"{path.name}:{lineno}: invalid JSON ({exc})") from exc
    return records


def load_bundle(directory: str | Path) -> IndexBundle:
    """Load and verify a persisted bundle; checksum failures name the file."""
    directory = Path(directory)
    checksums_path = directory / CHECKSUMS_FILE
    if not checksums_path.exists():
        raise BundleLoadError(f"{checksums_path} does not exist")
    for line in checksums_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            digest, name = line.split(None, 1)
        except ValueError as exc:
            raise BundleLoadError(f"{CHECKSUMS_FILE}: malformed line {line!r}") from exc
        name = name.strip()
        target = directory / name
        if not target.exists():
            raise BundleLoadError(f"{name}: listed in checksums but missing")
        actual = hashlib.sha256(target.read_bytes()).hexdigest()
        if actual != digest:
            raise BundleLoadError(f"{name}: checksum mismatch")

    try:
        manifest = json.loads((directory / MANIFEST_FILE).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise BundleLoadError(f"{MANIFEST_FILE}: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise BundleLoadError(f"unsupported schema version {manifest.get('schema_version')}")
    dim = int(manifest.get("dim", 0))

    chunks = {}
    for rec in _load_jsonl(directory / CHUNKS_FILE):
        chunk = Chunk(
            chunk_id=rec["chunk_id"], doc_id=rec["doc_id"], text=rec["text"],
            token_count=rec["token_count"], byte_start=rec["byte_start"],
            byte_end=rec["byte_end"], ordinal=rec["ordinal"],
        )
        chunks[chunk.chunk_id] = chunk

    graph = DualGraph.empty()
    for rec in _load_jsonl(directory / ENTITY_NODES_FILE):
        node = EntityNode(
            node_id=rec["node_id"], name=rec["name"], entity_type=rec["entity_type"],
            description=rec["description"], source_chunk=rec["source_chunk"],
            metadata=rec.get("metadata", {}),
        )
        graph.entities[node.node_id] = node
    for rec in _load_jsonl(directory / EVENT_NODES_FILE):
        node = EventNode(
            node_id=rec["node_id"], name=rec["name"], description=rec["description"],
            source_chunk=rec["source_chunk"], metadata=rec.get("metadata", {}),
        )
        graph.events[node.node_id] = node
    for rec in _load_jsonl(directory / EDGES_FILE):
        edge = RelationEdge(
            src=rec["src"], dst=rec["dst"], kind=rec["kind"], description=rec["description"],
            keywords=rec["keywords"], weight=rec["weight"], source_chunk=rec["source_chunk"],
        )
        if edge.kind == ENTITY_RELATION:
            graph.entity_edges.append(edge)
        else:
            graph.event_edges.append(edge)
    for rec in _load_jsonl(directory / BIPARTITE_FILE):
        graph.bipartite.append(BipartiteEdge(entity=rec["entity"], event=rec["event"]))

    entity_index = _read_vectors(directory / ENTITY_VECTORS_FILE, dim, sorted(graph.entities), "entity")
    event_index = _read_vectors(directory / EVENT_VECTORS_FILE, dim, sorted(graph.events), "event")

    bundle = IndexBundle(
        graph=graph, entity_index=entity_index, event_index=event_index,
        chunks=chunks, manifest=manifest,
    )
    bundle.validate()
    return bundle
