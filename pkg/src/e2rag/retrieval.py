"""Query-time retrieval over the dual graph.

Pipeline: cue extraction (mode-dependent) -> twin query embeddings -> seed
lookup in both vector indices -> one-hop expansion across the bipartite
mapping -> similarity ranking with event-grounded re-ranking of same-name
entity mentions -> chunk dedup and top-k -> context assembly -> answer.

Four hypothetical-response variants wrap the vanilla pipeline; they differ
only in what the extractor and the embedder receive:
    vanilla         entity/event cues from q,        embed joined cue phrases
    comb_extraction cues from q + "\\n" + h,          embed joined cue phrases
    hyp_extraction  cues from h,                     embed joined cue phrases
    comb_embedding  no extractor,                    embed q + "\\n" + h once
    hyp_embedding   no extractor,                    embed h once
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import prompts
from .backends import BackendConfig, BackendUnavailableError, EmbeddingVector, TokenLedger
from .extraction import extract_query_cues
from .indexer import IndexBundle
from .model import ContextBundle, PassageRecord, RetrievalMode, normalize_name

logger = logging.getLogger(__name__)

ENTITY_SEED = "entity_seed"
EVENT_SEED = "event_seed"
EXPANDED_VIA_BIPARTITE = "expanded_via_bipartite"

PHRASE_JOIN = "; "
QUERY_HYP_JOIN = "\n"


class EmptyCorpusError(RuntimeError):
    """Both vector indices are empty; there is nothing to retrieve."""


class AnswerGenerationError(RuntimeError):
    """Generation failed after retrieval succeeded; carries the context bundle."""

    def __init__(self, message: str, bundle: ContextBundle) -> None:
        super().__init__(message)
        self.bundle = bundle


@dataclass
class QueryContext:
    """One query run: the query, its mode, and retrieval widths."""

    query: str
    mode: RetrievalMode = RetrievalMode.VANILLA
    hypothetical: Optional[str] = None
    k: int = 10
    seed_m: int = 5

    def __post_init__(self) -> None:
        if not self.query:
            raise ValueError("query must be non-empty")
        if self.k <= 0 or self.seed_m <= 0:
            raise ValueError("k and seed_m must be positive")


@dataclass
class TaggedNodeSet:
    """Node ids with provenance tags (seed side or bipartite expansion)."""

    tags: dict[str, str] = field(default_factory=dict)

    @property
    def ids(self) -> set[str]:
        return set(self.tags)

    def __len__(self) -> int:
        return len(self.tags)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.tags


@dataclass(frozen=True)
class RankedPassage:
    chunk_id: str
    base_score: float
    final_rank: int
    rerank_reason: Optional[str] = None


def generate_hypothetical(query: str, chat, max_tokens: int, ledger_purpose: str = "hypothetical") -> str:
    """Draft an answer without any retrieved context; exactly one chat call."""
    if not query:
        raise ValueError("query must be non-empty")
    return chat.complete(prompts.hypothetical_prompt(query), max_tokens, purpose=ledger_purpose)


def retrieval_embeddings(
    ctx: QueryContext,
    chat,
    embedder,
    max_extract_tokens: int,
) -> tuple[EmbeddingVector, EmbeddingVector, dict]:
    """Per-mode dispatch producing the entity-side and event-side query vectors.

    Extraction modes join each cue list with '; ' and embed one text per
    side; a single empty side falls back to embedding the raw query, and if
    both sides are empty the mode's extractor input is embedded directly.
    Embedding modes skip the extractor and embed one text for both sides.
    """
    info: dict = {"mode": ctx.mode.value, "warnings": [], "cues": None, "embedded_texts": {}}
    q, h = ctx.query, ctx.hypothetical
    if ctx.mode.needs_hypothetical and h is None:
        raise ValueError(f"mode {ctx.mode.value} requires a hypothetical response")

    if ctx.mode.uses_extractor:
        if ctx.mode is RetrievalMode.VANILLA:
            source = q
        elif ctx.mode is RetrievalMode.COMB_EXTRACTION:
            source = q + QUERY_HYP_JOIN + h
        else:
            source = h
        cues = extract_query_cues(source, chat, max_extract_tokens)
        info["cues"] = {"entity_phrases": cues.entity_phrases, "event_phrases": cues.event_phrases}
        info["extractor_input"] = source
        if cues.empty:
            info["warnings"].append(
                "both cue sets empty; falling back to direct embedding of the extractor input")
            vec = embedder.embed([source])[0]
            info["embedded_texts"] = {"entity": source, "event": source}
            return vec, vec, info
        entity_text = PHRASE_JOIN.join(cues.entity_phrases)
        event_text = PHRASE_JOIN.join(cues.event_phrases)
        if not entity_text:
            info["warnings"].append("empty entity cues; entity side falls back to the raw query")
            entity_text = q
        if not event_text:
            info["warnings"].append("empty event cues; event side falls back to the raw query")
            event_text = q
        info["embedded_texts"] = {"entity": entity_text, "event": event_text}
        if entity_text == event_text:
            vec = embedder.embed([entity_text])[0]
            return vec, vec, info
        entity_vec, event_vec = embedder.embed([entity_text, event_text])
        return entity_vec, event_vec, info

    source = q + QUERY_HYP_JOIN + h if ctx.mode is RetrievalMode.COMB_EMBEDDING else h
    info["embedded_texts"] = {"entity": source, "event": source}
    vec = embedder.embed([source])[0]
    return vec, vec, info


def seed_lookup(
    entity_vec: EmbeddingVector,
    event_vec: EmbeddingVector,
    bundle: IndexBundle,
    seed_m: int,
) -> TaggedNodeSet:
    """Top seed_m nodes per side by cosine.

    Tie-break everywhere: score desc, source-chunk ordinal asc, node_id asc.
    """
    if len(bundle.entity_index) == 0 and len(bundle.event_index) == 0:
        raise EmptyCorpusError("both vector indices are empty")
    tags: dict[str, str] = {}
    for index, vec, tag in (
        (bundle.entity_index, entity_vec, ENTITY_SEED),
        (bundle.event_index, event_vec, EVENT_SEED),
    ):
        if len(index) == 0:
            continue
        scores = index.scores(vec)
        ordered = sorted(
            scores.items(),
            key=lambda kv: (-kv[1], bundle.chunk_ordinal(bundle.node_source_chunk(kv[0])), kv[0]),
        )
        for node_id, _ in ordered[:seed_m]:
            tags[node_id] = tag
    return TaggedNodeSet(tags=tags)


def one_hop_expand(seeds: TaggedNodeSet, graph) -> TaggedNodeSet:
    """Exactly one hop over the bipartite mapping from the seed set.

    Entity seeds pull in their linked events and event seeds their linked
    entities; nodes added by expansion are never themselves expanded.
    """
    ent2evt, evt2ent = graph.bipartite_adjacency()
    tags = dict(seeds.tags)
    for node_id in seeds.tags:
        if node_id in graph.entities:
            for event_id in ent2evt.get(node_id, ()):
                tags.setdefault(event_id, EXPANDED_VIA_BIPARTITE)
        elif node_id in graph.events:
            for entity_id in evt2ent.get(node_id, ()):
                tags.setdefault(entity_id, EXPANDED_VIA_BIPARTITE)
    return TaggedNodeSet(tags=tags)


def rank_candidates(
    expanded: TaggedNodeSet,
    entity_vec: EmbeddingVector,
    event_vec: EmbeddingVector,
    k: int,
    bundle: IndexBundle,
    rerank_before_dedup: bool = True,
) -> tuple[list[RankedPassage], dict]:
    """Score, re-rank same-name entity groups by linked-event rank, pick chunks.

    Every node is scored against its side's vector. Entity mentions sharing a
    normalized name are then permuted within the positions their group holds:
    members follow the best (lowest) similarity rank among their linked event
    nodes, and members with no linked events keep base order at the group's
    tail. Cross-group order is untouched. Nodes then map to source chunks
    (best node score per chunk, first occurrence fixes position) and the top-k
    chunks are returned.

    With rerank_before_dedup=False the re-ranking affects ordering only:
    chunk selection uses the pure base-score order.
    """
    if len(expanded) == 0:
        raise ValueError("expanded set is empty")
    graph = bundle.graph

    def ordinal(node_id: str) -> int:
        return bundle.chunk_ordinal(bundle.node_source_chunk(node_id))

    scores: dict[str, float] = {}
    for node_id in expanded.tags:
        if node_id in graph.entities:
            vec, index = entity_vec, bundle.entity_index
        else:
            vec, index = event_vec, bundle.event_index
        stored = index.get(node_id)
        scores[node_id] = _cosine64(vec, stored)

    base = sorted(scores, key=lambda nid: (-scores[nid], ordinal(nid), nid))
    base_pos = {nid: i for i, nid in enumerate(base)}

    event_rank = {
        nid: rank + 1
        for rank, nid in enumerate(n for n in base if n in graph.events)
    }

    ent2evt, _ = graph.bipartite_adjacency()
    groups: dict[str, list[str]] = {}
    for nid in base:
        if nid in graph.entities:
            groups.setdefault(normalize_name(graph.entities[nid].name), []).append(nid)

    final = list(base)
    moved: dict[str, str] = {}  # node id -> group name, for rerank_reason
    rerank_log = []
    for name, members in groups.items():
        if len(members) < 2:
            continue
        def best_event_rank(nid: str) -> Optional[int]:
            ranks = [event_rank[e] for e in ent2evt.get(nid, ()) if e in event_rank]
            return min(ranks) if ranks else None
        with_events = [m for m in members if best_event_rank(m) is not None]
        tail = [m for m in members if best_event_rank(m) is None]
        with_events.sort(key=lambda m: (best_event_rank(m), base_pos[m]))
        ordered = with_events + tail
        positions = sorted(base_pos[m] for m in members)
        for pos, member in zip(positions, ordered):
            final[pos] = member
            if pos != base_pos[member]:
                moved[member] = name
        if any(final[p] != base[p] for p in positions):
            rerank_log.append({
                "group": name,
                "members": members,
                "order_after": ordered,
            })

    def chunk_sequence(order: list[str]) -> tuple[list[str], dict[str, str]]:
        seen: dict[str, str] = {}
        sequence: list[str] = []
        for nid in order:
            cid = bundle.node_source_chunk(nid)
            if cid not in seen:
                seen[cid] = nid
                sequence.append(cid)
        return sequence, seen

    chunk_best: dict[str, float] = {}
    for nid, score in scores.items():
        cid = bundle.node_source_chunk(nid)
        chunk_best[cid] = max(chunk_best.get(cid, score), score)

    final_sequence, introducer = chunk_sequence(final)
    if rerank_before_dedup:
        top = final_sequence[:k]
    else:
        base_sequence, _ = chunk_sequence(base)
        selected = set(base_sequence[:k])
        top = [cid for cid in final_sequence if cid in selected]

    ranked = []
    for rank, cid in enumerate(top, start=1):
        reason = None
        intro = introducer[cid]
        if intro in moved:
            reason = f"entity group '{moved[intro]}' reordered by linked-event similarity rank"
        ranked.append(RankedPassage(chunk_id=cid, base_score=chunk_best[cid], final_rank=rank,
                                    rerank_reason=reason))

    rank_trace = {
        "node_scores": {nid: scores[nid] for nid in base},
        "base_order": base,
        "final_order": final,
        "event_ranks": event_rank,
        "rerank_groups": rerank_log,
        "rerank_before_dedup": rerank_before_dedup,
        "chunk_order": top,
    }
    return ranked, rank_trace


def _cosine64(query: EmbeddingVector, stored) -> float:
    q = np.asarray(query.values, dtype=np.float64)
    v = np.asarray(stored, dtype=np.float64)
    qn = float(np.linalg.norm(q))
    vn = float(np.linalg.norm(v))
    if qn == 0.0 or vn == 0.0:
        return 0.0
    return float(np.dot(q, v) / (qn * vn))


def assemble_context(
    ranked: list[RankedPassage],
    expanded: TaggedNodeSet,
    bundle: IndexBundle,
    trace: Optional[dict] = None,
) -> ContextBundle:
    """Build the generation input from the top-k chunks and the induced subgraph.

    The subgraph dump lists each node of the expanded set on exactly one line
    and each induced edge on one line; passages carry raw chunk text in rank
    order.
    """
    graph = bundle.graph
    passages = []
    for rp in ranked:
        chunk = bundle.chunks.get(rp.chunk_id)
        if chunk is None:
            raise KeyError(f"chunk {rp.chunk_id} missing from store (corrupt bundle)")
        passages.append(PassageRecord(chunk_id=rp.chunk_id, text=chunk.text, score=rp.base_score))

    node_ids = expanded.ids

    def node_sort_key(nid: str):
        kind = "entity" if nid in graph.entities else "event"
        return (kind, bundle.chunk_ordinal(bundle.node_source_chunk(nid)), nid)

    node_lines = []
    node_metadata = []
    for nid in sorted(node_ids, key=node_sort_key):
        if nid in graph.entities:
            node = graph.entities[nid]
            kind = "entity"
        else:
            node = graph.events[nid]
            kind = "event"
        node_lines.append(f"[{kind}] {node.name} — {node.description}")
        record = {
            "node_id": nid,
            "kind": kind,
            "name": node.name,
            "description": node.description,
            "source_chunk": node.source_chunk,
            "provenance": expanded.tags[nid],
        }
        if node.metadata:
            record["metadata"] = node.metadata
        node_metadata.append(record)

    edge_lines = []
    edge_metadata = []
    for edge in sorted(
        graph.entity_edges + graph.event_edges,
        key=lambda e: (e.kind, e.src, e.dst, e.description),
    ):
        if edge.src in node_ids and edge.dst in node_ids:
            edge_lines.append(f"{edge.src} —({edge.description})→ {edge.dst}")
            edge_metadata.append({
                "src": edge.src, "dst": edge.dst, "kind": edge.kind,
                "description": edge.description, "keywords": edge.keywords,
                "weight": edge.weight, "source_chunk": edge.source_chunk,
            })
    bip_lines = []
    for edge in sorted(graph.bipartite, key=lambda b: (b.entity, b.event)):
        if edge.entity in node_ids and edge.event in node_ids:
            bip_lines.append(f"{edge.entity} ⇔ {edge.event}")
            edge_metadata.append({"entity": edge.entity, "event": edge.event, "kind": "entity_event_link"})

    return ContextBundle(
        passages=passages,
        subgraph_dump="\n".join(node_lines + edge_lines + bip_lines),
        node_metadata=node_metadata,
        edge_metadata=edge_metadata,
        trace=dict(trace or {}),
    )


def render_context(bundle: ContextBundle) -> str:
    """Linearize a context bundle for the generation prompt."""
    lines = ["-----Sources-----"]
    for i, passage in enumerate(bundle.passages, start=1):
        lines.append(f"[chunk {passage.chunk_id} | rank {i} | score {passage.score:.4f}]")
        lines.append(passage.text)
        lines.append("")
    lines.append("-----Subgraph-----")
    lines.append(bundle.subgraph_dump)
    lines.append("")
    lines.append("-----Metadata-----")
    for record in bundle.node_metadata + bundle.edge_metadata:
        lines.append(json.dumps(record, ensure_ascii=False, sort_keys=True))
    return "\n".join(lines)


@dataclass
class AnswerResult:
    answer_text: str
    bundle: ContextBundle


class RetrievalEngine:
    """Read-only query runner over an immutable index bundle."""

    def __init__(
        self,
        bundle: IndexBundle,
        chat,
        embedder,
        backend_cfg: Optional[BackendConfig] = None,
        ledger: Optional[TokenLedger] = None,
        k: int = 10,
        seed_m: int = 5,
        rerank_before_dedup: bool = True,
        response_type: str = "Multiple Paragraphs",
    ) -> None:
        self.bundle = bundle
        self.chat = chat
        self.embedder = embedder
        self.backend_cfg = backend_cfg or BackendConfig()
        self.ledger = ledger
        self.k = k
        self.seed_m = seed_m
        self.rerank_before_dedup = rerank_before_dedup
        self.response_type = response_type

    def retrieve(
        self,
        query: str,
        mode: RetrievalMode = RetrievalMode.VANILLA,
        k: Optional[int] = None,
        seed_m: Optional[int] = None,
    ) -> ContextBundle:
        """Run the retrieval pipeline and assemble the context bundle."""
        if len(self.bundle.entity_index) == 0 and len(self.bundle.event_index) == 0:
            raise EmptyCorpusError("index is empty; ingest documents first")
        ctx = QueryContext(query=query, mode=mode, k=k or self.k, seed_m=seed_m or self.seed_m)
        mark = self.ledger.mark() if self.ledger else None
        warnings: list[str] = []

        if ctx.mode.needs_hypothetical:
            try:
                hyp = generate_hypothetical(query, self.chat, self.backend_cfg.max_output_tokens)
                ctx = replace(ctx, hypothetical=hyp)
            except BackendUnavailableError as exc:
                # Degrade to vanilla rather than failing the query outright.
                logger.warning("hypothetical generation failed (%s); degrading to vanilla", exc)
                warnings.append(f"hypothetical generation failed ({exc}); degraded to vanilla mode")
                ctx = replace(ctx, mode=RetrievalMode.VANILLA, hypothetical=None)

        entity_vec, event_vec, embed_info = retrieval_embeddings(
            ctx, self.chat, self.embedder, self.backend_cfg.max_extract_tokens)
        seeds = seed_lookup(entity_vec, event_vec, self.bundle, ctx.seed_m)
        expanded = one_hop_expand(seeds, self.bundle.graph)
        ranked, rank_trace = rank_candidates(
            expanded, entity_vec, event_vec, ctx.k, self.bundle,
            rerank_before_dedup=self.rerank_before_dedup)

        trace = {
            "query": query,
            "mode": ctx.mode.value,
            "requested_mode": mode.value,
            "hypothetical": ctx.hypothetical,
            "k": ctx.k,
            "seed_m": ctx.seed_m,
            "embedding": embed_info,
            "seeds": [{"node_id": nid, "tag": tag} for nid, tag in sorted(seeds.tags.items())],
            "expanded": [{"node_id": nid, "tag": tag} for nid, tag in sorted(expanded.tags.items())],
            "ranking": rank_trace,
            "passages": [
                {"chunk_id": rp.chunk_id, "base_score": rp.base_score,
                 "final_rank": rp.final_rank, "rerank_reason": rp.rerank_reason}
                for rp in ranked
            ],
            "warnings": warnings + embed_info.get("warnings", []),
        }
        if self.ledger is not None and mark is not None:
            trace["backend_calls"] = [r.as_dict() for r in self.ledger.since(mark)]
        return assemble_context(ranked, expanded, self.bundle, trace)

    def answer(
        self,
        query: str,
        mode: RetrievalMode = RetrievalMode.VANILLA,
        k: Optional[int] = None,
        seed_m: Optional[int] = None,
    ) -> AnswerResult:
        """Retrieve, then make the single generation call."""
        bundle = self.retrieve(query, mode=mode, k=k, seed_m=seed_m)
        prompt = prompts.answer_prompt(self.response_type, render_context(bundle), query)
        mark = self.ledger.mark() if self.ledger else None
        try:
            text = self.chat.complete(prompt, self.backend_cfg.max_output_tokens, purpose="answer")
        except BackendUnavailableError as exc:
            raise AnswerGenerationError(f"generation failed after retrieval: {exc}", bundle) from exc
        if self.ledger is not None and mark is not None:
            calls = bundle.trace.setdefault("backend_calls", [])
            calls.extend(r.as_dict() for r in self.ledger.since(mark))
        return AnswerResult(answer_text=text, bundle=bundle)
