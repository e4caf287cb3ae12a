"""Command-line entry point: ingest, query, bench, validate, export, stats.

Exit codes: 0 ok, 2 state conflict, 3 empty corpus, 64 usage error,
66 missing input, 70 backend failure. Commands are non-interactive and
never mutate workspace state on failure paths.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .backends import BackendUnavailableError, TokenLedger
from .chronoqa import Judge, dataset_summary, load_dataset, run_benchmark, validate_offsets
from .config import WorkspaceConfig, build_backends, load_workspace_config
from .indexer import (
    ConfigMismatchError,
    DuplicateDocumentError,
    IndexBuilder,
    load_bundle,
    save_bundle,
)
from .model import RetrievalMode
from .retrieval import AnswerGenerationError, EmptyCorpusError, RetrievalEngine

EXIT_OK = 0
EXIT_CONFLICT = 2
EXIT_EMPTY_CORPUS = 3
EXIT_USAGE = 64
EXIT_MISSING_INPUT = 66
EXIT_BACKEND = 70


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config(workspace: str, config: str | None) -> WorkspaceConfig:
    try:
        return load_workspace_config(workspace, config)
    except FileNotFoundError as exc:
        _fail(EXIT_MISSING_INPUT, f"config file not found: {exc}")
    except (ValueError, KeyError) as exc:
        _fail(EXIT_USAGE, f"invalid config: {exc}")
    raise AssertionError("unreachable")


def _load_existing_bundle(cfg: WorkspaceConfig):
    if not (cfg.index_dir / "manifest.json").exists():
        _fail(EXIT_EMPTY_CORPUS, f"no index found in {cfg.index_dir}; run ingest first")
    return load_bundle(cfg.index_dir)


@click.group()
@click.option("--workspace", "-w", default=".", show_default=True, help="Workspace directory.")
@click.option("--config", "-c", default=None, help="Config file (defaults to <workspace>/e2rag.toml).")
@click.pass_context
def main(ctx: click.Context, workspace: str, config: str | None) -> None:
    """Entity-event dual-graph retrieval engine."""
    ctx.ensure_object(dict)
    ctx.obj["workspace"] = workspace
    ctx.obj["config"] = config


@main.command()
@click.option("--doc", required=True, type=click.Path(), help="Path to the source document.")
@click.option("--doc-id", required=True, help="Stable document identifier.")
@click.option("--re-ingest", is_flag=True, help="Replace an already-ingested document.")
@click.pass_context
def ingest(ctx: click.Context, doc: str, doc_id: str, re_ingest: bool) -> None:
    """Build (or extend) the index from a document."""
    cfg = _load_config(ctx.obj["workspace"], ctx.obj["config"])
    doc_path = Path(doc)
    if not doc_path.exists():
        _fail(EXIT_MISSING_INPUT, f"document not found: {doc_path}")
    text = doc_path.read_text(encoding="utf-8")

    ledger = TokenLedger()
    chat, embedder = build_backends(cfg, ledger)
    builder = IndexBuilder(chat, embedder, chunker_cfg=cfg.chunker, backend_cfg=cfg.backend)

    bundle = None
    if (cfg.index_dir / "manifest.json").exists():
        bundle = load_bundle(cfg.index_dir)
    try:
        bundle = builder.insert_document(doc_id, text, bundle=bundle, re_ingest=re_ingest)
    except DuplicateDocumentError as exc:
        _fail(EXIT_CONFLICT, str(exc))
    except ConfigMismatchError as exc:
        _fail(EXIT_CONFLICT, str(exc))
    except BackendUnavailableError as exc:
        _fail(EXIT_BACKEND, f"backend failure during ingest: {exc}")
    save_bundle(bundle, cfg.index_dir)

    counts = bundle.manifest["counts"]
    totals = ledger.totals_by_stage()
    click.echo(f"ingested {doc_id!r}: {counts.get('chunks', 0)} chunks, "
               f"{counts.get('entities', 0)} entities, {counts.get('events', 0)} events, "
               f"{counts.get('entity_edges', 0) + counts.get('event_edges', 0)} relation edges, "
               f"{counts.get('bipartite', 0)} bipartite links")
    for stage in sorted(totals):
        t = totals[stage]
        click.echo(f"  tokens[{stage}]: calls={t['calls']} in={t['input_tokens']} out={t['output_tokens']}")
    if not counts.get("chunks"):
        click.echo("warning: document produced no chunks", err=True)


@main.command()
@click.option("--q", "-q", "query_text", required=True, help="The question to answer.")
@click.option("--mode", "mode_name", default=None, help="Retrieval mode.")
@click.option("--k", type=int, default=None, help="Top-k passages.")
@click.option("--seed-m", type=int, default=None, help="Per-side seed lookup width.")
@click.option("--trace", is_flag=True, help="Write the retrieval trace JSON to the workspace.")
@click.pass_context
def query(ctx: click.Context, query_text: str, mode_name: str | None, k: int | None,
          seed_m: int | None, trace: bool) -> None:
    """Answer a question over the ingested corpus."""
    cfg = _load_config(ctx.obj["workspace"], ctx.obj["config"])
    try:
        mode = RetrievalMode.parse(mode_name or cfg.mode)
    except ValueError as exc:
        _fail(EXIT_USAGE, str(exc))
        return
    bundle = _load_existing_bundle(cfg)

    ledger = TokenLedger()
    chat, embedder = build_backends(cfg, ledger)
    engine = RetrievalEngine(
        bundle, chat, embedder, backend_cfg=cfg.backend, ledger=ledger,
        k=cfg.k, seed_m=cfg.seed_m, rerank_before_dedup=cfg.rerank_before_dedup,
    )
    try:
        result = engine.answer(query_text, mode=mode, k=k, seed_m=seed_m)
    except EmptyCorpusError as exc:
        _fail(EXIT_EMPTY_CORPUS, str(exc))
        return
    except AnswerGenerationError as exc:
        _fail(EXIT_BACKEND, str(exc))
        return
    except BackendUnavailableError as exc:
        _fail(EXIT_BACKEND, str(exc))
        return
    click.echo(result.answer_text)
    if trace:
        trace_path = Path(ctx.obj["workspace"]) / "trace.json"
        trace_path.write_text(
            json.dumps(result.bundle.trace, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        click.echo(f"trace written to {trace_path}", err=True)


@main.command()
@click.option("--dataset", required=True, type=click.Path(), help="JSONL dataset path.")
@click.option("--modes", default="vanilla", show_default=True, help="Comma-separated retrieval modes.")
@click.option("--judges", default="mock", show_default=True, help="Comma-separated judge ids.")
@click.option("--seed", type=int, default=0, show_default=True, help="Answer-order shuffle seed.")
@click.option("--out", default=None, help="Output directory (default <workspace>/bench).")
@click.pass_context
def bench(ctx: click.Context, dataset: str, modes: str, judges: str, seed: int, out: str | None) -> None:
    """Run the benchmark: answer, judge, aggregate, report."""
    cfg = _load_config(ctx.obj["workspace"], ctx.obj["config"])
    dataset_path = Path(dataset)
    if not dataset_path.exists():
        _fail(EXIT_MISSING_INPUT, f"dataset not found: {dataset_path}")
    mode_names = [m.strip() for m in modes.split(",") if m.strip()]
    judge_names = [j.strip() for j in judges.split(",") if j.strip()]
    if not mode_names or not judge_names:
        _fail(EXIT_USAGE, "need at least one mode and one judge")
    try:
        parsed_modes = [RetrievalMode.parse(m) for m in mode_names]
    except ValueError as exc:
        _fail(EXIT_USAGE, str(exc))
        return

    records = load_dataset(dataset_path)
    bundle = _load_existing_bundle(cfg)
    ledger = TokenLedger()
    chat, embedder = build_backends(cfg, ledger)
    engine = RetrievalEngine(
        bundle, chat, embedder, backend_cfg=cfg.backend, ledger=ledger,
        k=cfg.k, seed_m=cfg.seed_m, rerank_before_dedup=cfg.rerank_before_dedup,
    )
    answerers = [ModeAnswerer(engine, mode) for mode in parsed_modes]
    judge_list = [Judge(judge_id=name, chat=chat, max_tokens=cfg.backend.max_output_tokens)
                  for name in judge_names]
    out_dir = Path(out) if out else Path(ctx.obj["workspace"]) / "bench"
    try:
        result = run_benchmark(records, answerers, judge_list, out_dir, seed=seed)
    except BackendUnavailableError as exc:
        _fail(EXIT_BACKEND, f"backend failure during benchmark: {exc}")
        return
    click.echo(f"benchmark complete: {result.table.n_samples} samples, "
               f"{result.table.n_judges} judges, {result.answer_calls} generation calls")
    click.echo(f"report: {result.report_md}")


class ModeAnswerer:
    """Adapter presenting one retrieval mode as a benchmark system under test."""

    def __init__(self, engine: RetrievalEngine, mode: RetrievalMode) -> None:
        self.engine = engine
        self.mode = mode
        self.name = mode.value

    def answer(self, question: str) -> str:
        return self.engine.answer(question, mode=self.mode).answer_text


@main.command()
@click.option("--dataset", required=True, type=click.Path(), help="JSONL dataset path.")
@click.option("--stories", required=True, type=click.Path(), help="Directory of <story_id>.txt files.")
@click.pass_context
def validate(ctx: click.Context, dataset: str, stories: str) -> None:
    """Check passage byte offsets against user-supplied story texts."""
    dataset_path = Path(dataset)
    if not dataset_path.exists():
        _fail(EXIT_MISSING_INPUT, f"dataset not found: {dataset_path}")
    stories_dir = Path(stories)
    if not stories_dir.is_dir():
        _fail(EXIT_MISSING_INPUT, f"stories directory not found: {stories_dir}")
    records = load_dataset(dataset_path)
    story_texts = {
        p.stem: p.read_text(encoding="utf-8") for p in sorted(stories_dir.glob("*.txt"))
    }
    report = validate_offsets(records, story_texts)
    counts = report.counts()
    summary = dataset_summary(records)
    click.echo(f"dataset: {summary['total']} records, {len(summary['stories'])} stories")
    click.echo(f"offsets: pass={counts['pass']} fail={counts['fail']} unverifiable={counts['unverifiable']}")
    for check in report.checks:
        if check.status == "fail":
            click.echo(f"  FAIL {check.question_id}[{check.passage_index}]: {check.detail}", err=True)


@main.command()
@click.option("--format", "fmt", default="graph-jsonl", show_default=True,
              help="Export format: graph-jsonl or dot.")
@click.option("--out", default=None, help="Output file (default stdout).")
@click.pass_context
def export(ctx: click.Context, fmt: str, out: str | None) -> None:
    """Export the graph for external tooling or rendering."""
    if fmt not in ("graph-jsonl", "dot"):
        _fail(EXIT_USAGE, f"unknown export format {fmt!r} (graph-jsonl or dot)")
    cfg = _load_config(ctx.obj["workspace"], ctx.obj["config"])
    bundle = _load_existing_bundle(cfg)
    graph = bundle.graph
    lines: list[str] = []
    if fmt == "graph-jsonl":
        for nid in sorted(graph.entities):
            n = graph.entities[nid]
            lines.append(json.dumps({
                "record": "entity", "node_id": n.node_id, "name": n.name,
                "entity_type": n.entity_type, "description": n.description,
                "source_chunk": n.source_chunk,
            }, ensure_ascii=False, sort_keys=True))
        for nid in sorted(graph.events):
            n = graph.events[nid]
            lines.append(json.dumps({
                "record": "event", "node_id": n.node_id, "name": n.name,
                "description": n.description, "source_chunk": n.source_chunk,
            }, ensure_ascii=False, sort_keys=True))
        for e in sorted(graph.entity_edges + graph.event_edges,
                        key=lambda e: (e.kind, e.src, e.dst)):
            lines.append(json.dumps({
                "record": "relation", "src": e.src, "dst": e.dst, "kind": e.kind,
                "description": e.description, "weight": e.weight,
            }, ensure_ascii=False, sort_keys=True))
        for b in sorted(graph.bipartite, key=lambda b: (b.entity, b.event)):
            lines.append(json.dumps({
                "record": "bipartite", "entity": b.entity, "event": b.event,
            }, ensure_ascii=False, sort_keys=True))
    else:
        lines.append("digraph e2rag {")
        for nid in sorted(graph.entities):
            lines.append(f'  "{nid}" [shape=ellipse];')
        for nid in sorted(graph.events):
            lines.append(f'  "{nid}" [shape=box];')
        for e in sorted(graph.entity_edges + graph.event_edges,
                        key=lambda e: (e.kind, e.src, e.dst)):
            lines.append(f'  "{e.src}" -> "{e.dst}";')
        for b in sorted(graph.bipartite, key=lambda b: (b.entity, b.event)):
            lines.append(f'  "{b.entity}" -> "{b.event}" [style=dashed, dir=none];')
        lines.append("}")
    payload = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(payload, encoding="utf-8")
        click.echo(f"wrote {len(lines)} lines to {out}")
    else:
        click.echo(payload, nl=False)


@main.command()
@click.pass_context
def stats(ctx: click.Context) -> None:
    """Print index statistics (zeros on an empty workspace)."""
    cfg = _load_config(ctx.obj["workspace"], ctx.obj["config"])
    if not (cfg.index_dir / "manifest.json").exists():
        counts = {"chunks": 0, "entities": 0, "events": 0,
                  "entity_edges": 0, "event_edges": 0, "bipartite": 0}
        doc_ids: list[str] = []
    else:
        bundle = load_bundle(cfg.index_dir)
        counts = bundle.manifest["counts"]
        doc_ids = bundle.manifest.get("doc_ids", [])
    click.echo(f"documents: {len(doc_ids)}")
    for key in ("chunks", "entities", "events", "entity_edges", "event_edges", "bipartite"):
        click.echo(f"{key}: {counts.get(key, 0)}")


if __name__ == "__main__":
    main()
