"""Workspace configuration: file (TOML or JSON) plus environment overlay."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backends import (
    BackendConfig,
    LiveChatBackend,
    LiveEmbeddingBackend,
    MockChatBackend,
    MockEmbeddingBackend,
    TokenLedger,
    cue_example_canned_responses,
)
from .chunker import ChunkerConfig

CONFIG_BASENAMES = ("e2rag.toml", "e2rag.json")
INDEX_DIRNAME = "index"


@dataclass
class WorkspaceConfig:
    workspace: Path
    provider: str = "mock"  # mock | live
    chunker: ChunkerConfig = field(default_factory=ChunkerConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    mock_dim: int = 16
    k: int = 10
    seed_m: int = 5
    mode: str = "vanilla"
    rerank_before_dedup: bool = True
    dataset_path: Optional[Path] = None

    def __post_init__(self) -> None:
        if self.provider not in ("mock", "live"):
            raise ValueError(f"provider must be 'mock' or 'live', not {self.provider!r}")

    @property
    def index_dir(self) -> Path:
        return self.workspace / INDEX_DIRNAME

    @property
    def embedding_dim(self) -> int:
        return self.mock_dim if self.provider == "mock" else self.backend.embedding_dim


def load_workspace_config(workspace: str | Path, config_path: Optional[str | Path] = None) -> WorkspaceConfig:
    """Resolve the workspace config file (if any) and the env overlay."""
    workspace = Path(workspace)
    path = Path(config_path) if config_path else None
    if path is None:
        for basename in CONFIG_BASENAMES:
            candidate = workspace / basename
            if candidate.exists():
                path = candidate
                break
    data: dict = {}
    if path is not None:
        if not path.exists():
            raise FileNotFoundError(path)
        if path.suffix == ".toml":
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        else:
            data = json.loads(path.read_text(encoding="utf-8"))

    chunker_data = data.get("chunker", {})
    chunker = ChunkerConfig(
        chunk_size_tokens=int(chunker_data.get("chunk_size_tokens", 1200)),
        overlap_tokens=int(chunker_data.get("overlap_tokens", 100)),
        tokenizer=chunker_data.get("tokenizer", "simple"),
    )
    backend_data = data.get("backend", {})
    backend_overrides = {
        key: backend_data[key]
        for key in (
            "base_url", "api_key", "chat_model", "embedding_model",
            "max_extract_tokens", "max_output_tokens", "timeout_s",
            "retry_count", "retry_backoff_s", "embedding_dim",
        )
        if key in backend_data
    }
    backend = BackendConfig.from_env(**backend_overrides)
    retrieval_data = data.get("retrieval", {})
    dataset = data.get("dataset_path")
    return WorkspaceConfig(
        workspace=workspace,
        provider=backend_data.get("provider", data.get("provider", "mock")),
        chunker=chunker,
        backend=backend,
        mock_dim=int(backend_data.get("mock_dim", 16)),
        k=int(retrieval_data.get("k", 10)),
        seed_m=int(retrieval_data.get("seed_m", 5)),
        mode=retrieval_data.get("mode", "vanilla"),
        rerank_before_dedup=bool(retrieval_data.get("rerank_before_dedup", True)),
        dataset_path=Path(dataset) if dataset else None,
    )


def build_backends(cfg: WorkspaceConfig, ledger: TokenLedger):
    """Construct the (chat, embedder) pair for the configured provider."""
    if cfg.provider == "mock":
        chat = MockChatBackend(ledger, canned=cue_example_canned_responses())
        embedder = MockEmbeddingBackend(ledger, dim=cfg.mock_dim)
    else:
        chat = LiveChatBackend(cfg.backend, ledger)
        embedder = LiveEmbeddingBackend(cfg.backend, ledger)
    return chat, embedder
