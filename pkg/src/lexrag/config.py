"""TOML configuration holding every retrieval and generation setting.

Secrets never live in the file: API keys come from ``LEXRAG_LLM_API_KEY``,
``LEXRAG_JUDGE_API_KEY`` and ``LEXRAG_EMBEDDING_API_KEY``.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agent import AgentConfig
from .hybrid import DEFAULT_INSTRUCTION, FusionConfig, HashingEmbedder, HttpEmbeddingClient
from .llm import HttpChatClient
from .search import Bm25Params


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    model: str
    temperature: float = 0.3  # used by the judge; agent decoding lives in [agent]


@dataclass(frozen=True)
class EmbeddingConfig:
    kind: str = "http"  # http | hashing
    url: str | None = None
    model: str = "Qwen3-Embedding-0.6B"
    instruction: str = DEFAULT_INSTRUCTION
    dim: int = 64


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    index: Path | None = None
    dense_index: Path | None = None
    bm25: Bm25Params = Bm25Params()
    fusion: FusionConfig = FusionConfig()
    embedding: EmbeddingConfig | None = None
    agent: AgentConfig = AgentConfig()
    llm: EndpointConfig | None = None
    judge: EndpointConfig | None = None

    def __post_init__(self):
        if (self.dense_index is None) != (self.embedding is None):
            raise ConfigError("hybrid backend needs both [service].dense_index and [embedding]")

    @property
    def hybrid_enabled(self) -> bool:
        return self.dense_index is not None

    def embedder(self):
        if self.embedding is None:
            raise ConfigError("no [embedding] section")
        if self.embedding.kind == "hashing":
            return HashingEmbedder(self.embedding.dim)
        if not self.embedding.url:
            raise ConfigError("[embedding].url is required for kind = 'http'")
        return HttpEmbeddingClient(self.embedding.url, self.embedding.model, self.embedding.instruction)

    def llm_client(self):
        if self.llm is None:
            raise ConfigError("no [llm] section")
        return HttpChatClient(self.llm.url, self.llm.model)

    @property
    def judge_temperature(self) -> float:
        return self.judge.temperature if self.judge else 0.3

    def judge_client(self):
        if self.judge is None:
            return None
        return HttpChatClient(self.judge.url, self.judge.model,
                              api_key=os.environ.get("LEXRAG_JUDGE_API_KEY"))


def _section(cls, raw: dict | None, name: str):
    if raw is None:
        return None
    allowed = {f.name for f in fields(cls)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"[{name}]: unknown key {sorted(unknown)[0]!r}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


def load_config(path) -> ServiceConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.parent

    def resolve(p):
        return None if p is None else (base / p).resolve()

    svc = dict(raw.get("service", {}))
    unknown = set(svc) - {"host", "port", "index", "dense_index"}
    if unknown:
        raise ConfigError(f"[service]: unknown key {sorted(unknown)[0]!r}")
    return ServiceConfig(
        host=svc.get("host", "127.0.0.1"),
        port=int(svc.get("port", 8080)),
        index=resolve(svc.get("index")),
        dense_index=resolve(svc.get("dense_index")),
        bm25=_section(Bm25Params, raw.get("bm25", {}), "bm25"),
        fusion=_section(FusionConfig, raw.get("fusion", {}), "fusion"),
        embedding=_section(EmbeddingConfig, raw.get("embedding"), "embedding"),
        agent=_section(AgentConfig, raw.get("agent", {}), "agent"),
        llm=_section(EndpointConfig, raw.get("llm"), "llm"),
        judge=_section(EndpointConfig, raw.get("judge"), "judge"),
    )
