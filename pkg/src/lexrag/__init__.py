"""Inverted-index retrieval with a Boolean query language, used as the search tool of a question-answering agent."""

from importlib import resources

from .agent import AgentConfig, Trajectory, run_agent
from .hybrid import DenseIndex, FusionConfig, HashingEmbedder, HybridRetriever, dense_search, rrf_fuse
from .index import Document, IndexSnapshot, analyze, build_index, ingest_jsonl, load_index, save_index
from .querylang import ParseOptions, QuerySyntaxError, parse_query, render_query
from .search import Bm25Params, LogicalRetriever, SearchRequest, SearchResult, search_topk

__version__ = "0.1.0"


def data_path(name: str):
    """Path to a bundled fixture, e.g. ``data_path("mini_corpus.jsonl")``."""
    return resources.files("lexrag") / "data" / name


__all__ = [
    "AgentConfig", "Bm25Params", "DenseIndex", "Document", "FusionConfig", "HashingEmbedder",
    "HybridRetriever", "IndexSnapshot", "LogicalRetriever", "ParseOptions", "QuerySyntaxError",
    "SearchRequest", "SearchResult", "Trajectory", "analyze", "build_index", "data_path", "dense_search",
    "ingest_jsonl", "load_index", "parse_query", "render_query", "rrf_fuse", "run_agent", "save_index",
    "search_topk",
]
