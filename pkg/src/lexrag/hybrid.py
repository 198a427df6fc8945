"""Hybrid baseline: BM25 and exact dense rankings combined with RRF."""

from __future__ import annotations

import json
import os
import re
import time
import zlib
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import httpx
import numpy as np

from .index import Document, IndexFormatError, IndexIntegrityError, IndexSnapshot, analyze
from .querylang import Or, QuerySyntaxError, Term
from .search import Bm25Params, Hit, RetrievalError, SearchRequest, SearchResult, search_topk, SNIPPET_CHARS

DENSE_FORMAT = "lexrag-dense"
DENSE_FORMAT_VERSION = 1
DEFAULT_INSTRUCTION = "Given a web search query, retrieve relevant passages that answer the query"
NORM_TOLERANCE = 1e-6


class EmbeddingError(RetrievalError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    rrf_k: int = 60
    per_list_depth: int = 50

    def __post_init__(self):
        if self.rrf_k < 1 or self.per_list_depth < 1:
            raise ValueError("rrf_k and per_list_depth must be >= 1")


def normalize_rows(vectors) -> np.ndarray:
    v = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero vector")
    return v / norms


class DenseIndex:
    """Exact inner-product index over unit vectors, keyed by doc_id."""

    def __init__(self, doc_ids: Sequence[str], vectors):
        v = np.array(vectors, dtype=np.float64)
        if v.ndim != 2 or len(doc_ids) != v.shape[0]:
            raise ValueError("vectors must be a (count, dim) array aligned with doc_ids")
        if len(set(doc_ids)) != len(doc_ids):
            raise ValueError("duplicate doc_id in dense index")
        if v.size and np.max(np.abs(np.linalg.norm(v, axis=1) - 1.0)) > NORM_TOLERANCE:
            raise ValueError("dense vectors must be unit-normalized")
        v.setflags(write=False)
        self.doc_ids = tuple(doc_ids)
        self.vectors = v
        order = sorted(range(len(self.doc_ids)), key=self.doc_ids.__getitem__)
        self._id_rank = np.empty(len(order), dtype=np.int64)
        self._id_rank[order] = np.arange(len(order))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def count(self) -> int:
        return self.vectors.shape[0]


def dense_search(query_vector, index: DenseIndex, k: int) -> list[tuple[str, float]]:
    """Exact top-k by dot product, descending; ties by doc_id ascending."""
    q = np.asarray(query_vector, dtype=np.float64).ravel()
    if q.shape[0] != index.dim:
        raise ValueError(f"query dimension {q.shape[0]} does not match index dimension {index.dim}")
    sims = index.vectors @ q
    order = np.lexsort((index._id_rank, -sims))[:k]
    return [(index.doc_ids[i], float(sims[i])) for i in order]


def rrf_fuse(lists: Sequence[Sequence[str]], config: FusionConfig = FusionConfig()) -> list[tuple[str, float]]:
    """Reciprocal rank fusion: score(d) = sum of 1 / (rrf_k + rank), ranks 1-based."""
    if len(lists) == 0:
        raise ValueError("rrf_fuse needs at least one ranked list")
    ranks: dict[str, list[int]] = {}
    for ranked in lists:
        if len(set(ranked)) != len(ranked):
            raise ValueError("ranked lists must not contain duplicates")
        for rank, doc_id in enumerate(ranked, start=1):
            ranks.setdefault(doc_id, []).append(rank)
    # summing in rank order makes the result independent of list order
    scored = [(d, sum(1.0 / (config.rrf_k + r) for r in sorted(rs))) for d, rs in ranks.items()]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored


# -- embeddings --------------------------------------------------------------

class HttpEmbeddingClient:
    """Client for a JSON embedding endpoint.

    Request ``{"model", "input": [...], "instruction"}``; response
    ``{"data": [{"embedding": [...]}, ...]}``.
    """

    def __init__(self, url: str, model: str, instruction: str = DEFAULT_INSTRUCTION,
                 timeout: float = 30.0, api_key: str | None = None, transport=None):
        self.url = url
        self.model = model
        self.instruction = instruction
        headers = {}
        api_key = api_key or os.environ.get("LEXRAG_EMBEDDING_API_KEY")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        payload = {"model": self.model, "input": list(texts), "instruction": self.instruction}
        try:
            resp = self._client.post(self.url, json=payload)
            resp.raise_for_status()
            data = resp.json()["data"]
            vectors = [item["embedding"] for item in data]
        except (httpx.HTTPError, KeyError, TypeError, ValueError) as exc:
            raise EmbeddingError(f"embedding request failed: {exc}") from exc
        if len(vectors) != len(texts):
            raise EmbeddingError(f"embedding service returned {len(vectors)} vectors for {len(texts)} inputs")
        return normalize_rows(vectors)

    def close(self):
        self._client.close()


class HashingEmbedder:
    """Deterministic offline embedder: signed feature hashing of analyzed tokens.

    Stands in for a model service in tests, demos and construction timing.
    """

    def __init__(self, dim: int = 64):
        self.dim = dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for row, text in enumerate(texts):
            tokens = analyze(text) or [""]
            for tok in tokens:
                h = zlib.crc32(tok.encode("utf-8"))
                out[row, h % self.dim] += 1.0 if (h >> 16) & 1 else -1.0
            if not out[row].any():
                out[row, zlib.crc32(text.encode("utf-8")) % self.dim] = 1.0
        return normalize_rows(out)


def passage_text(doc: Document) -> str:
    return f"{doc.title}\n{doc.content}" if doc.title else doc.content


def embed_corpus(documents: Sequence[Document], client, batch_size: int = 64) -> DenseIndex:
    vectors = []
    for i in range(0, len(documents), batch_size):
        batch = documents[i : i + batch_size]
        vectors.append(client.embed([passage_text(d) for d in batch]))
    return DenseIndex([d.doc_id for d in documents], np.vstack(vectors))


# -- persistence -------------------------------------------------------------

def save_dense_index(index: DenseIndex, path) -> None:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    blob = index.vectors.astype("<f8").tobytes()
    ids = "".join(json.dumps(d) + "\n" for d in index.doc_ids).encode("utf-8")
    (out / "vectors.bin").write_bytes(blob)
    (out / "ids.jsonl").write_bytes(ids)
    manifest = {
        "format": DENSE_FORMAT, "format_version": DENSE_FORMAT_VERSION,
        "dim": index.dim, "count": index.count,
        "vectors_bytes": len(blob), "vectors_crc32": zlib.crc32(blob),
        "ids_bytes": len(ids), "ids_crc32": zlib.crc32(ids),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_dense_index(path) -> DenseIndex:
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except FileNotFoundError:
        raise IndexFormatError(f"{root}: no manifest.json") from None
    except json.JSONDecodeError as exc:
        raise IndexIntegrityError(f"manifest.json: malformed at byte offset {exc.pos}") from None
    if manifest.get("format") != DENSE_FORMAT:
        raise IndexFormatError(f"{root}: not a {DENSE_FORMAT} directory")
    if manifest.get("format_version") != DENSE_FORMAT_VERSION:
        raise IndexFormatError(f"unsupported version {manifest.get('format_version')}")
    blobs = {}
    for name, key in (("vectors.bin", "vectors"), ("ids.jsonl", "ids")):
        data = (root / name).read_bytes()
        if len(data) != manifest[f"{key}_bytes"]:
            raise IndexIntegrityError(
                f"{name}: truncated at byte offset {len(data)} (expected {manifest[f'{key}_bytes']} bytes)")
        if zlib.crc32(data) != manifest[f"{key}_crc32"]:
            raise IndexIntegrityError(f"{name}: checksum mismatch")
        blobs[key] = data
    vectors = np.frombuffer(blobs["vectors"], dtype="<f8").reshape(manifest["count"], manifest["dim"])
    ids = [json.loads(line) for line in blobs["ids"].decode("utf-8").splitlines()]
    return DenseIndex(ids, vectors)


# -- hybrid retrieval ------------------------------------------------------------

_BOOLEAN_OP_RE = re.compile(r"(?<!\S)(AND|OR|NOT)(?!\S)")


def reject_boolean_syntax(query: str) -> None:
    """The hybrid tool takes natural language only."""
    m = _BOOLEAN_OP_RE.search(query)
    if m:
        raise QuerySyntaxError(
            f"Boolean operator {m.group(1)} is not supported by this search tool; "
            "use a natural-language query", m.start())


def bag_of_terms(query_text: str):
    tokens = analyze(query_text)
    if not tokens:
        return None
    terms = tuple(Term(t) for t in tokens)
    return terms[0] if len(terms) == 1 else Or(terms)


def hybrid_search(query_text: str, snapshot: IndexSnapshot, dense_index: DenseIndex, embed_client,
                  config: FusionConfig = FusionConfig(), k: int = 5,
                  params: Bm25Params = Bm25Params()) -> SearchResult:
    """BM25 list and dense list (each ``per_list_depth`` deep) fused by RRF; top ``k`` returned."""
    timings = {}
    t0 = time.perf_counter()
    ast = bag_of_terms(query_text)
    sparse = [] if ast is None else search_topk(
        SearchRequest(ast, config.per_list_depth, params), snapshot).doc_ids
    t1 = time.perf_counter()
    timings["sparse"] = t1 - t0
    qvec = embed_client.embed([query_text])[0]
    t2 = time.perf_counter()
    timings["embed"] = t2 - t1
    dense = [d for d, _ in dense_search(qvec, dense_index, config.per_list_depth)]
    t3 = time.perf_counter()
    timings["dense"] = t3 - t2
    fused = rrf_fuse([sparse, dense], config)
    t4 = time.perf_counter()
    timings["fuse"] = t4 - t3
    hits = []
    for doc_id, score in fused[:k]:
        doc = snapshot.document(snapshot.ordinal_of[doc_id])
        hits.append(Hit(doc_id, score, doc.title, doc.content[:SNIPPET_CHARS]))
    timings["fetch"] = time.perf_counter() - t4
    return SearchResult(hits, len(fused), timings)


class HybridRetriever:
    backend = "hybrid"

    def __init__(self, snapshot: IndexSnapshot, dense_index: DenseIndex, embed_client,
                 config: FusionConfig = FusionConfig(), params: Bm25Params = Bm25Params()):
        missing = [d for d in dense_index.doc_ids if d not in snapshot.ordinal_of]
        if missing:
            raise ValueError(f"dense index has {len(missing)} doc ids absent from the snapshot, e.g. {missing[0]}")
        self.snapshot = snapshot
        self.dense_index = dense_index
        self.embed_client = embed_client
        self.config = config
        self.params = params

    def fetch(self, doc_id: str):
        return self.snapshot.document(self.snapshot.ordinal_of[doc_id])

    def search(self, query: str, max_results: int = 5) -> SearchResult:
        reject_boolean_syntax(query)
        return hybrid_search(query, self.snapshot, self.dense_index, self.embed_client,
                             self.config, max_results, self.params)
