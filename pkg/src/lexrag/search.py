"""Boolean candidate selection and BM25 ranking over an :class:`IndexSnapshot`.

The query decides which documents are eligible; BM25 only orders them.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from functools import reduce

import numpy as np

from .index import FIELDS, IndexSnapshot
from .querylang import And, Not, ParseOptions, Phrase, Term, parse_query, positive_leaves

SNIPPET_CHARS = 200


class RetrievalError(RuntimeError):
    """A retrieval call failed for reasons other than query syntax."""


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError("k1 must be >= 0")
        if not 0 <= self.b <= 1:
            raise ValueError("b must be in [0, 1]")


@dataclass(frozen=True)
class SearchRequest:
    ast: object
    max_results: int = 5
    params: Bm25Params = Bm25Params()

    def __post_init__(self):
        if self.max_results < 1:
            raise ValueError("max_results must be >= 1")


@dataclass(frozen=True)
class Hit:
    doc_id: str
    score: float
    title: str
    snippet: str


@dataclass
class SearchResult:
    hits: list[Hit]
    total_candidates: int
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def doc_ids(self) -> list[str]:
        return [h.doc_id for h in self.hits]

    def to_dict(self) -> dict:
        return {"hits": [asdict(h) for h in self.hits], "total_candidates": self.total_candidates}


def _scope_fields(scope: str) -> tuple[str, ...]:
    return FIELDS if scope == "any" else (scope,)


def idf(doc_count: int, df: int) -> float:
    return math.log(1.0 + (doc_count - df + 0.5) / (df + 0.5))


def phrase_hits(tokens, field_name: str, snapshot: IndexSnapshot) -> tuple[np.ndarray, np.ndarray]:
    """Ordinals containing the phrase in ``field_name`` and their occurrence counts.

    Each (ordinal, position) pair is packed into one int64 key; shifting token
    k's keys back by k turns phrase matching into a sorted-set intersection.
    """
    postings = [snapshot.posting(field_name, t) for t in tokens]
    if any(p is None for p in postings):
        return np.empty(0, np.int64), np.empty(0, np.int64)
    stride = int(snapshot.fields[field_name].lengths.max()) + 1
    starts = None
    for k, p in enumerate(postings):
        keys = np.repeat(p.ordinals.astype(np.int64), p.tfs) * stride + p.flat_positions - k
        starts = keys if starts is None else np.intersect1d(starts, keys, assume_unique=True)
        if starts.size == 0:
            return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.unique(starts // stride, return_counts=True)


def phrase_positions(tokens, field_name: str, doc, snapshot: IndexSnapshot) -> int:
    """Count start positions where ``tokens`` occur consecutively in one field of one doc."""
    ordinal = snapshot.ordinal_of[doc] if isinstance(doc, str) else int(doc)
    position_sets = []
    for t in tokens:
        p = snapshot.posting(field_name, t)
        pos = None if p is None else p.positions_for(ordinal)
        if pos is None:
            return 0
        position_sets.append(set(pos.tolist()))
    return sum(all(s + k in position_sets[k] for k in range(1, len(tokens)))
               for s in position_sets[0])


def _leaf_mask(leaf, snapshot: IndexSnapshot) -> np.ndarray:
    mask = np.zeros(snapshot.doc_count, dtype=bool)
    for f in _scope_fields(leaf.field):
        if isinstance(leaf, Term):
            p = snapshot.posting(f, leaf.token)
            if p is not None:
                mask[p.ordinals] = True
        else:
            mask[phrase_hits(leaf.tokens, f, snapshot)[0]] = True
    return mask


def candidate_mask(ast, snapshot: IndexSnapshot) -> np.ndarray:
    if isinstance(ast, (Term, Phrase)):
        return _leaf_mask(ast, snapshot)
    if isinstance(ast, Not):
        # a bare negation has no positive set to subtract from
        return np.zeros(snapshot.doc_count, dtype=bool)
    positives = [candidate_mask(c, snapshot) for c in ast.children if not isinstance(c, Not)]
    if not positives:
        return np.zeros(snapshot.doc_count, dtype=bool)
    combine = np.logical_and if isinstance(ast, And) else np.logical_or
    mask = reduce(combine, positives)
    for c in ast.children:
        if isinstance(c, Not):
            mask &= ~candidate_mask(c.child, snapshot)
    return mask


def evaluate_candidates(ast, snapshot: IndexSnapshot) -> set[int]:
    """Ordinals of documents satisfying the query's Boolean constraints."""
    return set(np.flatnonzero(candidate_mask(ast, snapshot)).tolist())


def _saturate(tf, lengths, avgdl, params: Bm25Params):
    norm = params.k1 * (1.0 - params.b + params.b * lengths / avgdl)
    return tf * (params.k1 + 1.0) / (tf + norm)


def _accumulate(leaf, snapshot: IndexSnapshot, params: Bm25Params, out: np.ndarray) -> None:
    n = snapshot.doc_count
    for f in _scope_fields(leaf.field):
        fi = snapshot.fields[f]
        if isinstance(leaf, Term):
            p = fi.posting(leaf.token)
            if p is None:
                continue
            ords, tf, weight = p.ordinals, p.tfs, idf(n, p.df)
        else:
            ords, tf = phrase_hits(leaf.tokens, f, snapshot)
            if ords.size == 0:
                continue
            weight = sum(idf(n, fi.df(t)) for t in leaf.tokens)
        out[ords] += leaf.boost * weight * _saturate(tf, fi.lengths[ords], fi.stats.avg_field_length, params)


def score_all(ast, snapshot: IndexSnapshot, params: Bm25Params = Bm25Params()) -> np.ndarray:
    """BM25 score of every document from the positive leaves of ``ast``."""
    scores = np.zeros(snapshot.doc_count, dtype=np.float64)
    for leaf in positive_leaves(ast):
        _accumulate(leaf, snapshot, params, scores)
    return scores


def score_bm25(ast, doc, snapshot: IndexSnapshot, params: Bm25Params = Bm25Params()) -> float:
    """Score a single document; ``doc`` is a doc_id or an ordinal."""
    ordinal = snapshot.ordinal_of[doc] if isinstance(doc, str) else int(doc)
    n = snapshot.doc_count
    total = 0.0
    for leaf in positive_leaves(ast):
        for f in _scope_fields(leaf.field):
            fi = snapshot.fields[f]
            if isinstance(leaf, Term):
                p = fi.posting(leaf.token)
                pos = None if p is None else p.positions_for(ordinal)
                tf = 0 if pos is None else len(pos)
                weight = idf(n, fi.df(leaf.token))
            else:
                tf = phrase_positions(leaf.tokens, f, ordinal, snapshot)
                weight = sum(idf(n, fi.df(t)) for t in leaf.tokens)
            if tf:
                total += leaf.boost * weight * float(
                    _saturate(tf, float(fi.lengths[ordinal]), fi.stats.avg_field_length, params))
    return total


def search_topk(request: SearchRequest, snapshot: IndexSnapshot) -> SearchResult:
    """Top ``max_results`` candidates by BM25, ties broken by doc_id ascending."""
    cand = np.flatnonzero(candidate_mask(request.ast, snapshot))
    if cand.size == 0:
        return SearchResult([], 0)
    scores = score_all(request.ast, snapshot, request.params)[cand]
    order = np.lexsort((snapshot.id_rank[cand], -scores))[: request.max_results]
    hits = []
    for i in order:
        doc = snapshot.document(int(cand[i]))
        hits.append(Hit(doc.doc_id, float(scores[i]), doc.title, doc.content[:SNIPPET_CHARS]))
    return SearchResult(hits, int(cand.size))


class LogicalRetriever:
    """Query-string front end: parse, then :func:`search_topk`."""

    backend = "logical"

    def __init__(self, snapshot: IndexSnapshot, params: Bm25Params = Bm25Params(),
                 allow_boolean_ops: bool = True):
        self.snapshot = snapshot
        self.params = params
        self.allow_boolean_ops = allow_boolean_ops

    def fetch(self, doc_id: str):
        return self.snapshot.document(self.snapshot.ordinal_of[doc_id])

    def search(self, query: str, max_results: int = 5, default_operator: str = "OR") -> SearchResult:
        start = time.perf_counter()
        opts = ParseOptions(default_operator=default_operator, allow_boolean_ops=self.allow_boolean_ops)
        ast = parse_query(query, opts)
        result = search_topk(SearchRequest(ast, max_results, self.params), self.snapshot)
        result.timings["search"] = time.perf_counter() - start
        return result
