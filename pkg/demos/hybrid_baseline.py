"""Sparse, dense and RRF-fused rankings side by side, using the offline hashing embedder."""

from lexrag import data_path
from lexrag.hybrid import HashingEmbedder, bag_of_terms, dense_search, embed_corpus, hybrid_search
from lexrag.index import build_index, ingest_jsonl
from lexrag.search import SearchRequest, search_topk

docs = list(ingest_jsonl(data_path("mini_corpus.jsonl")))
snapshot = build_index(docs)
embedder = HashingEmbedder(64)  # stand-in for a real embedding service
dense = embed_corpus(docs, embedder)

query = "Antonio Vivaldi operas Italian libretto"
sparse = search_topk(SearchRequest(bag_of_terms(query), 5), snapshot).doc_ids
dense_ids = [d for d, _ in dense_search(embedder.embed([query])[0], dense, 5)]
fused = hybrid_search(query, snapshot, dense, embedder, k=5)

print(f"query: {query}\n")
print(f"{'sparse':16}{'dense':16}fused")
for row in zip(sparse, dense_ids, fused.doc_ids):
    print("".join(f"{d:16}" for d in row))
print("\nphase timings (ms):", {k: round(v * 1000, 3) for k, v in fused.timings.items()})
