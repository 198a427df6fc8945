"""Offline construction timing and closed-loop replay load generation."""

from __future__ import annotations

import json
import math
import threading
import time
from collections.abc import Callable, Iterable, Sequence
from dataclasses import asdict, dataclass, field

import httpx
import numpy as np

from .hybrid import DenseIndex, passage_text
from .index import Document, build_index


def percentile(samples: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest sample."""
    if len(samples) == 0:
        raise ValueError("percentile of an empty sample")
    if not 0 < p <= 100:
        raise ValueError("p must be in (0, 100]")
    ordered = sorted(samples)
    rank = math.ceil(round(p * len(ordered) / 100, 9))
    return ordered[max(rank, 1) - 1]


@dataclass(frozen=True)
class ReplayQuery:
    backend: str
    query: str
    max_results: int = 5
    default_operator: str | None = None


@dataclass
class ReplayWorkload:
    queries: list[ReplayQuery]
    warmup_count: int = 0
    concurrency_levels: tuple[int, ...] = (1, 16)

    def __post_init__(self):
        if not self.queries:
            raise ValueError("workload has no queries")
        if any(c < 1 for c in self.concurrency_levels):
            raise ValueError("concurrency levels must be >= 1")
        if self.warmup_count < 0 or self.warmup_count >= len(self.queries):
            raise ValueError("warmup_count must leave at least one measured query")


def workload_from_trajectories(trajectories, backend: str | None = None) -> list[ReplayQuery]:
    """Successfully parsed queries, in trajectory order."""
    out = []
    for traj in trajectories:
        for turn in traj.turns:
            if turn.parse_ok and turn.query:
                out.append(ReplayQuery(backend or traj.backend, turn.query, turn.max_results,
                                       turn.default_operator))
    return out


def save_workload(queries: Iterable[ReplayQuery], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(json.dumps(asdict(q), ensure_ascii=False) + "\n")


def load_workload(path) -> list[ReplayQuery]:
    with open(path, encoding="utf-8") as fh:
        return [ReplayQuery(**json.loads(line)) for line in fh if line.strip()]


@dataclass
class LatencyReport:
    backend: str
    concurrency: int
    qps: float
    mean_ms: float
    p95_ms: float
    count: int
    failures: int = 0
    median_ms: float = 0.0

    def to_dict(self) -> dict:
        return {"backend": self.backend, "concurrency": self.concurrency, "QPS": self.qps,
                "Mean ms": self.mean_ms, "P95 ms": self.p95_ms, "count": self.count,
                "failures": self.failures, "median_ms": self.median_ms}


@dataclass
class ConstructionReport:
    backend: str
    phases: dict[str, float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return sum(self.phases.values())

    def to_dict(self) -> dict:
        return {"backend": self.backend, "phases_s": dict(self.phases), "total_s": self.total}


def measure_construction(corpus: Iterable[Document], backend: str = "logical", embedder=None,
                         batch_size: int = 64) -> ConstructionReport:
    """Wall-clock each offline phase.  Logical: inverted index only.  Hybrid adds embedding and dense index."""
    docs = list(corpus)
    report = ConstructionReport(backend)
    t0 = time.perf_counter()
    build_index(docs)
    report.phases["inverted_index"] = time.perf_counter() - t0
    if backend == "hybrid":
        if embedder is None:
            raise ValueError("hybrid construction needs an embedder")
        t1 = time.perf_counter()
        vectors = [embedder.embed([passage_text(d) for d in docs[i : i + batch_size]])
                   for i in range(0, len(docs), batch_size)]
        t2 = time.perf_counter()
        report.phases["embedding"] = t2 - t1
        DenseIndex([d.doc_id for d in docs], np.vstack(vectors))
        report.phases["dense_index"] = time.perf_counter() - t2
    elif backend != "logical":
        raise ValueError(f"unknown backend {backend!r}")
    return report


def synthetic_corpus(n_docs: int, vocab_size: int = 5000, content_len: int = 60, seed: int = 0) -> list[Document]:
    """Zipf-distributed pseudo-words, deterministic for a seed.  Good enough for load tests."""
    rng = np.random.default_rng(seed)
    ranks = np.arange(1, vocab_size + 1)
    probs = 1.0 / ranks
    probs /= probs.sum()
    words = np.array([f"w{i}" for i in range(vocab_size)])
    titles = words[rng.choice(vocab_size, size=(n_docs, 4), p=probs)]
    contents = words[rng.choice(vocab_size, size=(n_docs, content_len), p=probs)]
    return [Document(f"syn-{i:06d}", " ".join(titles[i]), " ".join(contents[i])) for i in range(n_docs)]


def synthetic_queries(n: int, vocab_size: int = 5000, seed: int = 1) -> list[ReplayQuery]:
    """A mix of bag-of-words, Boolean, phrase and field queries over :func:`synthetic_corpus` words."""
    rng = np.random.default_rng(seed)

    def w():
        return f"w{int(rng.integers(0, min(vocab_size, 500)))}"

    shapes = [
        lambda: (f"{w()} {w()} {w()}", "OR"),
        lambda: (f"{w()} {w()}", "AND"),
        lambda: (f"({w()} OR {w()}) AND NOT {w()}", "OR"),
        lambda: (f'"{w()} {w()}" OR title:{w()}', "OR"),
        lambda: (f"{w()}^2 {w()}", "OR"),
    ]
    out = []
    for i in range(n):
        query, op = shapes[i % len(shapes)]()
        out.append(ReplayQuery("logical", query, 5, op))
    return out


class HttpSearchTarget:
    """Sends replay queries to ``POST {base_url}/v1/search``; one connection per client thread."""

    def __init__(self, base_url: str, timeout: float = 30.0):
        self.url = base_url.rstrip("/") + "/v1/search"
        self.timeout = timeout
        self._local = threading.local()

    def prepare(self):
        if getattr(self._local, "client", None) is None:
            self._local.client = httpx.Client(timeout=self.timeout)

    def __call__(self, q: ReplayQuery) -> None:
        self.prepare()
        payload = {"query": q.query, "max_results": q.max_results, "backend": q.backend}
        if q.default_operator:
            payload["default_operator"] = q.default_operator
        resp = self._local.client.post(self.url, json=payload)
        if resp.status_code != 200:
            raise RuntimeError(f"HTTP {resp.status_code}: {resp.text[:200]}")


def _client_loop(target, shard, start, latencies, failures, idx):
    prepare = getattr(target, "prepare", None)
    if prepare:
        prepare()
    start.wait()
    lat = []
    fails = 0
    for q in shard:
        t0 = time.perf_counter()
        try:
            target(q)
        except Exception:  # noqa: BLE001 - any failure is counted, not raised
            fails += 1
            continue
        lat.append((time.perf_counter() - t0) * 1000.0)
    latencies[idx] = lat
    failures[idx] = fails


def replay_level(queries: Sequence[ReplayQuery], target: Callable, concurrency: int,
                 warmup_count: int = 0, backend: str | None = None) -> LatencyReport:
    """Closed-loop replay: ``concurrency`` clients each wait for a response before sending the next."""
    for q in queries[:warmup_count]:
        try:
            target(q)
        except Exception:  # noqa: BLE001 - warmup failures are not measured
            pass
    timed = list(queries[warmup_count:])
    shards = [timed[i::concurrency] for i in range(concurrency)]
    latencies: list = [None] * concurrency
    failures = [0] * concurrency
    start = threading.Barrier(concurrency + 1)
    threads = [threading.Thread(target=_client_loop, args=(target, shards[i], start, latencies, failures, i))
               for i in range(concurrency)]
    for t in threads:
        t.start()
    start.wait()
    t0 = time.perf_counter()
    for t in threads:
        t.join()
    elapsed = time.perf_counter() - t0
    samples = [x for lat in latencies for x in lat]
    n = len(samples)
    return LatencyReport(
        backend or (queries[0].backend if queries else ""), concurrency,
        qps=n / elapsed if elapsed > 0 else 0.0,
        mean_ms=sum(samples) / n if n else 0.0,
        p95_ms=percentile(samples, 95) if n else 0.0,
        count=n, failures=sum(failures),
        median_ms=percentile(samples, 50) if n else 0.0,
    )


def replay_load(workload: ReplayWorkload, target: Callable) -> list[LatencyReport]:
    """One report per (backend, concurrency level)."""
    reports = []
    backends = list(dict.fromkeys(q.backend for q in workload.queries))
    for backend in backends:
        queries = [q for q in workload.queries if q.backend == backend]
        warmup = min(workload.warmup_count, len(queries) - 1)
        for c in workload.concurrency_levels:
            reports.append(replay_level(queries, target, c, warmup, backend))
    return reports
