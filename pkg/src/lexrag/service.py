"""HTTP/1.1 JSON retrieval service.

``POST /v1/search`` with ``{query, max_results, default_operator, backend}``
returns ``{hits: [{doc_id, score, title, snippet}], total_candidates, took_ms}``.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .hybrid import EmbeddingError, HybridRetriever, reject_boolean_syntax
from .querylang import QuerySyntaxError
from .search import Bm25Params, LogicalRetriever

log = logging.getLogger(__name__)

MAX_RESULTS_LIMIT = 1000


class SearchService:
    """Request handling independent of the transport, so it can be tested directly."""

    def __init__(self, snapshot=None, params: Bm25Params = Bm25Params(), hybrid: HybridRetriever | None = None):
        self.logical = LogicalRetriever(snapshot, params) if snapshot is not None else None
        self.hybrid = hybrid

    def health(self) -> tuple[int, dict]:
        if self.logical is None:
            return 503, {"status": "index not loaded"}
        return 200, {"status": "ok", "doc_count": self.logical.snapshot.doc_count,
                     "backends": ["logical"] + (["hybrid"] if self.hybrid else [])}

    def handle_search(self, payload) -> tuple[int, dict]:
        start = time.perf_counter()
        if self.logical is None:
            return 503, {"error": "index not loaded"}
        if not isinstance(payload, dict):
            return 400, {"error": "request body must be a JSON object", "position": 0}
        query = payload.get("query")
        if not isinstance(query, str):
            return 400, {"error": "field 'query' must be a string", "position": 0}
        max_results = payload.get("max_results", 5)
        if isinstance(max_results, bool) or not isinstance(max_results, int) or not 1 <= max_results <= MAX_RESULTS_LIMIT:
            return 400, {"error": f"max_results must be an integer in [1, {MAX_RESULTS_LIMIT}]", "position": 0}
        op = payload.get("default_operator", "OR")
        if op not in ("AND", "OR"):
            return 400, {"error": "default_operator must be AND or OR", "position": 0}
        backend = payload.get("backend", "logical")
        try:
            if backend == "logical":
                result = self.logical.search(query, max_results, op)
            elif backend == "hybrid":
                if self.hybrid is None:
                    return 400, {"error": "hybrid backend not enabled", "position": 0}
                reject_boolean_syntax(query)
                result = self.hybrid.search(query, max_results)
            else:
                return 400, {"error": f"unknown backend {backend!r}", "position": 0}
        except QuerySyntaxError as exc:
            return 400, {"error": exc.message, "position": exc.position}
        except EmbeddingError as exc:
            return 502, {"error": str(exc)}
        body = result.to_dict()
        body["took_ms"] = (time.perf_counter() - start) * 1000.0
        return 200, body


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True  # headers and body are separate writes; avoid delayed-ACK stalls
    service: SearchService = None  # set on the subclass built by make_server

    def _send(self, status: int, body: dict):
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        if self.path == "/healthz":
            self._send(*self.service.health())
        else:
            self._send(404, {"error": "not found"})

    def do_POST(self):
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length)
        if self.path != "/v1/search":
            self._send(404, {"error": "not found"})
            return
        try:
            payload = json.loads(raw or b"null")
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            self._send(400, {"error": "malformed JSON body", "position": getattr(exc, "pos", 0)})
            return
        try:
            self._send(*self.service.handle_search(payload))
        except Exception:  # noqa: BLE001 - keep the server alive, report 500
            log.exception("search failed")
            self._send(500, {"error": "internal error"})

    def log_message(self, fmt, *args):
        log.debug("%s - %s", self.address_string(), fmt % args)


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 128


def make_server(service: SearchService, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    handler = type("Handler", (_Handler,), {"service": service})
    return _Server((host, port), handler)


def start_background(service: SearchService, host: str = "127.0.0.1", port: int = 0):
    """Start a server on a daemon thread; returns ``(server, base_url)``.  Call ``server.shutdown()`` to stop."""
    server = make_server(service, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    h, p = server.server_address[:2]
    return server, f"http://{h}:{p}"
