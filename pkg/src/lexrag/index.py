"""Positional inverted index over the ``title`` and ``content`` fields.

The in-memory layout is the same compressed-sparse-row layout that is written
to disk: per field, a sorted lexicon plus flat ``int32``/``int64`` arrays for
document ordinals and token positions.  A :class:`PostingList` is a zero-copy
view into those arrays.
"""

from __future__ import annotations

import json
import re
import time
import zlib
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FIELDS = ("title", "content")
FORMAT_NAME = "lexrag-index"
FORMAT_VERSION = 1
BLOCK_SIZE = 1 << 16

_TOKEN_RE = re.compile(r"\w+")


class CorpusError(ValueError):
    """Invalid corpus input (bad JSONL, duplicate ids, empty corpus)."""


class IndexFormatError(ValueError):
    """An index directory cannot be read by this version."""


class IndexIntegrityError(IndexFormatError):
    """An index file is truncated or its contents fail the checksum."""


def analyze(text: str) -> list[str]:
    """Split text into lowercased word tokens.

    No stemming and no stopword removal; a token's position is its index in
    the returned list.

    >>> analyze("Antonio Vivaldi!")
    ['antonio', 'vivaldi']
    """
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    content: str

    def __post_init__(self):
        if not isinstance(self.doc_id, str) or not self.doc_id:
            raise CorpusError("doc_id must be a non-empty string")
        if not self.title and not self.content:
            raise CorpusError(f"document {self.doc_id} has neither title nor content")


@dataclass(frozen=True)
class FieldStats:
    field: str
    doc_count: int
    total_tokens: int
    avg_field_length: float


@dataclass(frozen=True, eq=False)
class PostingList:
    """Posting list for one (field, term): ordinals ascending, positions per entry."""

    term: str
    field: str
    ordinals: np.ndarray
    pos_ptr: np.ndarray
    flat_positions: np.ndarray

    @property
    def df(self) -> int:
        return len(self.ordinals)

    @property
    def tfs(self) -> np.ndarray:
        return np.diff(self.pos_ptr)

    def positions(self, i: int) -> np.ndarray:
        return self.flat_positions[self.pos_ptr[i] : self.pos_ptr[i + 1]]

    def positions_for(self, ordinal: int) -> np.ndarray | None:
        i = int(np.searchsorted(self.ordinals, ordinal))
        if i < len(self.ordinals) and self.ordinals[i] == ordinal:
            return self.positions(i)
        return None

    def entries(self) -> Iterator[tuple[int, list[int]]]:
        for i, ordinal in enumerate(self.ordinals):
            yield int(ordinal), self.positions(i).tolist()


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class FieldIndex:
    """CSR posting storage for a single field."""

    def __init__(self, name, terms, term_ptr, ordinals, pos_ptr, positions, lengths):
        self.name = name
        self.terms = tuple(terms)
        self.lexicon = {t: i for i, t in enumerate(self.terms)}
        self.term_ptr = _frozen(np.asarray(term_ptr, dtype="<i8"))
        self.ordinals = _frozen(np.asarray(ordinals, dtype="<i4"))
        self.pos_ptr = _frozen(np.asarray(pos_ptr, dtype="<i8"))
        self.positions = _frozen(np.asarray(positions, dtype="<i4"))
        self.lengths = _frozen(np.asarray(lengths, dtype="<i4"))
        n = len(self.lengths)
        total = int(self.lengths.sum())
        self.stats = FieldStats(name, n, total, total / n if n else 0.0)

    def posting(self, term: str) -> PostingList | None:
        t = self.lexicon.get(term)
        if t is None:
            return None
        lo, hi = int(self.term_ptr[t]), int(self.term_ptr[t + 1])
        ptr = self.pos_ptr[lo : hi + 1]
        return PostingList(term, self.name, self.ordinals[lo:hi], ptr - ptr[0],
                           self.positions[ptr[0] : ptr[-1]])

    def df(self, term: str) -> int:
        t = self.lexicon.get(term)
        return 0 if t is None else int(self.term_ptr[t + 1] - self.term_ptr[t])

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("term_ptr", self.term_ptr),
            ("ordinals", self.ordinals),
            ("pos_ptr", self.pos_ptr),
            ("positions", self.positions),
            ("lengths", self.lengths),
        ]


@dataclass(eq=False)
class IndexSnapshot:
    """A sealed, read-only index.  Safe to share between threads."""

    documents: tuple[Document, ...]
    fields: dict[str, FieldIndex]
    format_version: int = FORMAT_VERSION
    build_seconds: float = 0.0
    ordinal_of: dict[str, int] = field(init=False, repr=False)
    id_rank: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.ordinal_of = {d.doc_id: i for i, d in enumerate(self.documents)}
        order = sorted(range(len(self.documents)), key=lambda i: self.documents[i].doc_id)
        rank = np.empty(len(self.documents), dtype=np.int64)
        rank[order] = np.arange(len(order))
        self.id_rank = _frozen(rank)

    @property
    def doc_count(self) -> int:
        return len(self.documents)

    def stats(self, field_name: str) -> FieldStats:
        return self.fields[field_name].stats

    def posting(self, field_name: str, term: str) -> PostingList | None:
        return self.fields[field_name].posting(term)

    def df(self, field_name: str, term: str) -> int:
        return self.fields[field_name].df(term)

    def document(self, ordinal: int) -> Document:
        return self.documents[ordinal]


def build_index(corpus: Iterable[Document]) -> IndexSnapshot:
    """Build a sealed snapshot, assigning ordinals in input order."""
    start = time.perf_counter()
    documents: list[Document] = []
    seen: set[str] = set()
    acc: dict[str, dict[str, tuple[list[int], list[list[int]]]]] = {f: {} for f in FIELDS}
    lengths: dict[str, list[int]] = {f: [] for f in FIELDS}

    for ordinal, doc in enumerate(corpus):
        if doc.doc_id in seen:
            raise CorpusError(f"duplicate doc_id {doc.doc_id}")
        seen.add(doc.doc_id)
        documents.append(doc)
        for f in FIELDS:
            tokens = analyze(getattr(doc, f))
            lengths[f].append(len(tokens))
            local: dict[str, list[int]] = {}
            for pos, tok in enumerate(tokens):
                local.setdefault(tok, []).append(pos)
            bucket = acc[f]
            for tok, plist in local.items():
                entry = bucket.get(tok)
                if entry is None:
                    bucket[tok] = entry = ([], [])
                entry[0].append(ordinal)
                entry[1].append(plist)
    if not documents:
        raise CorpusError("empty corpus")

    fields = {}
    for f in FIELDS:
        bucket = acc[f]
        terms = sorted(bucket)
        dfs = [len(bucket[t][0]) for t in terms]
        term_ptr = np.zeros(len(terms) + 1, dtype=np.int64)
        np.cumsum(dfs, out=term_ptr[1:])
        ordinals = [o for t in terms for o in bucket[t][0]]
        plists = [p for t in terms for p in bucket[t][1]]
        pos_ptr = np.zeros(len(plists) + 1, dtype=np.int64)
        np.cumsum([len(p) for p in plists], out=pos_ptr[1:])
        positions = [x for p in plists for x in p]
        fields[f] = FieldIndex(f, terms, term_ptr, ordinals, pos_ptr, positions, lengths[f])

    return IndexSnapshot(tuple(documents), fields, build_seconds=time.perf_counter() - start)


def ingest_jsonl(path) -> Iterator[Document]:
    """Yield documents from a JSONL corpus with string fields id, title, contents."""
    count = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: malformed JSON ({exc.msg} at column {exc.colno})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"line {lineno}: expected a JSON object")
            for key in ("id", "title", "contents"):
                if key not in obj:
                    raise CorpusError(f"line {lineno}: missing field {key}")
                if not isinstance(obj[key], str):
                    raise CorpusError(f"line {lineno}: field {key} must be a string")
            try:
                doc = Document(obj["id"], obj["title"], obj["contents"])
            except CorpusError as exc:
                raise CorpusError(f"line {lineno}: {exc}") from None
            count += 1
            yield doc
    if count == 0:
        raise CorpusError("empty corpus")


def write_jsonl(documents: Iterable[Document], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in documents:
            fh.write(json.dumps({"id": d.doc_id, "title": d.title, "contents": d.content},
                                ensure_ascii=False) + "\n")


# -- persistence -----------------------------------------------------------

def _checksum_entry(data: bytes) -> dict:
    blocks = [zlib.crc32(data[i : i + BLOCK_SIZE]) for i in range(0, len(data), BLOCK_SIZE)]
    return {"bytes": len(data), "block_size": BLOCK_SIZE, "block_crc32": blocks}


def _serialize(snapshot: IndexSnapshot) -> tuple[dict, dict[str, bytes]]:
    files: dict[str, bytes] = {}
    files["documents.jsonl"] = "".join(
        json.dumps({"id": d.doc_id, "title": d.title, "contents": d.content},
                   ensure_ascii=False, sort_keys=True) + "\n"
        for d in snapshot.documents
    ).encode("utf-8")
    field_meta = {}
    for name, fi in snapshot.fields.items():
        files[f"lexicon-{name}.txt"] = "".join(t + "\n" for t in fi.terms).encode("utf-8")
        files[f"postings-{name}.bin"] = b"".join(a.tobytes() for _, a in fi.arrays())
        field_meta[name] = {
            "doc_count": fi.stats.doc_count,
            "total_tokens": fi.stats.total_tokens,
            "avg_field_length": fi.stats.avg_field_length,
            "arrays": {key: len(a) for key, a in fi.arrays()},
        }
    manifest = {
        "format": FORMAT_NAME,
        "format_version": snapshot.format_version,
        "doc_count": snapshot.doc_count,
        "fields": field_meta,
        "files": {name: _checksum_entry(data) for name, data in sorted(files.items())},
    }
    return manifest, files


def save_index(snapshot: IndexSnapshot, path) -> None:
    """Write the snapshot to a directory; the manifest is written last."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    manifest, files = _serialize(snapshot)
    for name, data in files.items():
        (out / name).write_bytes(data)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n",
                                      encoding="utf-8")


def _verify(name: str, data: bytes, entry: dict) -> None:
    expected = entry["bytes"]
    if len(data) != expected:
        raise IndexIntegrityError(
            f"{name}: truncated or extended at byte offset {min(len(data), expected)} "
            f"(expected {expected} bytes, found {len(data)})"
        )
    size = entry["block_size"]
    for k, crc in enumerate(entry["block_crc32"]):
        if zlib.crc32(data[k * size : (k + 1) * size]) != crc:
            raise IndexIntegrityError(
                f"{name}: checksum mismatch in block at byte offset {k * size}"
            )


_DTYPES = {"term_ptr": "<i8", "ordinals": "<i4", "pos_ptr": "<i8", "positions": "<i4", "lengths": "<i4"}


def load_index(path) -> IndexSnapshot:
    """Read and fully verify an index directory before exposing a snapshot."""
    root = Path(path)
    try:
        raw = (root / "manifest.json").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise IndexFormatError(f"{root}: no manifest.json") from None
    try:
        manifest = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise IndexIntegrityError(f"manifest.json: malformed at byte offset {exc.pos}") from None
    if manifest.get("format") != FORMAT_NAME:
        raise IndexFormatError(f"{root}: not a {FORMAT_NAME} directory")
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise IndexFormatError(f"unsupported version {version} (this build reads {FORMAT_VERSION})")

    blobs = {}
    for name, entry in manifest["files"].items():
        try:
            data = (root / name).read_bytes()
        except FileNotFoundError:
            raise IndexIntegrityError(f"{name}: missing") from None
        _verify(name, data, entry)
        blobs[name] = data

    documents = []
    for obj in map(json.loads, blobs["documents.jsonl"].decode("utf-8").splitlines()):
        documents.append(Document(obj["id"], obj["title"], obj["contents"]))
    if len(documents) != manifest["doc_count"]:
        raise IndexIntegrityError("documents.jsonl: document count disagrees with manifest")

    fields = {}
    for name in FIELDS:
        meta = manifest["fields"][name]
        terms = blobs[f"lexicon-{name}.txt"].decode("utf-8").split("\n")[:-1]
        buf = blobs[f"postings-{name}.bin"]
        offset = 0
        arrays = {}
        for key, dtype in _DTYPES.items():  # on-disk order, not manifest key order
            count = meta["arrays"][key]
            dtype = np.dtype(dtype)
            arrays[key] = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
            offset += count * dtype.itemsize
        if offset != len(buf) or len(terms) + 1 != len(arrays["term_ptr"]):
            raise IndexIntegrityError(f"postings-{name}.bin: layout disagrees with manifest")
        fields[name] = FieldIndex(name, terms, **arrays)
    return IndexSnapshot(tuple(documents), fields, format_version=version)


def snapshot_bytes(snapshot: IndexSnapshot) -> bytes:
    """Canonical serialized form; equal bytes imply equal snapshots."""
    manifest, files = _serialize(snapshot)
    parts = [json.dumps(manifest, sort_keys=True).encode()]
    parts.extend(files[name] for name in sorted(files))
    return b"".join(parts)
