"""Parse a handful of queries against the bundled mini-corpus and show what matches."""

from lexrag import data_path
from lexrag.index import build_index, ingest_jsonl
from lexrag.querylang import ParseOptions, QuerySyntaxError, parse_query, render_query
from lexrag.search import SearchRequest, search_topk

snapshot = build_index(ingest_jsonl(data_path("mini_corpus.jsonl")))
print(f"{snapshot.doc_count} passages indexed\n")

QUERIES = [
    ("born 4 March 1678", "OR"),
    ("born 4 March 1678", "AND"),
    ('title:"antonio vivaldi"', "OR"),
    ("opera AND (italian OR libretto) AND NOT handel", "OR"),
    ("vivaldi^3 opera", "OR"),
]

for text, op in QUERIES:
    ast = parse_query(text, ParseOptions(op))
    result = search_topk(SearchRequest(ast, 3), snapshot)
    print(f"{text!r} [{op}]")
    print(f"  parsed   {render_query(ast)}")
    print(f"  matched  {result.total_candidates}")
    for hit in result.hits:
        print(f"    {hit.score:7.3f}  {hit.doc_id}")
    print()

# errors carry a character offset the agent can act on
for bad in ["AND opera", '"antonio vivaldi', "vivaldi^0", "(NOT handel)"]:
    try:
        parse_query(bad)
    except QuerySyntaxError as exc:
        print(f"{bad!r:22} -> {exc}")
