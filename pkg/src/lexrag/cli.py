"""Command-line entry point: ``lexrag <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .agent import export_trajectories, import_trajectories, run_agent
from .bench import (HttpSearchTarget, ReplayWorkload, load_workload, measure_construction, replay_load,
                    save_workload, workload_from_trajectories)
from .config import ConfigError, load_config
from .eval import (EvalRecord, LlmIntentGrouper, build_unavailable_set, classify_unavailable, eval_report, gold_success,
                   load_qa_jsonl, score_answers, trajectory_metrics)
from .hybrid import HashingEmbedder, HybridRetriever, load_dense_index
from .index import build_index, ingest_jsonl, load_index, save_index, write_jsonl
from .querylang import QuerySyntaxError
from .search import LogicalRetriever

log = logging.getLogger("lexrag")


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, ensure_ascii=False)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _retriever(cfg, snapshot):
    if cfg.agent.backend == "hybrid":
        if not cfg.hybrid_enabled:
            raise ConfigError("agent.backend = 'hybrid' needs [service].dense_index and [embedding]")
        return HybridRetriever(snapshot, load_dense_index(cfg.dense_index), cfg.embedder(), cfg.fusion, cfg.bm25)
    return LogicalRetriever(snapshot, cfg.bm25, cfg.agent.allow_boolean_ops)


def _require_index(cfg):
    if cfg.index is None:
        raise ConfigError("[service].index is not set")
    return load_index(cfg.index)


# -- commands ------------------------------------------------------------------

def cmd_index_build(args):
    snapshot = build_index(ingest_jsonl(args.corpus))
    save_index(snapshot, args.out)
    print(f"indexed {snapshot.doc_count} documents into {args.out} in {snapshot.build_seconds:.3f}s")


def cmd_search(args):
    retriever = LogicalRetriever(load_index(args.index))
    result = retriever.search(args.query, args.k, args.default_op)
    if args.json:
        _emit(result.to_dict())
        return
    print(f"{result.total_candidates} candidates")
    for rank, hit in enumerate(result.hits, start=1):
        print(f"{rank:>3}. {hit.score:8.4f}  {hit.doc_id}  [{hit.title}]")
        print(f"     {hit.snippet[:120]}")


def cmd_serve(args):
    from .service import SearchService, make_server

    cfg = load_config(args.config)
    snapshot = _require_index(cfg)
    hybrid = None
    if cfg.hybrid_enabled:
        hybrid = HybridRetriever(snapshot, load_dense_index(cfg.dense_index), cfg.embedder(), cfg.fusion, cfg.bm25)
    server = make_server(SearchService(snapshot, cfg.bm25, hybrid), cfg.host, args.port or cfg.port)
    host, port = server.server_address[:2]
    print(f"serving {snapshot.doc_count} documents on http://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


def cmd_agent_run(args):
    cfg = load_config(args.config)
    retriever = _retriever(cfg, _require_index(cfg))
    llm = cfg.llm_client()
    trajectories = []
    for ex in load_qa_jsonl(args.questions):
        traj = run_agent(ex.question, cfg.agent, retriever, llm, ex.question_id)
        log.info("%s: %s after %d turns", ex.question_id, traj.outcome.kind, len(traj.turns))
        trajectories.append(traj)
    export_trajectories(trajectories, args.out)
    print(f"wrote {len(trajectories)} trajectories to {args.out}")


def _judge(args):
    """(judge client or None, judge temperature) from ``--config``."""
    if not args.config:
        return None, 0.3
    cfg = load_config(args.config)
    return cfg.judge_client(), cfg.judge_temperature


def cmd_eval_score(args):
    judge, temperature = _judge(args)
    records = score_answers(load_qa_jsonl(args.questions), import_trajectories(args.trajectories), judge, temperature)
    _emit(eval_report(records), args.out)


def cmd_eval_prune(args):
    subset = build_unavailable_set(load_qa_jsonl(args.questions), ingest_jsonl(args.corpus), args.size)
    write_jsonl(subset.corpus, args.out_corpus)
    with open(args.out_questions, "w", encoding="utf-8") as fh:
        for ex in subset.examples:
            fh.write(json.dumps({"id": ex.question_id, "question": ex.question, "answers": list(ex.gold_answers),
                                 "gold_passage_ids": list(ex.gold_passage_ids)}, ensure_ascii=False) + "\n")
    print(f"kept {len(subset.corpus)} documents, {len(subset.examples)} questions "
          f"({subset.skipped} without gold passages skipped)")


def cmd_eval_unavailable(args):
    judge, temperature = _judge(args)
    if judge is None:
        raise ConfigError("eval unavailable needs a [judge] section (pass --config)")
    by_id = {t.question_id: t for t in import_trajectories(args.trajectories)}
    records = []
    for ex in load_qa_jsonl(args.questions):
        traj = by_id.get(ex.question_id)
        rec = EvalRecord(ex.question_id)
        if traj is None:
            rec.error = "missing trajectory"
        else:
            try:
                rec.unavailable_class = classify_unavailable(traj, ex, judge, temperature)
            except ValueError as exc:
                rec.error = str(exc)
        records.append(rec)
    _emit(eval_report(records), args.out)


def cmd_eval_trajectory(args):
    trajectories = import_trajectories(args.trajectories)
    gold = {ex.question_id: ex.gold_passage_ids for ex in load_qa_jsonl(args.questions)} if args.questions else None
    grouper = None
    if args.config:
        cfg = load_config(args.config)
        if cfg.judge is not None:
            grouper = LlmIntentGrouper(cfg.judge_client(), cfg.judge_temperature)
    success_for = (lambda t: gold_success(gold.get(t.question_id, ()))) if gold else None
    m = trajectory_metrics(trajectories, grouper, success_for, args.k)
    _emit({"same_intent_overlap": m.overlap, "intent_recovery": m.recovery, "groups": m.groups,
           "repeated_groups": m.repeated_groups, "fallback_used": m.fallback_used, "notes": m.notes}, args.out)


def cmd_bench_construct(args):
    docs = list(ingest_jsonl(args.corpus))
    embedder = None
    if args.backend == "hybrid":
        embedder = load_config(args.config).embedder() if args.config else HashingEmbedder()
    _emit(measure_construction(docs, args.backend, embedder, args.batch_size).to_dict(), args.out)


def cmd_bench_workload(args):
    queries = workload_from_trajectories(import_trajectories(args.trajectories))
    save_workload(queries, args.out)
    print(f"wrote {len(queries)} queries to {args.out}")


def cmd_bench_replay(args):
    queries = load_workload(args.workload)
    workload = ReplayWorkload(queries, args.warmup, tuple(args.concurrency))
    reports = replay_load(workload, HttpSearchTarget(args.url))
    _emit([r.to_dict() for r in reports], args.out)


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lexrag", description="Boolean/BM25 retrieval for agentic question answering.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="command", required=True)

    idx = sub.add_parser("index", help="build a persistent index").add_subparsers(dest="sub", required=True)
    b = idx.add_parser("build", help="index a JSONL corpus")
    b.add_argument("corpus")
    b.add_argument("out")
    b.set_defaults(func=cmd_index_build)

    s = sub.add_parser("search", help="run one query against an index")
    s.add_argument("index")
    s.add_argument("query")
    s.add_argument("--default-op", choices=("AND", "OR"), default="OR")
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--json", action="store_true", help="print the raw result as JSON")
    s.set_defaults(func=cmd_search)

    sv = sub.add_parser("serve", help="run the HTTP retrieval service")
    sv.add_argument("config")
    sv.add_argument("--port", type=int, default=None, help="override [service].port")
    sv.set_defaults(func=cmd_serve)

    ag = sub.add_parser("agent", help="run the search agent").add_subparsers(dest="sub", required=True)
    r = ag.add_parser("run", help="answer every question in a QA JSONL file")
    r.add_argument("config")
    r.add_argument("questions")
    r.add_argument("out")
    r.set_defaults(func=cmd_agent_run)

    ev = sub.add_parser("eval", help="score answers and trajectories").add_subparsers(dest="sub", required=True)
    e = ev.add_parser("score", help="EM, F1 and optional judge accuracy")
    e.add_argument("questions")
    e.add_argument("trajectories")
    e.add_argument("--config", help="config with a [judge] section")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval_score)
    e = ev.add_parser("prune", help="remove gold passages to build an answer-unavailable corpus")
    e.add_argument("corpus")
    e.add_argument("questions")
    e.add_argument("out_corpus")
    e.add_argument("out_questions")
    e.add_argument("--size", type=int, default=None)
    e.set_defaults(func=cmd_eval_prune)
    e = ev.add_parser("unavailable", help="refusal / hallucination / gold-leak rates")
    e.add_argument("questions")
    e.add_argument("trajectories")
    e.add_argument("--config", help="config with a [judge] section")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval_unavailable)
    e = ev.add_parser("trajectory", help="same-intent overlap and intent recovery")
    e.add_argument("trajectories")
    e.add_argument("--questions", help="QA file with gold passage ids, enables recovery")
    e.add_argument("--config", help="config whose [judge] groups intents")
    e.add_argument("--k", type=int, default=None)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval_trajectory)

    bn = sub.add_parser("bench", help="construction and latency benchmarks").add_subparsers(dest="sub", required=True)
    c = bn.add_parser("construct", help="time offline index construction")
    c.add_argument("corpus")
    c.add_argument("--backend", choices=("logical", "hybrid"), default="logical")
    c.add_argument("--config", help="config whose [embedding] is used for hybrid")
    c.add_argument("--batch-size", type=int, default=64)
    c.add_argument("--out")
    c.set_defaults(func=cmd_bench_construct)
    w = bn.add_parser("workload", help="extract replay queries from trajectories")
    w.add_argument("trajectories")
    w.add_argument("out")
    w.set_defaults(func=cmd_bench_workload)
    rp = bn.add_parser("replay", help="closed-loop replay against a running service")
    rp.add_argument("workload")
    rp.add_argument("--url", required=True)
    rp.add_argument("--warmup", type=int, default=0)
    rp.add_argument("--concurrency", type=int, nargs="+", default=[1, 16])
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_bench_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 with usage on unknown commands
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except QuerySyntaxError as exc:
        print(f"lexrag: query error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError, OSError, RuntimeError) as exc:
        print(f"lexrag: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
