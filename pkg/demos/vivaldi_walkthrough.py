"""Replay the two-search Vivaldi trajectory with a scripted model and score it."""

from lexrag import data_path
from lexrag.agent import AgentConfig, run_agent
from lexrag.eval import exact_match, load_qa_jsonl, trajectory_metrics, word_f1
from lexrag.index import build_index, ingest_jsonl
from lexrag.llm import ScriptedLLM, answer_call, say, search_call
from lexrag.search import LogicalRetriever

retriever = LogicalRetriever(build_index(ingest_jsonl(data_path("mini_corpus.jsonl"))))
example = next(e for e in load_qa_jsonl(data_path("mini_qa.jsonl")) if e.question_id == "q-vivaldi")

llm = ScriptedLLM([
    say("Find who was born on 4 March 1678, then check the libretto constraint."),
    search_call("born 4 March 1678", default_operator="AND"),
    search_call("Antonio Vivaldi operas Italian libretto", default_operator="OR"),
    answer_call("Antonio Vivaldi"),
])
traj = run_agent(example.question, AgentConfig(), retriever, llm, example.question_id)

print(example.question)
print(f"plan: {traj.plan_text}\n")
for turn in traj.turns:
    print(f"turn {turn.turn_index}: {turn.query!r} ({turn.default_operator})")
    for r in turn.retrieved:
        print(f"    {r.doc_id:14} {r.title}")
print(f"\nanswer: {traj.answer}  (gold: {example.gold_answers[0]})")
print(f"EM {exact_match(traj.answer, example.gold_answers)}  F1 {word_f1(traj.answer, example.gold_answers):.2f}")

m = trajectory_metrics([traj])
print(f"same-intent overlap: {m.overlap}  intent recovery: {m.recovery}")
for note in m.notes:
    print(f"  note: {note}")
