"""Remove gold passages, run a cautious scripted agent, and report refusal/hallucination/gold-leak rates."""

from lexrag import data_path
from lexrag.agent import AgentConfig, run_agent
from lexrag.eval import build_unavailable_set, classify_unavailable, load_qa_jsonl, unavailable_rates
from lexrag.index import build_index, ingest_jsonl
from lexrag.llm import PolicyLLM, ScriptedLLM, answer_call, say, search_call
from lexrag.search import LogicalRetriever

subset = build_unavailable_set(load_qa_jsonl(data_path("mini_qa.jsonl")),
                               ingest_jsonl(data_path("mini_corpus.jsonl")))
retriever = LogicalRetriever(build_index(subset.corpus))
print(f"{len(subset.corpus)} passages left after pruning gold evidence for {len(subset.examples)} questions\n")



def agent_for(example):
    # refuses on empty results, otherwise trusts the first title it sees
    def decide(messages, tools):
        results = [m["content"] for m in messages if m["role"] == "tool"]
        if all(r.startswith("No passages matched") for r in results):
            return answer_call(refuse=True)
        return answer_call(results[-1].split("Title: ")[1].split("\n")[0] if "Title: " in results[-1] else "unsure")

    keywords = " ".join(w for w in example.question.rstrip("?").split() if w[:1].isupper())
    return ScriptedLLM([say("Look for the named entities."), search_call(keywords or example.question), decide])


def judge(messages, tools):
    return say("incorrect")


classes = []
for ex in subset.examples:
    traj = run_agent(ex.question, AgentConfig(), retriever, agent_for(ex), ex.question_id)
    label = classify_unavailable(traj, ex, PolicyLLM(judge))
    classes.append(label)
    print(f"{ex.question_id:15} {traj.outcome.kind:8} -> {label}")

refusal, hallucination, gold_leak = unavailable_rates(classes)
print(f"\nrefusal {refusal:.0%}  hallucination {hallucination:.0%}  gold leak {gold_leak:.0%}")
