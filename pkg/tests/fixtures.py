"""Bundled mini-corpus helpers and the scripted Vivaldi walkthrough."""

from functools import lru_cache

from lexrag import data_path
from lexrag.eval import load_qa_jsonl
from lexrag.index import build_index, ingest_jsonl
from lexrag.llm import PolicyLLM, ScriptedLLM, answer_call, say, search_call

VIVALDI_PLAN = ("Look up births on 4 March 1678 first, keep only composers, "
                "then check which one wrote operas to Italian texts.")


@lru_cache(maxsize=None)
def mini_docs():
    return tuple(ingest_jsonl(data_path("mini_corpus.jsonl")))


@lru_cache(maxsize=None)
def mini_snapshot():
    return build_index(mini_docs())


@lru_cache(maxsize=None)
def mini_qa():
    return tuple(load_qa_jsonl(data_path("mini_qa.jsonl")))


def vivaldi_llm() -> ScriptedLLM:
    return ScriptedLLM([
        say(VIVALDI_PLAN),
        search_call("born 4 March 1678", default_operator="AND"),
        search_call("Antonio Vivaldi operas Italian libretto", default_operator="OR"),
        answer_call("Antonio Vivaldi"),
    ])


# one probe per mini QA question; each returns nothing once gold passages are pruned
UNAVAILABLE_PROBES = {
    "q-vivaldi": ("born 4 March 1678", "AND"),
    "q-handel": ("rinaldo AND handel", "OR"),
    "q-curie": ('"marie curie"', "OR"),
    "q-eiffel": ('title:"Eiffel Tower"', "OR"),
    "q-lovelace": ("lovelace", "OR"),
    "q-kilimanjaro": ("title:kilimanjaro", "OR"),
    "q-gutenberg": ("gutenberg AND printing", "OR"),
    "q-galileo": ('"galileo galilei"', "OR"),
    "q-mozart": ("title:mozart", "OR"),
    "q-danube": ("vienna AND budapest", "OR"),
}


def cautious_llm(probe, fallback_answer=None):
    """Searches once; refuses if the search came back empty unless a fallback answer is scripted."""
    query, op = probe

    def decide(messages, tools):
        tool_results = [m["content"] for m in messages if m["role"] == "tool"]
        if all(r.startswith("No passages matched") for r in tool_results):
            return answer_call(fallback_answer) if fallback_answer else answer_call(refuse=True)
        return answer_call("unsure")

    return ScriptedLLM([say("Search for the key entity."), search_call(query, default_operator=op), decide])


def verdict_judge(correct_answers):
    """Mock judge: 'correct' when the prediction line matches one of ``correct_answers``."""
    def policy(messages, tools):
        text = messages[-1]["content"]
        pred = text.split("Prediction:")[1].split("\n")[0].strip()
        return say("correct" if pred in correct_answers else "incorrect")

    return PolicyLLM(policy)
