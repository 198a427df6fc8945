import logging
import random

import pytest
from hypothesis import given, settings, strategies as st

from lexrag.agent import AgentConfig, Outcome, Retrieved, Trajectory, Turn, run_agent
from lexrag.eval import (
    EvalRecord, IntentGroup, LlmIntentGrouper, LlmRelevanceJudge, MetricUndefined, QaExample, aggregate,
    build_unavailable_set, classify_unavailable, exact_match, exact_query_grouper, gold_success, group_intents,
    intent_recovery, judge_answer, normalize_answer, same_intent_overlap, score_answers, trajectory_metrics,
    unavailable_rates, word_f1,
)
from lexrag.index import Document, build_index
from lexrag.llm import LlmTransportError, PolicyLLM, ScriptedLLM
from lexrag.search import LogicalRetriever

from fixtures import UNAVAILABLE_PROBES, cautious_llm, mini_docs, mini_qa, mini_snapshot, verdict_judge, vivaldi_llm


@pytest.mark.parametrize("text,tokens", [
    ("Antonio Vivaldi.", ["antonio", "vivaldi"]),
    ("the Mona Lisa", ["mona", "lisa"]),
    ("", []),
    ("  A   cat, AN apple ", ["cat", "apple"]),
])
def test_normalize(text, tokens):
    assert normalize_answer(text) == tokens


def test_em_f1():
    assert exact_match("antonio vivaldi", ["Antonio Vivaldi"]) == 1
    assert word_f1("antonio vivaldi", ["Antonio Vivaldi"]) == 1.0
    assert exact_match("Antonio Vivaldi", ["Antonio Lucio Vivaldi"]) == 0
    # precision 1, recall 2/3
    assert word_f1("Antonio Vivaldi", ["Antonio Lucio Vivaldi"]) == pytest.approx(0.8, abs=1e-12)
    assert word_f1("cats", ["dogs"]) == 0.0 and exact_match("cats", ["dogs"]) == 0
    assert word_f1("Vivaldi", ["Bach", "Vivaldi"]) == 1.0
    assert word_f1("", ["x"]) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=30), st.text(max_size=30))
def test_metric_properties(a, b):
    assert normalize_answer(" ".join(normalize_answer(a))) == normalize_answer(a)
    assert word_f1(a, [b]) == pytest.approx(word_f1(b, [a]))
    if exact_match(a, [b]) and normalize_answer(a):
        assert word_f1(a, [b]) == 1.0
    assert 0.0 <= word_f1(a, [b]) <= 1.0


def test_judge_correct_and_fallback(caplog):
    assert judge_answer("q", "Antonio Vivaldi", ["Antonio Lucio Vivaldi"], ScriptedLLM(["correct"])) == "correct"
    assert judge_answer("q", "x", ["x"], ScriptedLLM(["Verdict: CORRECT."])) == "correct"
    assert judge_answer("q", "x", ["y"], ScriptedLLM(["incorrect"])) == "incorrect"
    with caplog.at_level(logging.WARNING):
        assert judge_answer("q", "x", ["y"], ScriptedLLM(["blah", "???"])) == "incorrect"
    assert "unparseable" in caplog.text
    assert judge_answer("q", "x", ["y"], ScriptedLLM(["blah", "correct"])) == "correct"


def test_judge_uses_low_temperature():
    judge = ScriptedLLM(["correct"])
    judge_answer("q", "x", ["x"], judge)
    assert judge.calls[0]["temperature"] == 0.3


def test_score_answers_records_judge_errors():
    examples = [QaExample("a", "q", ("x",)), QaExample("b", "q", ("y",))]
    trajs = [Trajectory("a", "q", outcome=Outcome("answer", "x")),
             Trajectory("b", "q", outcome=Outcome("answer", "z"))]
    failing = PolicyLLM(lambda m, t: (_ for _ in ()).throw(LlmTransportError("down")))
    records = score_answers(examples, trajs, failing)
    assert [r.error for r in records] == ["judge: down", "judge: down"]
    agg = aggregate(records)
    assert agg["errors"] == 2 and agg["em"] == 0.5 and "judge" not in agg


def test_build_unavailable_set():
    corpus = [Document(f"p{i}", "", f"text {i}") for i in range(5)]
    examples = [QaExample("e1", "q", ("a",), ("p1", "p2")), QaExample("e0", "q", ("a",)),
                QaExample("e2", "q", ("a",), ("p3",))]
    subset = build_unavailable_set(examples, corpus, 1)
    assert {d.doc_id for d in subset.corpus} == {"p0", "p3", "p4"}
    assert [e.question_id for e in subset.examples] == ["e1"]
    assert subset.skipped == 1
    with pytest.raises(ValueError, match="only 2"):
        build_unavailable_set(examples, corpus, 3)


def test_unavailable_subset_size():
    corpus = [Document(f"p{i}", "", "t") for i in range(500)]
    examples = [QaExample(f"e{i}", "q", ("a",), (f"p{i}",)) for i in range(450)]
    assert len(build_unavailable_set(examples, corpus, 400).examples) == 400


def test_classify():
    ex = QaExample("e", "q", ("Warsaw",))
    refusal = Trajectory("e", "q", outcome=Outcome("refusal"))
    assert classify_unavailable(refusal, ex, None) == "refusal"
    assert classify_unavailable(Trajectory("e", "q", outcome=Outcome("turn_limit")), ex, None) == "refusal"
    assert classify_unavailable(Trajectory("e", "q", outcome=Outcome("answer", "Warsaw")), ex,
                                ScriptedLLM(["correct"])) == "gold_leak"
    assert classify_unavailable(Trajectory("e", "q", outcome=Outcome("answer", "Paris")), ex,
                                ScriptedLLM(["incorrect"])) == "hallucination"
    with pytest.raises(ValueError):
        classify_unavailable(Trajectory("e", "q", outcome=Outcome("aborted")), ex, None)


def test_rates():
    labels = ["refusal"] * 8 + ["gold_leak", "hallucination"]
    assert unavailable_rates(labels) == (0.8, 0.1, 0.1)
    assert unavailable_rates(["refusal"] * 3) == (1.0, 0.0, 0.0)
    assert unavailable_rates([EvalRecord("x", unavailable_class="hallucination")]) == (0.0, 1.0, 0.0)
    with pytest.raises(MetricUndefined):
        unavailable_rates([])


def test_unavailable_protocol_on_mini_corpus():
    subset = build_unavailable_set(list(mini_qa()), mini_docs(), 10)
    retriever = LogicalRetriever(build_index(subset.corpus))
    judge = verdict_judge({"Danube"})
    classes = []
    for ex in subset.examples:
        fallback = {"q-danube": "Danube", "q-mozart": "Vienna"}.get(ex.question_id)
        traj = run_agent(ex.question, AgentConfig(), retriever, cautious_llm(UNAVAILABLE_PROBES[ex.question_id],
                                                                             fallback), ex.question_id)
        assert traj.turns[0].retrieved == []
        classes.append(classify_unavailable(traj, ex, judge))
    assert classes.count("refusal") == 8
    assert classes[subset.examples.index(next(e for e in subset.examples if e.question_id == "q-mozart"))] \
        == "hallucination"
    rates = unavailable_rates(classes)
    assert rates == (0.8, 0.1, 0.1) and sum(rates) == 1.0


# -- trajectory metrics ------------------------------------------------------------

def make_traj(queries, retrieved):
    turns = [Turn(i, q, True, [Retrieved(d, d) for d in r], "") for i, (q, r) in enumerate(zip(queries, retrieved), 1)]
    return Trajectory("t", "q?", turns=turns, outcome=Outcome("answer", "x"))


def test_overlap_examples():
    g = IntentGroup(1, [1, 2], [["d1", "d2", "d3", "d4", "d5"], ["d4", "d5", "d6", "d7", "d8"]])
    assert same_intent_overlap([g]) == pytest.approx(0.4)
    same = IntentGroup(2, [1, 2], [["a", "b"], ["b", "a"]])
    disjoint = IntentGroup(3, [3, 4], [["a"], ["b"]])
    assert same_intent_overlap([same]) == 1.0 and same_intent_overlap([disjoint]) == 0.0
    assert same_intent_overlap([g, same, disjoint, IntentGroup(4, [5], [["z"]])]) == pytest.approx(1.4 / 3)
    with pytest.raises(MetricUndefined, match="no repeated intents"):
        same_intent_overlap([IntentGroup(1, [1], [["a"]])])


def test_overlap_truncated_lists_and_k():
    g = IntentGroup(1, [1, 2], [["a", "b", "c"], ["a"]])
    assert same_intent_overlap([g]) == pytest.approx(1 / 3)
    assert same_intent_overlap([g], k=1) == 1.0
    assert same_intent_overlap([IntentGroup(1, [1, 2], [[], []])]) == 1.0


def test_recovery_examples():
    mk = lambda flags: IntentGroup(0, list(range(len(flags))), [[]] * len(flags), flags)  # noqa: E731
    assert intent_recovery([mk([False, False, True])]) == 1.0
    assert intent_recovery([mk([False, False]), mk([False, True])]) == 0.5
    assert intent_recovery([mk([False, True]), mk([True, False]), mk([False])]) == 1.0
    with pytest.raises(MetricUndefined, match="no recoverable intents"):
        intent_recovery([mk([True, False])])


def test_group_intents_scripted_and_fallback():
    traj = make_traj(["vivaldi birth", "vivaldi born 1678", "mozart"], [["a"], ["a"], ["b"]])
    groups = group_intents(traj, lambda qs: [[1, 2], [3]])
    assert [g.turn_indices for g in groups] == [[1, 2], [3]]
    assert groups[0].source == "judge"
    groups = group_intents(traj, lambda qs: [[1, 2]])
    assert [g.turn_indices for g in groups] == [[1, 2], [3]]
    groups = group_intents(traj, lambda qs: 1 / 0)
    assert [g.turn_indices for g in groups] == [[1], [2], [3]] and groups[0].source == "fallback"
    assert [g.turn_indices for g in group_intents(make_traj(["A b", "a  B!", "c"], [[], [], []]))] == [[1, 2], [3]]


def test_exact_query_grouper():
    assert exact_query_grouper(["x", "y", "X"]) == [[1, 3], [2]]


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 9), st.lists(st.lists(st.integers(-2, 12), max_size=6), max_size=6))
def test_partition_totality_under_fuzzed_grouper(n, assignment):
    traj = make_traj([f"q{i}" for i in range(n)], [[f"d{i}"] for i in range(n)])
    groups = group_intents(traj, lambda qs: assignment)
    members = sorted(i for g in groups for i in g.turn_indices)
    assert members == list(range(1, n + 1))


def test_llm_grouper_and_relevance_judge():
    grouper = LlmIntentGrouper(ScriptedLLM(['Sure: {"groups": [[1, 3], [2]]}']))
    assert grouper(["a", "b", "a again"]) == [[1, 3], [2]]
    bad = LlmIntentGrouper(ScriptedLLM(["no idea"]))
    traj = make_traj(["a", "a"], [["x"], ["x"]])
    assert group_intents(traj, bad)[0].source == "fallback"
    judge = LlmRelevanceJudge(ScriptedLLM(["Yes."]))
    assert judge(traj.turns[0]) is True
    assert LlmRelevanceJudge(ScriptedLLM([])).__call__(make_traj(["a"], [[]]).turns[0]) is False


def test_trajectory_metrics_on_vivaldi_run():
    traj = run_agent("What composer with an Italian libretto was born 4 March 1678?", AgentConfig(),
                     LogicalRetriever(mini_snapshot()), vivaldi_llm(), "q-vivaldi")
    gold = {"q-vivaldi": ("vivaldi", "music-1678", "griselda")}
    m = trajectory_metrics([traj], lambda qs: [[1, 2]], lambda t: gold_success(gold[t.question_id]))
    assert m.groups == 1 and m.repeated_groups == 1
    assert m.overlap == pytest.approx(2 / 5)
    assert m.recovery is None and "recovery" in m.notes[0]


def test_fuzzed_metrics_stay_in_unit_interval():
    rng = random.Random(4)
    pool = [f"d{i}" for i in range(12)]
    for _ in range(200):
        groups = []
        for gid in range(rng.randint(1, 4)):
            size = rng.randint(1, 4)
            groups.append(IntentGroup(gid, list(range(size)), [rng.sample(pool, rng.randint(0, 5))
                                                               for _ in range(size)],
                                      [rng.random() < 0.5 for _ in range(size)]))
        for fn in (same_intent_overlap, intent_recovery):
            try:
                assert 0.0 <= fn(groups) <= 1.0
            except MetricUndefined:
                pass
