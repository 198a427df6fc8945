"""Answer scoring, the answer-unavailable protocol, and trajectory repair metrics."""

from __future__ import annotations

import json
import logging
import re
import string
from collections import Counter
from collections.abc import Callable, Iterable, Sequence
from dataclasses import asdict, dataclass, field

from .index import Document, analyze
from .llm import LlmTransportError

log = logging.getLogger(__name__)

UNAVAILABLE_CLASSES = ("refusal", "hallucination", "gold_leak")


class MetricUndefined(ValueError):
    """A metric has an empty denominator for the given input."""


class JudgeError(RuntimeError):
    pass


@dataclass(frozen=True)
class QaExample:
    question_id: str
    question: str
    gold_answers: tuple[str, ...]
    gold_passage_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.gold_answers:
            raise ValueError(f"{self.question_id}: gold_answers must be non-empty")


def load_qa_jsonl(path) -> list[QaExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(QaExample(obj["id"], obj["question"], tuple(obj["answers"]),
                                     tuple(obj.get("gold_passage_ids", ()))))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"line {lineno}: bad QA record ({exc})") from None
    return out


@dataclass
class EvalRecord:
    question_id: str
    em: int | None = None
    f1: float | None = None
    judge: str | None = None
    unavailable_class: str | None = None
    error: str | None = None


# -- answer metrics ------------------------------------------------------------

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> list[str]:
    """SQuAD-style normalization: lowercase, drop punctuation and articles, split on whitespace."""
    text = text.lower().translate(_PUNCT)
    return _ARTICLES.sub(" ", text).split()


def exact_match(prediction: str, gold_answers: Sequence[str]) -> int:
    pred = normalize_answer(prediction)
    return int(any(pred == normalize_answer(g) for g in gold_answers))


def _f1(pred: list[str], gold: list[str]) -> float:
    if not pred or not gold:
        return float(pred == gold)
    common = sum((Counter(pred) & Counter(gold)).values())
    if common == 0:
        return 0.0
    precision, recall = common / len(pred), common / len(gold)
    return 2 * precision * recall / (precision + recall)


def word_f1(prediction: str, gold_answers: Sequence[str]) -> float:
    pred = normalize_answer(prediction)
    return max(_f1(pred, normalize_answer(g)) for g in gold_answers)


JUDGE_SYSTEM = ("You grade answers to questions. Reply with exactly one word: "
                "correct if the prediction means the same as any gold answer, otherwise incorrect.")


def _parse_verdict(text: str | None) -> str | None:
    if not text:
        return None
    m = re.search(r"\b(incorrect|correct)\b", text.lower())
    return m.group(1) if m else None


def judge_answer(question: str, prediction: str, gold_answers: Sequence[str], judge_client,
                 temperature: float = 0.3) -> str:
    """Ask a judge model for a binary verdict.

    Unparseable output is retried once and then counted as incorrect.
    Transport failures raise :class:`JudgeError`.
    """
    messages = [
        {"role": "system", "content": JUDGE_SYSTEM},
        {"role": "user", "content": f"Question: {question}\nGold answers: {' | '.join(gold_answers)}\n"
                                    f"Prediction: {prediction}\nVerdict:"},
    ]
    for _ in range(2):
        try:
            reply = judge_client.chat(messages, [], temperature=temperature, top_p=1.0)
        except LlmTransportError as exc:
            raise JudgeError(str(exc)) from exc
        verdict = _parse_verdict(reply.content)
        if verdict:
            return verdict
    log.warning("judge output unparseable twice for %r; counting as incorrect", question)
    return "incorrect"


def score_answers(examples: Iterable[QaExample], trajectories, judge_client=None,
                  judge_temperature: float = 0.3) -> list[EvalRecord]:
    by_id = {t.question_id: t for t in trajectories}
    records = []
    for ex in examples:
        traj = by_id.get(ex.question_id)
        if traj is None:
            records.append(EvalRecord(ex.question_id, error="missing trajectory"))
            continue
        pred = traj.answer or ""
        rec = EvalRecord(ex.question_id, exact_match(pred, ex.gold_answers), word_f1(pred, ex.gold_answers))
        if judge_client is not None:
            try:
                rec.judge = (judge_answer(ex.question, pred, ex.gold_answers, judge_client, judge_temperature)
                             if pred else "incorrect")
            except JudgeError as exc:
                rec.error = f"judge: {exc}"
        records.append(rec)
    return records


def aggregate(records: Sequence[EvalRecord]) -> dict:
    scored = [r for r in records if r.em is not None]
    judged = [r for r in records if r.judge is not None]
    out = {"count": len(records), "errors": sum(r.error is not None for r in records)}
    if scored:
        out["em"] = sum(r.em for r in scored) / len(scored)
        out["f1"] = sum(r.f1 for r in scored) / len(scored)
    if judged:
        out["judge"] = sum(r.judge == "correct" for r in judged) / len(judged)
    classified = [r.unavailable_class for r in records if r.unavailable_class]
    if classified:
        out.update(zip(("refusal", "hallucination", "gold_leak"), unavailable_rates(classified)))
    return out


def eval_report(records: Sequence[EvalRecord]) -> dict:
    return {"records": [asdict(r) for r in records], "aggregate": aggregate(records)}


# -- answer-unavailable protocol -----------------------------------------------

@dataclass
class UnavailableSet:
    corpus: list[Document]
    examples: list[QaExample]
    skipped: int


def build_unavailable_set(examples: Sequence[QaExample], corpus: Iterable[Document],
                          size: int | None = None) -> UnavailableSet:
    """Select the first ``size`` annotated examples and drop their gold passages from the corpus."""
    corpus = list(corpus)
    known = {d.doc_id for d in corpus}
    pool = [ex for ex in examples if ex.gold_passage_ids]
    skipped = len(examples) - len(pool)
    if size is None:
        size = len(pool)
    if size > len(pool):
        raise ValueError(f"requested {size} answer-unavailable examples but only {len(pool)} have gold passages")
    chosen = pool[:size]
    removed = set()
    for ex in chosen:
        missing = [p for p in ex.gold_passage_ids if p not in known]
        if missing:
            raise ValueError(f"{ex.question_id}: gold passage {missing[0]} not in corpus")
        removed.update(ex.gold_passage_ids)
    return UnavailableSet([d for d in corpus if d.doc_id not in removed], chosen, skipped)


def classify_unavailable(trajectory, example: QaExample, judge_client, judge_temperature: float = 0.3) -> str:
    """refusal, gold_leak (judged correct) or hallucination (judged incorrect)."""
    outcome = trajectory.outcome
    if outcome is None or outcome.kind == "aborted":
        raise ValueError(f"{trajectory.question_id}: trajectory has no usable outcome")
    if outcome.kind in ("refusal", "turn_limit") or not (outcome.text or "").strip():
        return "refusal"
    verdict = judge_answer(example.question, outcome.text, example.gold_answers, judge_client, judge_temperature)
    return "gold_leak" if verdict == "correct" else "hallucination"


def unavailable_rates(classes: Sequence) -> tuple[float, float, float]:
    """(refusal, hallucination, gold_leak) rates over classified records."""
    labels = [c.unavailable_class if isinstance(c, EvalRecord) else c for c in classes]
    if not labels:
        raise MetricUndefined("no classified records")
    bad = set(labels) - set(UNAVAILABLE_CLASSES)
    if bad:
        raise ValueError(f"unknown class {sorted(bad)[0]!r}")
    counts = Counter(labels)
    return tuple(counts[c] / len(labels) for c in UNAVAILABLE_CLASSES)


# -- trajectory metrics ------------------------------------------------------------

@dataclass
class IntentGroup:
    intent_id: int
    turn_indices: list[int]
    retrieved: list[list[str]]
    success: list[bool] | None = None
    source: str = "judge"


def exact_query_grouper(queries: Sequence[str]) -> list[list[int]]:
    """Fallback: turns whose analyzed queries are identical share an intent."""
    groups: dict[tuple, list[int]] = {}
    for i, q in enumerate(queries, start=1):
        groups.setdefault(tuple(analyze(q)), []).append(i)
    return list(groups.values())


def _repair_partition(assignment, n: int) -> list[list[int]]:
    seen: set[int] = set()
    groups = []
    for group in assignment if isinstance(assignment, (list, tuple)) else ():
        if not isinstance(group, (list, tuple)):
            continue
        members = []
        for i in group:
            if isinstance(i, int) and not isinstance(i, bool) and 1 <= i <= n and i not in seen:
                seen.add(i)
                members.append(i)
        if members:
            groups.append(sorted(members))
    groups.extend([i] for i in range(1, n + 1) if i not in seen)
    return sorted(groups, key=lambda g: g[0])


def group_intents(trajectory, grouper: Callable | None = None,
                  success: Callable | None = None) -> list[IntentGroup]:
    """Partition retrieval turns into intent groups using only the issued queries.

    ``grouper(queries) -> [[turn_index, ...], ...]`` (1-based).  Whatever it
    returns is repaired into a partition: duplicates keep their first group,
    unassigned turns become singletons.  If it raises, the exact-query
    fallback is used and groups are marked ``source="fallback"``.
    """
    turns = trajectory.turns
    if not turns:
        raise MetricUndefined("trajectory has no retrieval turns")
    queries = [t.query for t in turns]
    source = "judge"
    try:
        if grouper is None:
            raise LookupError("no grouper configured")
        assignment = grouper(queries)
    except Exception as exc:  # noqa: BLE001 - any grouper failure falls back
        if grouper is not None:
            log.warning("intent grouper failed (%s); using exact-query fallback", exc)
        assignment, source = exact_query_grouper(queries), "fallback"
    by_index = {t.turn_index: t for t in turns}
    ordered = [t.turn_index for t in turns]
    out = []
    for gid, members in enumerate(_repair_partition(assignment, len(turns)), start=1):
        members_turns = [by_index[ordered[i - 1]] for i in members]
        out.append(IntentGroup(
            gid, [t.turn_index for t in members_turns], [t.retrieved_ids for t in members_turns],
            [bool(success(t)) for t in members_turns] if success else None, source))
    return out


def gold_success(gold_ids: Iterable[str]) -> Callable:
    """Turn succeeds when any retrieved passage is a gold passage."""
    gold = set(gold_ids)
    return lambda turn: any(d in gold for d in turn.retrieved_ids)


class LlmIntentGrouper:
    def __init__(self, llm, temperature: float = 0.3):
        self.llm = llm
        self.temperature = temperature

    def __call__(self, queries: Sequence[str]) -> list[list[int]]:
        listing = "\n".join(f"{i}. {q}" for i, q in enumerate(queries, start=1))
        messages = [
            {"role": "system", "content": "Group search queries that try to retrieve the same missing fact, "
                                          "even when worded differently. Reply with JSON only: "
                                          '{"groups": [[1, 2], [3]]} using the query numbers.'},
            {"role": "user", "content": listing},
        ]
        reply = self.llm.chat(messages, [], temperature=self.temperature, top_p=1.0).content or ""
        m = re.search(r"\{.*\}", reply, re.S)
        if not m:
            raise ValueError("grouper reply has no JSON object")
        return json.loads(m.group())["groups"]


class LlmRelevanceJudge:
    """Turn succeeds when the judge says at least one returned passage is relevant to the query."""

    def __init__(self, llm, temperature: float = 0.3):
        self.llm = llm
        self.temperature = temperature

    def __call__(self, turn) -> bool:
        if not turn.retrieved:
            return False
        messages = [
            {"role": "system", "content": "Answer yes if at least one passage below is relevant to the search "
                                          "query, otherwise no. Reply with one word."},
            {"role": "user", "content": f"Query: {turn.query}\n\n{turn.observation}"},
        ]
        reply = (self.llm.chat(messages, [], temperature=self.temperature, top_p=1.0).content or "").lower()
        return bool(re.search(r"\byes\b", reply))


def _pair_overlap(a: Sequence[str], b: Sequence[str]) -> float:
    sa, sb = set(a), set(b)
    denom = max(len(sa), len(sb))
    return len(sa & sb) / denom if denom else 1.0


def same_intent_overlap(groups: Sequence[IntentGroup], k: int | None = None) -> float:
    """Macro average over repeated-intent groups of mean adjacent top-k overlap."""
    per_group = []
    for g in groups:
        if len(g.turn_indices) < 2:
            continue
        lists = [r[:k] if k else r for r in g.retrieved]
        pairs = [_pair_overlap(a, b) for a, b in zip(lists, lists[1:])]
        per_group.append(sum(pairs) / len(pairs))
    if not per_group:
        raise MetricUndefined("no repeated intents")
    return sum(per_group) / len(per_group)


def intent_recovery(groups: Sequence[IntentGroup]) -> float:
    """Recovered / recoverable, where recoverable means >= 2 turns and a failed first turn."""
    recoverable = recovered = 0
    for g in groups:
        if g.success is None:
            raise ValueError(f"intent group {g.intent_id} has no success flags")
        if len(g.success) < 2 or g.success[0]:
            continue
        recoverable += 1
        recovered += any(g.success[1:])
    if recoverable == 0:
        raise MetricUndefined("no recoverable intents")
    return recovered / recoverable


@dataclass
class TrajectoryMetrics:
    overlap: float | None
    recovery: float | None
    groups: int
    repeated_groups: int
    fallback_used: bool = False
    notes: list[str] = field(default_factory=list)


def trajectory_metrics(trajectories, grouper: Callable | None = None,
                       success_for: Callable | None = None, k: int | None = None) -> TrajectoryMetrics:
    """Pool intent groups over many trajectories; undefined metrics come back as None.

    ``success_for(trajectory)`` returns the per-turn success callable for that
    trajectory, e.g. ``lambda t: gold_success(gold[t.question_id])``.
    """
    groups: list[IntentGroup] = []
    for traj in trajectories:
        if traj.turns:
            groups.extend(group_intents(traj, grouper, success_for(traj) if success_for else None))
    notes = []
    try:
        overlap = same_intent_overlap(groups, k)
    except MetricUndefined as exc:
        overlap = None
        notes.append(f"overlap: {exc}")
    recovery = None
    if success_for is not None:
        try:
            recovery = intent_recovery(groups)
        except MetricUndefined as exc:
            notes.append(f"recovery: {exc}")
    return TrajectoryMetrics(overlap, recovery, len(groups),
                             sum(len(g.turn_indices) >= 2 for g in groups),
                             any(g.source == "fallback" for g in groups), notes)
