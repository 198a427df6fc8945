"""The plan / search / observe / answer loop shared by the logical and hybrid backends.

The running context is rebuilt from the trajectory on every model call, so a
trajectory fully determines what the model saw.  No memory compression or
reranking happens between turns.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources

from .llm import LlmTransportError
from .querylang import QuerySyntaxError
from .search import RetrievalError

SCHEMA_VERSION = 1
BACKENDS = ("logical", "hybrid")
VARIANTS = ("full", "syntax_only")
MAX_RESULTS_CAP = 50

SYSTEM_PREAMBLE = """You answer questions by searching a passage collection.
Call the search tool to gather evidence, one search per step. Read the returned passages before deciding the next search.
When the evidence is sufficient, call the answer tool with a short answer.
If repeated searches show the collection does not contain the needed evidence, call the answer tool with refuse=true instead of guessing."""

PLAN_REQUEST = "Before searching, write a brief plan: which facts must be found, and in what order."

FINAL_REQUEST = "The search budget is exhausted. Call the answer tool now, or refuse if the evidence is insufficient."


@dataclass(frozen=True)
class AgentConfig:
    backend: str = "logical"
    max_turns: int = 8
    temperature: float = 0.6
    top_p: float = 0.95
    tool_description_variant: str = "full"
    allow_boolean_ops: bool = True
    default_max_results: int = 5

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        if self.tool_description_variant not in VARIANTS:
            raise ValueError(f"tool_description_variant must be one of {VARIANTS}")
        if self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")


@dataclass
class Retrieved:
    doc_id: str
    title: str


@dataclass
class Turn:
    turn_index: int
    query: str
    parse_ok: bool
    retrieved: list[Retrieved]
    observation: str
    default_operator: str | None = None
    max_results: int = 5
    error: str | None = None

    @property
    def retrieved_ids(self) -> list[str]:
        return [r.doc_id for r in self.retrieved]

    def tool_arguments(self) -> dict:
        args = {"query": self.query, "max_results": self.max_results}
        if self.default_operator is not None:
            args["default_operator"] = self.default_operator
        return args


@dataclass
class Outcome:
    kind: str  # answer | refusal | turn_limit | aborted
    text: str | None = None
    diagnostic: str | None = None


@dataclass
class Trajectory:
    question_id: str
    question: str
    backend: str = "logical"
    plan_text: str | None = None
    turns: list[Turn] = field(default_factory=list)
    outcome: Outcome | None = None

    @property
    def answer(self) -> str | None:
        return self.outcome.text if self.outcome and self.outcome.kind == "answer" else None

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}

    @classmethod
    def from_dict(cls, obj: dict) -> "Trajectory":
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported trajectory schema_version {obj.get('schema_version')}")
        turns = [Turn(**{**t, "retrieved": [Retrieved(**r) for r in t["retrieved"]]}) for t in obj["turns"]]
        outcome = Outcome(**obj["outcome"]) if obj.get("outcome") else None
        return cls(obj["question_id"], obj["question"], obj.get("backend", "logical"),
                   obj.get("plan_text"), turns, outcome)


def tool_description(backend: str = "logical", variant: str = "full", allow_boolean_ops: bool = True) -> str:
    if backend == "logical" and not allow_boolean_ops:
        name = "logical_no_ops.txt" if variant == "full" else "logical_syntax_only.txt"
    else:
        name = f"{backend}_{variant}.txt"
    return resources.files("lexrag.prompts").joinpath(name).read_text(encoding="utf-8")


def tool_schemas(backend: str) -> list[dict]:
    props = {
        "query": {"type": "string", "description": "The search query."},
        "max_results": {"type": "integer", "minimum": 1, "maximum": MAX_RESULTS_CAP, "default": 5},
    }
    if backend == "logical":
        props["default_operator"] = {"type": "string", "enum": ["AND", "OR"], "default": "OR",
                                     "description": "Connective between terms with no explicit operator."}
    search = {"name": "search", "description": "Search the passage collection.",
              "parameters": {"type": "object", "properties": props, "required": ["query"]}}
    answer = {"name": "answer", "description": "Give the final answer, or refuse when evidence is unavailable.",
              "parameters": {"type": "object", "properties": {
                  "answer": {"type": "string"},
                  "refuse": {"type": "boolean", "default": False}}, "required": []}}
    return [search, answer]


def build_context(trajectory: Trajectory, tool_desc: str, question: str) -> list[dict]:
    """Serialize the trajectory so far as chat messages."""
    messages = [{"role": "system", "content": SYSTEM_PREAMBLE + "\n\n" + tool_desc},
                {"role": "user", "content": question}]
    if trajectory.plan_text:
        messages.append({"role": "assistant", "content": trajectory.plan_text})
    for turn in trajectory.turns:
        call_id = f"call_{turn.turn_index}"
        messages.append({"role": "assistant", "content": None, "tool_calls": [{
            "id": call_id, "type": "function",
            "function": {"name": "search", "arguments": json.dumps(turn.tool_arguments(), ensure_ascii=False)}}]})
        messages.append({"role": "tool", "tool_call_id": call_id, "content": turn.observation})
    return messages


def format_observation(result, retriever) -> str:
    if not result.hits:
        return "No passages matched the query (0 candidates). Relax or rewrite the query."
    lines = [f"{result.total_candidates} passages matched; showing top {len(result.hits)}."]
    for rank, hit in enumerate(result.hits, start=1):
        lines.append(f"\n[{rank}] doc_id: {hit.doc_id} | title: {hit.title}\n{retriever.fetch(hit.doc_id).content}")
    return "\n".join(lines)


def _run_search(call_args: dict, turn_index: int, config: AgentConfig, retriever) -> Turn:
    query = call_args.get("query")
    op = None
    try:
        k = int(call_args.get("max_results", config.default_max_results))
    except (TypeError, ValueError):
        k = config.default_max_results
    k = max(1, min(MAX_RESULTS_CAP, k))
    if not isinstance(query, str) or not query.strip():
        return Turn(turn_index, str(query or ""), False, [],
                    "Tool error: search requires a non-empty 'query' string.", max_results=k,
                    error="missing query")
    try:
        if config.backend == "logical":
            op = str(call_args.get("default_operator", "OR")).upper()
            if op not in ("AND", "OR"):
                raise QuerySyntaxError(f"default_operator must be AND or OR, not {op}", 0)
            result = retriever.search(query, k, op)
        else:
            result = retriever.search(query, k)
    except QuerySyntaxError as exc:
        return Turn(turn_index, query, False, [],
                    f"Query error at position {exc.position}: {exc.message}. Revise the query and search again.",
                    op, k, error=str(exc))
    except RetrievalError as exc:
        return Turn(turn_index, query, True, [], f"Search failed: {exc}. You may retry.", op, k, error=str(exc))
    retrieved = [Retrieved(h.doc_id, h.title) for h in result.hits]
    return Turn(turn_index, query, True, retrieved, format_observation(result, retriever), op, k)


def run_agent(question: str, config: AgentConfig, retriever, llm, question_id: str = "") -> Trajectory:
    """Run one question to an answer, a refusal, the turn limit, or an aborted transport."""
    if getattr(retriever, "backend", None) != config.backend:
        raise ValueError(f"retriever backend {getattr(retriever, 'backend', None)!r} "
                         f"does not match config backend {config.backend!r}")
    desc = tool_description(config.backend, config.tool_description_variant, config.allow_boolean_ops)
    tools = tool_schemas(config.backend)
    traj = Trajectory(question_id, question, config.backend)
    decoding = {"temperature": config.temperature, "top_p": config.top_p}
    try:
        plan = llm.chat(build_context(traj, desc, question) + [{"role": "user", "content": PLAN_REQUEST}],
                        [], **decoding)
        traj.plan_text = (plan.content or "").strip() or None
        while traj.outcome is None:
            budget_left = len(traj.turns) < config.max_turns
            messages = build_context(traj, desc, question)
            if not budget_left:
                messages.append({"role": "user", "content": FINAL_REQUEST})
            msg = llm.chat(messages, tools if budget_left else tools[1:], **decoding)
            if not msg.tool_calls:
                traj.outcome = Outcome("answer", (msg.content or "").strip())
                break
            for call in msg.tool_calls:
                if call.name == "answer":
                    text = str(call.arguments.get("answer") or "").strip()
                    refuse = call.arguments.get("refuse") in (True, "true", "True")
                    traj.outcome = Outcome("refusal", text or None) if refuse else Outcome("answer", text)
                    break
                if len(traj.turns) >= config.max_turns:
                    traj.outcome = Outcome("turn_limit")
                    break
                index = len(traj.turns) + 1
                if call.name == "search":
                    traj.turns.append(_run_search(call.arguments, index, config, retriever))
                else:
                    traj.turns.append(Turn(index, "", False, [], f"Tool error: unknown tool {call.name!r}.",
                                           error=f"unknown tool {call.name}"))
    except LlmTransportError as exc:
        traj.outcome = Outcome("aborted", diagnostic=str(exc))
    return traj


def export_trajectories(trajectories, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trajectories:
            fh.write(json.dumps(t.to_dict(), ensure_ascii=False) + "\n")


def import_trajectories(path) -> list[Trajectory]:
    with open(path, encoding="utf-8") as fh:
        return [Trajectory.from_dict(json.loads(line)) for line in fh if line.strip()]
