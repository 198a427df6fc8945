"""Chat-completion clients: a live HTTP client and scripted stand-ins for tests."""

from __future__ import annotations

import json
import logging
import os
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import httpx

log = logging.getLogger(__name__)


class LlmTransportError(RuntimeError):
    """The model endpoint could not be reached or returned an unusable response."""


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict
    id: str = ""


@dataclass(frozen=True)
class AssistantMessage:
    content: str | None = None
    tool_calls: tuple[ToolCall, ...] = ()


def say(text: str) -> AssistantMessage:
    return AssistantMessage(content=text)


def search_call(query: str, default_operator: str | None = None, max_results: int | None = None) -> AssistantMessage:
    args: dict = {"query": query}
    if default_operator is not None:
        args["default_operator"] = default_operator
    if max_results is not None:
        args["max_results"] = max_results
    return AssistantMessage(tool_calls=(ToolCall("search", args),))


def answer_call(text: str = "", refuse: bool = False) -> AssistantMessage:
    return AssistantMessage(tool_calls=(ToolCall("answer", {"answer": text, "refuse": refuse}),))


def _parse_arguments(raw) -> dict:
    if isinstance(raw, dict):
        return raw
    try:
        value = json.loads(raw or "{}")
    except (TypeError, json.JSONDecodeError):
        return {"_unparsed": raw}
    return value if isinstance(value, dict) else {"_unparsed": raw}


def parse_chat_response(body: dict) -> AssistantMessage:
    """Accept both the nested ``choices[0].message`` form and a flat message."""
    message = body["choices"][0]["message"] if "choices" in body else body
    calls = []
    for i, tc in enumerate(message.get("tool_calls") or []):
        fn = tc.get("function", tc)
        calls.append(ToolCall(fn["name"], _parse_arguments(fn.get("arguments")), tc.get("id") or f"call_{i}"))
    return AssistantMessage(message.get("content"), tuple(calls))


class HttpChatClient:
    """Chat-completions REST client with bounded retries."""

    def __init__(self, url: str, model: str, api_key: str | None = None, timeout: float = 120.0,
                 max_retries: int = 3, backoff: float = 1.0, transport=None):
        self.url = url
        self.model = model
        self.max_retries = max_retries
        self.backoff = backoff
        api_key = api_key or os.environ.get("LEXRAG_LLM_API_KEY")
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def chat(self, messages: Sequence[dict], tools: Sequence[dict] = (), temperature: float = 0.6,
             top_p: float = 0.95) -> AssistantMessage:
        payload = {"model": self.model, "messages": list(messages),
                   "temperature": temperature, "top_p": top_p}
        if tools:
            payload["tools"] = [{"type": "function", "function": t} for t in tools]
        last = None
        attempts = 0
        for attempt in range(self.max_retries + 1):
            attempts += 1
            try:
                resp = self._client.post(self.url, json=payload)
                if resp.status_code in (429,) or resp.status_code >= 500:
                    raise httpx.HTTPStatusError(f"status {resp.status_code}", request=resp.request, response=resp)
                resp.raise_for_status()
                return parse_chat_response(resp.json())
            except httpx.HTTPStatusError as exc:
                last = exc
                if exc.response.status_code < 500 and exc.response.status_code != 429:
                    break
            except (httpx.TransportError, KeyError, IndexError, TypeError, ValueError) as exc:
                last = exc
            if attempt < self.max_retries:
                log.warning("chat request failed (%s); retry %d/%d", last, attempt + 1, self.max_retries)
                time.sleep(self.backoff * 2**attempt)
        raise LlmTransportError(f"chat request failed after {attempts} attempt(s): {last}")

    def close(self):
        self._client.close()


@dataclass
class ScriptedLLM:
    """Replays a fixed sequence of responses.

    A step may be an :class:`AssistantMessage`, a plain string (final text),
    or a callable ``(messages, tools) -> AssistantMessage``.  Every request is
    recorded in ``calls`` so tests can inspect what the model was shown.
    """

    steps: list
    calls: list = field(default_factory=list)

    def chat(self, messages, tools=(), temperature=0.6, top_p=0.95) -> AssistantMessage:
        self.calls.append({"messages": [dict(m) for m in messages], "tools": list(tools),
                           "temperature": temperature, "top_p": top_p})
        if len(self.calls) > len(self.steps):
            raise LlmTransportError("scripted conversation exhausted")
        step = self.steps[len(self.calls) - 1]
        if callable(step):
            step = step(messages, tools)
        return say(step) if isinstance(step, str) else step


@dataclass
class PolicyLLM:
    """Answers every request with ``policy(messages, tools)``."""

    policy: Callable[[list, list], AssistantMessage]
    calls: list = field(default_factory=list)

    def chat(self, messages, tools=(), temperature=0.6, top_p=0.95) -> AssistantMessage:
        self.calls.append({"messages": [dict(m) for m in messages], "tools": list(tools),
                           "temperature": temperature, "top_p": top_p})
        out = self.policy(list(messages), list(tools))
        return say(out) if isinstance(out, str) else out
