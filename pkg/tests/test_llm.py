import json

import httpx
import pytest

from lexrag.llm import HttpChatClient, LlmTransportError, ToolCall, parse_chat_response


def reply(message):
    return httpx.Response(200, json={"choices": [{"index": 0, "message": message}]})


def test_wire_format_and_tool_call_parsing(monkeypatch):
    monkeypatch.setenv("LEXRAG_LLM_API_KEY", "k1")
    seen = []

    def handler(request):
        seen.append((request, json.loads(request.content)))
        return reply({"role": "assistant", "content": None, "tool_calls": [{
            "id": "c7", "type": "function",
            "function": {"name": "search", "arguments": '{"query": "born 4 March 1678", "default_operator": "AND"}'}}]})

    client = HttpChatClient("http://llm.test/v1/chat/completions", "qwen3", transport=httpx.MockTransport(handler))
    msg = client.chat([{"role": "user", "content": "hi"}], [{"name": "search", "parameters": {}}],
                      temperature=0.6, top_p=0.95)
    assert msg.tool_calls == (ToolCall("search", {"query": "born 4 March 1678", "default_operator": "AND"}, "c7"),)
    request, body = seen[0]
    assert request.headers["authorization"] == "Bearer k1"
    assert body["model"] == "qwen3" and body["temperature"] == 0.6 and body["top_p"] == 0.95
    assert body["tools"] == [{"type": "function", "function": {"name": "search", "parameters": {}}}]


def test_no_tools_key_when_none_offered():
    bodies = []

    def handler(request):
        bodies.append(json.loads(request.content))
        return reply({"content": "a plan"})

    msg = HttpChatClient("http://llm.test/", "m", transport=httpx.MockTransport(handler)).chat([])
    assert msg.content == "a plan" and "tools" not in bodies[0]


def test_retries_then_succeeds():
    codes = iter([503, 429, 200])

    def handler(request):
        code = next(codes)
        return reply({"content": "ok"}) if code == 200 else httpx.Response(code)

    client = HttpChatClient("http://llm.test/", "m", backoff=0, transport=httpx.MockTransport(handler))
    assert client.chat([]).content == "ok"


def test_gives_up_after_bounded_retries():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(500)

    client = HttpChatClient("http://llm.test/", "m", max_retries=2, backoff=0, transport=httpx.MockTransport(handler))
    with pytest.raises(LlmTransportError, match="3 attempt"):
        client.chat([])
    assert len(calls) == 3


def test_client_error_is_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400, json={"error": "bad"})

    client = HttpChatClient("http://llm.test/", "m", backoff=0, transport=httpx.MockTransport(handler))
    with pytest.raises(LlmTransportError):
        client.chat([])
    assert len(calls) == 1


def test_parse_flat_and_malformed_arguments():
    msg = parse_chat_response({"content": "x", "tool_calls": [{"name": "answer", "arguments": {"answer": "y"}},
                                                              {"name": "search", "arguments": "{not json"}]})
    assert msg.tool_calls[0] == ToolCall("answer", {"answer": "y"}, "call_0")
    assert msg.tool_calls[1].arguments == {"_unparsed": "{not json"}
