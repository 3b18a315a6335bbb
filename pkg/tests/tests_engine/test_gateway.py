"""Tests for the model gateway: output parsing, fixtures and the http backend."""

from __future__ import annotations

import pytest

from lightmem.const import ENV_MODEL_KEY, Backend, EmbeddingBackend, Role
from lightmem.exceptions import (
    DimensionMismatchError,
    FixturesExhaustedError,
    PreconditionError,
    StructuredOutputError,
)
from lightmem.gateway import (
    ModelGateway,
    RoleConfig,
    ScriptedFixtures,
    parse_structured,
)
from lightmem.helpers import payload_hash
from lightmem.mock import MockResponder
from lightmem.prompts import CONSTRAINTS
from lightmem.schemas import ANY_PAYLOAD
from lightmem.vector_index import Embedder, EmbeddingConfig

from ..virtual_llm import VirtualLlm
from .common import get_fixture_path

#
# Structured output


def test_parse_planner_output() -> None:
    raw = (
        '{"hqs": [{"text": "sister name", "route": "MTM", "why": "x"}],'
        ' "filters": {"time_window_days": 7}, "extra": 1}'
    )
    parsed = parse_structured(raw, Role.PLANNER)

    assert parsed == {
        "hqs": [{"text": "sister name", "route": "MTM"}],
        "filters": {"time_window_days": 7.0, "type_tags": None},
    }


def test_parse_fenced_output() -> None:
    raw = '```json\n{"keep_ids": ["a", "b"]}\n```'
    assert parse_structured(raw, Role.SELECTOR) == {"keep_ids": ["a", "b"]}


@pytest.mark.parametrize(
    ("role", "raw", "path"),
    [
        (Role.PLANNER, '{"hqs": [{"text": "a", "route": "MTM"}, {"text": "b"}]'
                       ', "filters": {}}', "hqs[1].route"),
        (Role.PLANNER, '{"hqs": [{"text": "a", "route": "nowhere"}],'
                       ' "filters": {}}', "hqs[0].route"),
        (Role.PLANNER, '{"hqs": [], "filters": {}}', "hqs"),
        (Role.PLANNER, '{"answer": "42", "hqs": [], "filters": {}}', "answer"),
        (Role.SELECTOR, '{"keep_ids": "a"}', "keep_ids"),
        (Role.WRITER, '["a summary"]', "$"),
        (Role.GENERATOR, "{", "$@1"),
    ],
)  # fmt: skip
def test_parse_rejects(role: Role, raw: str, path: str) -> None:
    with pytest.raises(StructuredOutputError) as exc_info:
        parse_structured(raw, role)
    assert exc_info.value.path == path


def test_role_config() -> None:
    with pytest.raises(PreconditionError):
        RoleConfig(role=Role.WRITER, prompt_template="Summarize: {payload}")
    with pytest.raises(PreconditionError):
        RoleConfig(role=Role.WRITER, backend=Backend.HTTP)

    cfg = RoleConfig(role=Role.WRITER)
    assert CONSTRAINTS[Role.WRITER] in cfg.prompt_template

    with pytest.raises(PreconditionError):
        ModelGateway()  # the default mock backend needs a responder


#
# Scripted fixtures


def test_fixtures_order() -> None:
    payload = {"input": "hi"}
    fixtures = ScriptedFixtures(
        {"role": "generator", "payload_hash": payload_hash(payload), "response": r}
        for r in ({"answer": "exact 1"}, {"answer": "exact 2"})
    )
    fixtures.add({"role": "generator", "payload_hash": ANY_PAYLOAD, "response": "any"})

    assert fixtures.remaining(Role.GENERATOR) == 3
    assert fixtures.pop(Role.GENERATOR, payload) == '{"answer":"exact 1"}'
    assert fixtures.pop(Role.GENERATOR, payload) == '{"answer":"exact 2"}'
    assert fixtures.pop(Role.GENERATOR, payload) == "any"

    with pytest.raises(FixturesExhaustedError):
        fixtures.pop(Role.GENERATOR, payload)
    with pytest.raises(PreconditionError):
        ScriptedFixtures([{"role": "oracle", "payload_hash": "*", "response": ""}])


async def test_scripted_backend() -> None:
    fixtures = ScriptedFixtures.from_file(
        get_fixture_path("scripted/fixtures.jsonl")
    )
    gateway = ModelGateway(
        {r: RoleConfig(role=r, backend=Backend.SCRIPTED) for r in Role},
        fixtures=fixtures,
    )

    response = await gateway.async_complete(Role.GENERATOR, {"input": "x"})
    assert response.parsed == {"answer": "Avoid peanuts."}

    response = await gateway.async_complete(Role.WRITER, {"input": "x"})
    assert response.degraded
    assert response.raw == "not json at all"

    with pytest.raises(FixturesExhaustedError):
        await gateway.async_complete(Role.SELECTOR, {"k": 1})
    assert gateway.calls[Role.SELECTOR] == 1


#
# The http backend


def _http_gateway(url: str, **kwargs: int) -> ModelGateway:
    cfg = RoleConfig(role=Role.WRITER, backend=Backend.HTTP, endpoint_url=url, **kwargs)
    return ModelGateway({Role.WRITER: cfg}, mock=MockResponder())


async def test_http_complete(
    llm: tuple[VirtualLlm, str], monkeypatch: pytest.MonkeyPatch
) -> None:
    server, url = llm
    monkeypatch.setenv(ENV_MODEL_KEY, "sk-test")
    server.reply({"summaries": ["user likes tea"]})

    gateway = _http_gateway(url)
    try:
        response = await gateway.async_complete(Role.WRITER, {"input": "I like tea"})
    finally:
        await gateway.async_close()

    assert response.parsed == {"summaries": ["user likes tea"]}
    assert response.status == 200
    assert not response.degraded

    [body] = server.requests
    assert body["temperature"] == 0
    prompt = body["messages"][0]["content"]
    assert CONSTRAINTS[Role.WRITER] in prompt
    assert '{"input":"I like tea"}' in prompt
    assert server.headers[0]["authorization"] == "Bearer sk-test"


async def test_http_retries(llm: tuple[VirtualLlm, str]) -> None:
    server, url = llm
    server.fail(503, times=2)
    server.reply({"summaries": []})

    gateway = _http_gateway(url, max_retries=2)
    try:
        response = await gateway.async_complete(Role.WRITER, {"input": "hi"})
    finally:
        await gateway.async_close()

    assert response.parsed == {"summaries": []}
    assert len(server.requests) == 3


async def test_http_exhausted(llm: tuple[VirtualLlm, str]) -> None:
    server, url = llm
    server.fail(500, times=3)

    gateway = _http_gateway(url, max_retries=2)
    try:
        response = await gateway.async_complete(Role.WRITER, {"input": "hi"})
    finally:
        await gateway.async_close()

    assert response.degraded
    assert response.parsed is None
    assert response.status == 500
    assert response.error is not None and "after 3 attempts" in response.error


async def test_http_timeout(llm: tuple[VirtualLlm, str]) -> None:
    server, url = llm
    server.stall(0.5)

    gateway = _http_gateway(url, timeout_ms=50, max_retries=0)
    try:
        response = await gateway.async_complete(Role.WRITER, {"input": "hi"})
    finally:
        await gateway.async_close()

    assert response.degraded
    assert response.error is not None and "timed out" in response.error


async def test_http_bad_replies(llm: tuple[VirtualLlm, str]) -> None:
    server, url = llm
    server.reply_raw({"choices": []})
    server.reply("Sure! Here is a summary.")

    gateway = _http_gateway(url)
    try:
        no_content = await gateway.async_complete(Role.WRITER, {"input": "a"})
        not_json = await gateway.async_complete(Role.WRITER, {"input": "b"})
    finally:
        await gateway.async_close()

    assert no_content.degraded
    assert no_content.raw == ""
    assert not_json.degraded
    assert not_json.status == 200
    assert not_json.raw == "Sure! Here is a summary."


async def test_http_embeddings(llm: tuple[VirtualLlm, str]) -> None:
    server, url = llm
    server.embedding([0.6, 0.8, 0.0])
    server.embedding([1.0, 0.0])

    gateway = ModelGateway(mock=MockResponder(), embedding_url=url)
    embedder = Embedder(
        EmbeddingConfig(dimension=3, backend=EmbeddingBackend.HTTP_ENDPOINT), gateway
    )
    try:
        assert await embedder.async_embed("tea") == (0.6, 0.8, 0.0)
        with pytest.raises(DimensionMismatchError):
            await embedder.async_embed("coffee")
    finally:
        await gateway.async_close()

    assert server.requests[0]["input"] == "tea"
