"""Fixtures and helpers for the engine tests."""

from __future__ import annotations

from collections.abc import AsyncGenerator, Awaitable, Callable
from typing import Any

import pytest
from aiohttp.test_utils import TestServer

from lightmem.broker import MemoryBroker
from lightmem.events import EventLog
from lightmem.gateway import ModelGateway
from lightmem.mock import MockResponder
from lightmem.schemas import SCH_ENGINE_CONFIG
from lightmem.vector_index import Embedder, EmbeddingConfig

from ..virtual_llm import VirtualLlm
from .common import configuration_fixture, fixed_clock


@pytest.fixture(autouse=True)
def patches_for_tests(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setattr("lightmem.gateway._RETRY_BASE_DELAY", 0)


@pytest.fixture()
def events() -> EventLog:
    return EventLog()


@pytest.fixture()
def gateway() -> ModelGateway:
    """A gateway serving every role from the mock rule tables."""
    return ModelGateway(mock=MockResponder())


@pytest.fixture()
def embedder(gateway: ModelGateway) -> Embedder:
    return Embedder(EmbeddingConfig(), gateway)


@pytest.fixture()
async def broker() -> AsyncGenerator[MemoryBroker]:
    """A started engine on the default config, with a stepping clock."""

    options = SCH_ENGINE_CONFIG(configuration_fixture("default"))
    broker = MemoryBroker(options, clock=fixed_clock())
    await broker.async_setup()
    await broker.async_start()

    try:
        yield broker
    finally:
        await broker.async_stop()


@pytest.fixture()
async def llm(
    aiohttp_server: Callable[[Any], Awaitable[TestServer]],
) -> AsyncGenerator[tuple[VirtualLlm, str]]:
    """A virtual chat-completion endpoint and its base URL."""

    llm = VirtualLlm()
    server = await aiohttp_server(llm.create_app())
    yield llm, str(server.make_url("/v1"))
