"""A virtual chat-completion endpoint useful for testing the http backend."""

# NOTE: does not rely on the lightmem package

from __future__ import annotations

import asyncio
import logging
from collections import deque
from collections.abc import Sequence
from typing import Any

from aiohttp import web

from .const import CHAT_PATH, EMBEDDINGS_PATH
from .helpers import chat_reply, embedding_reply

_LOGGER = logging.getLogger(__name__)


class VirtualLlm:
    """Serves queued replies in order and records every request it receives.

    Queued failures (an HTTP status, or a delay longer than the client's
    timeout) are served before any reply.
    """

    def __init__(self) -> None:
        self._replies: deque[dict[str, Any]] = deque()
        self._embeddings: deque[list[float]] = deque()
        self._failures: deque[int] = deque()
        self._delays: deque[float] = deque()

        self.requests: list[dict[str, Any]] = []
        self.headers: list[dict[str, str]] = []

    def reply(self, content: str | dict[str, Any]) -> None:
        self._replies.append(chat_reply(content))

    def reply_raw(self, body: dict[str, Any]) -> None:
        """Queue a body served as is (e.g. without choices)."""
        self._replies.append(body)

    def embedding(self, vector: Sequence[float]) -> None:
        self._embeddings.append(list(vector))

    def fail(self, status: int, times: int = 1) -> None:
        self._failures.extend([status] * times)

    def stall(self, seconds: float, times: int = 1) -> None:
        self._delays.extend([seconds] * times)

    async def _async_preamble(self, request: web.Request) -> web.Response | None:
        self.requests.append(await request.json())
        self.headers.append({k.lower(): v for k, v in request.headers.items()})

        if self._delays:
            await asyncio.sleep(self._delays.popleft())
        if self._failures:
            status = self._failures.popleft()
            _LOGGER.debug("Failing %s with %s", request.path, status)
            return web.json_response({"error": "injected"}, status=status)
        return None

    async def _async_chat(self, request: web.Request) -> web.Response:
        if failed := await self._async_preamble(request):
            return failed
        if not self._replies:
            return web.json_response({"error": "no reply queued"}, status=500)
        return web.json_response(self._replies.popleft())

    async def _async_embeddings(self, request: web.Request) -> web.Response:
        if failed := await self._async_preamble(request):
            return failed
        if not self._embeddings:
            return web.json_response({"error": "no embedding queued"}, status=500)
        return web.json_response(embedding_reply(self._embeddings.popleft()))

    def create_app(self) -> web.Application:
        app = web.Application()
        app.router.add_post(CHAT_PATH, self._async_chat)
        app.router.add_post(EMBEDDINGS_PATH, self._async_embeddings)
        return app
