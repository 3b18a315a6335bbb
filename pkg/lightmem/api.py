"""HTTP surface of the engine (aiohttp).

Every MTM read is scoped to the user_id in the request path or body; there is
no endpoint that lists users or reads across them.
"""

from __future__ import annotations

import logging
from collections.abc import Awaitable, Callable
from typing import Any, Final

import voluptuous as vol  # type: ignore[import-untyped, unused-ignore]
from aiohttp import web

from .broker import MemoryBroker
from .exceptions import GatewayError, LightMemError
from .schemas import (
    SCH_MTM_PAGE,
    SCH_QUERY_REQUEST,
    SZ_LIMIT,
    SZ_OFFSET,
    SZ_TEXT,
    SZ_TIMESTAMP,
    SZ_USER_ID,
)

_LOGGER = logging.getLogger(__name__)

BROKER_KEY: Final = web.AppKey("broker", MemoryBroker)

_RECENT_EVENTS: Final[int] = 5  # degradations echoed in a 502 body

_Handler = Callable[[web.Request], Awaitable[web.StreamResponse]]


def _error(status: int, code: str, message: str, **extra: Any) -> web.Response:
    body = {"error": {"code": code, "message": message, **extra}}
    return web.json_response(body, status=status)


@web.middleware
async def error_middleware(
    request: web.Request, handler: _Handler
) -> web.StreamResponse:
    """Map engine exceptions to typed JSON error bodies."""

    try:
        return await handler(request)
    except vol.Invalid as err:
        return _error(400, "invalid_request", str(err))
    except GatewayError as err:
        broker = request.app[BROKER_KEY]
        return _error(
            502,
            err.code,
            str(err),
            status=err.status,
            degradations=[e.as_dict() for e in broker.events.events[-_RECENT_EVENTS:]],
        )
    except LightMemError as err:
        _LOGGER.error("Request %s failed: %s", request.path, err)
        return _error(500, err.code, str(err))


async def _json_body(request: web.Request) -> dict[str, Any]:
    try:
        body = await request.json()
    except ValueError as err:
        raise vol.Invalid(f"body is not JSON: {err}") from err
    if not isinstance(body, dict):
        raise vol.Invalid("body must be a JSON object")
    return body


async def handle_query(request: web.Request) -> web.Response:
    body = SCH_QUERY_REQUEST(await _json_body(request))
    result = await request.app[BROKER_KEY].async_handle_query(
        body[SZ_USER_ID], body[SZ_TEXT], timestamp=body.get(SZ_TIMESTAMP)
    )
    return web.json_response(result.as_dict())


async def handle_consolidate(request: web.Request) -> web.Response:
    report = await request.app[BROKER_KEY].async_consolidate()
    return web.json_response(report.as_dict())


async def handle_mtm(request: web.Request) -> web.Response:
    page = SCH_MTM_PAGE(dict(request.query))
    return web.json_response(
        request.app[BROKER_KEY].mtm_page(
            request.match_info[SZ_USER_ID],
            offset=page[SZ_OFFSET],
            limit=page[SZ_LIMIT],
        )
    )


async def handle_ltm_stats(request: web.Request) -> web.Response:
    return web.json_response(request.app[BROKER_KEY].ltm_stats())


async def handle_latency(request: web.Request) -> web.Response:
    broker = request.app[BROKER_KEY]
    await broker.async_flush_metrics()
    return web.json_response(broker.latency_report())


def create_app(broker: MemoryBroker) -> web.Application:
    """Return the service app; stopping the app stops the broker."""

    app = web.Application(middlewares=[error_middleware])
    app[BROKER_KEY] = broker
    app.add_routes(
        [
            web.post("/v1/query", handle_query),
            web.post("/v1/consolidate", handle_consolidate),
            web.get(f"/v1/memory/{{{SZ_USER_ID}}}/mtm", handle_mtm),
            web.get("/v1/ltm/stats", handle_ltm_stats),
            web.get("/v1/metrics/latency", handle_latency),
        ]
    )

    async def on_cleanup(_: web.Application) -> None:
        await broker.async_stop()

    app.on_cleanup.append(on_cleanup)
    return app
