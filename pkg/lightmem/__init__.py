"""LightMem: a tiered memory engine for conversational agents.

Short-term context, a per-user mid-term store of episodic summaries and a
shared long-term knowledge graph, maintained by small model roles.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any

from .broker import MemoryBroker, QueryResult
from .const import DOMAIN
from .gateway import ModelGateway
from .schemas import SCH_ENGINE_CONFIG, read_config_file

_LOGGER = logging.getLogger(__name__)

__all__ = [
    "DOMAIN",
    "MemoryBroker",
    "QueryResult",
    "async_setup_engine",
    "load_config",
]


def load_config(path: str | Path | None = None) -> dict[str, Any]:
    """Return the validated engine config of a key=value file (or the defaults)."""

    raw = read_config_file(path) if path else {}
    return SCH_ENGINE_CONFIG(raw)  # type: ignore[no-any-return]


async def async_setup_engine(
    config: dict[str, Any] | None = None, *, gateway: ModelGateway | None = None
) -> MemoryBroker:
    """Create, set up and start an engine from a (raw) config mapping."""

    options = SCH_ENGINE_CONFIG(config or {})
    broker = MemoryBroker(options, gateway=gateway)

    await broker.async_setup()
    await broker.async_start()

    _LOGGER.debug("Engine started (stage2=%s)", broker.retriever.stage2)
    return broker
