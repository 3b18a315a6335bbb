"""Degradation events: model misbehaviour that was absorbed rather than raised."""

from __future__ import annotations

import logging
from collections import deque
from collections.abc import Callable
from dataclasses import asdict, dataclass, field
from typing import Any, Final

_LOGGER = logging.getLogger(__name__)

EVENT_LOG_SIZE: Final[int] = 1_000

SRC_PLANNER: Final = "planner"
SRC_SELECTOR: Final = "selector"
SRC_WRITER: Final = "writer"
SRC_CONSOLIDATOR: Final = "consolidator"
SRC_GENERATOR: Final = "generator"


@dataclass(frozen=True, kw_only=True)
class DegradationEvent:
    """One fallback taken by the engine."""

    source: str
    reason: str
    detail: dict[str, Any] = field(default_factory=dict)
    timestamp: int = 0

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)


class EventLog:
    """A bounded, in-memory log of degradation events with listeners."""

    def __init__(self, maxlen: int = EVENT_LOG_SIZE) -> None:
        self._events: deque[DegradationEvent] = deque(maxlen=maxlen)
        self._listeners: list[Callable[[DegradationEvent], None]] = []
        self.total = 0  # including those rotated out

    def __len__(self) -> int:
        return len(self._events)

    @property
    def events(self) -> list[DegradationEvent]:
        return list(self._events)

    def record(
        self, source: str, reason: str, *, timestamp: int = 0, **detail: Any
    ) -> DegradationEvent:
        """Record (and log) a degradation, then notify the listeners."""

        event = DegradationEvent(
            source=source, reason=reason, detail=detail, timestamp=timestamp
        )
        self._events.append(event)
        self.total += 1
        _LOGGER.warning("Degraded %s: %s %s", source, reason, detail or "")

        for listener in list(self._listeners):
            listener(event)
        return event

    def listen(
        self, listener: Callable[[DegradationEvent], None]
    ) -> Callable[[], None]:
        """Subscribe to new events; returns the unsubscribe callable."""
        self._listeners.append(listener)
        return lambda: self._listeners.remove(listener)

    def by_source(self, source: str) -> list[DegradationEvent]:
        return [e for e in self._events if e.source == source]
