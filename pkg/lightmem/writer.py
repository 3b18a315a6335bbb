"""Memory writing: turn summaries into MTM items, then keep MTM within bounds.

Every write runs maintenance inline, in this order: merge with a near-duplicate,
or resolve a conflict with a near-duplicate that negates it, then evict the
lowest-utility items until the user's partition fits the capacity bound B.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Final

import numpy as np

from .const import (
    CONFLICT_EVIDENCE_RATIO,
    DEFAULT_CAPACITY_B,
    DEFAULT_EVICTION_BATCH,
    DEFAULT_MERGE_THRESHOLD,
    HANDOFF_MIN_EVIDENCE,
    UTILITY_DECAY_MS,
    UTILITY_W_ACCESS,
    UTILITY_W_RECENCY,
    ConsolidationFlag,
    Role,
)
from .events import SRC_WRITER, EventLog
from .exceptions import DimensionMismatchError, PreconditionError
from .helpers import stable_id
from .models import DialogueTurn, MemoryItem
from .schemas import SZ_SUMMARIES
from .stm import StmBuffer
from .vector_index import Embedder, MtmStore

if TYPE_CHECKING:
    from .gateway import ModelGateway


_LOGGER = logging.getLogger(__name__)

_NEGATION_RE: Final = re.compile(
    r"\b(?:not|no|never|stopped|no longer|don't|doesn't|isn't|won't|can't)\b"
    r"|n['’]t\b",
    re.IGNORECASE,
)

_UTILITY_SLACK: Final = 1e-9  # vectorized prefilter vs scalar utility


@dataclass(frozen=True, kw_only=True)
class MtmConfig:
    capacity_b: int = DEFAULT_CAPACITY_B
    merge_threshold: float = DEFAULT_MERGE_THRESHOLD
    eviction_batch: int = DEFAULT_EVICTION_BATCH  # hand-offs that trigger a cycle

    def __post_init__(self) -> None:
        if self.capacity_b < 1:
            raise PreconditionError(f"capacity_b must be >= 1: {self.capacity_b}")
        if not 0 < self.merge_threshold <= 1:
            raise PreconditionError(
                f"merge_threshold must be in (0, 1]: {self.merge_threshold}"
            )
        if self.eviction_batch < 1:
            raise PreconditionError("eviction_batch must be positive")


@dataclass(kw_only=True)
class WriteDelta:
    """What one write did to the store."""

    item_id: str  # id of the item that now holds the written content
    inserted: bool = False
    merged: bool = False
    conflict_winner: str | None = None
    absorbed: str | None = None  # id folded into item_id
    evicted: list[str] = field(default_factory=list)
    handed_off: list[str] = field(default_factory=list)

    @property
    def noop(self) -> bool:
        return not (self.inserted or self.merged or self.conflict_winner)


def utility_score(item: MemoryItem, now: int) -> float:
    """Return an item's utility: log-damped use plus exponential recency."""

    staleness = max(0, now - item.last_accessed)
    return UTILITY_W_ACCESS * math.log1p(item.access_count) + (
        UTILITY_W_RECENCY * math.exp(-staleness / UTILITY_DECAY_MS)
    )


def has_negation(text: str) -> bool:
    return bool(_NEGATION_RE.search(text))


def negation_divergent(a: str, b: str) -> bool:
    """Return True if exactly one of two texts is negated."""
    return has_negation(a) != has_negation(b)


def resolve_conflict(existing: MemoryItem, incoming: MemoryItem) -> MemoryItem:
    """Return the surviving version of two conflicting items.

    The newer one wins unless the older has at least twice its evidence. The
    winner absorbs the loser's access statistics and gains one evidence.
    """

    if existing.user_id != incoming.user_id:
        raise PreconditionError("conflicting items belong to different users")

    if incoming.created_at >= existing.created_at:
        older, newer = existing, incoming
    else:
        older, newer = incoming, existing

    if older.evidence_strength >= CONFLICT_EVIDENCE_RATIO * newer.evidence_strength:
        winner, loser = older, newer
    else:
        winner, loser = newer, older

    return replace(
        winner,
        access_count=winner.access_count + loser.access_count,
        last_accessed=max(winner.last_accessed, loser.last_accessed),
        evidence_strength=max(winner.evidence_strength, loser.evidence_strength) + 1,
        consolidation_flag=(
            ConsolidationFlag.NEWLY_WRITTEN
            if winner is incoming
            else winner.consolidation_flag
        ),
    )


def merge_items(existing: MemoryItem, incoming: MemoryItem) -> MemoryItem:
    """Fold a near-duplicate into the existing item (its text is kept)."""

    flag = existing.consolidation_flag
    if flag == ConsolidationFlag.NONE:  # more evidence, worth revisiting
        flag = ConsolidationFlag.REACTIVATED
    return replace(
        existing,
        access_count=existing.access_count + incoming.access_count,
        last_accessed=max(existing.last_accessed, incoming.last_accessed),
        evidence_strength=existing.evidence_strength + incoming.evidence_strength,
        consolidation_flag=flag,
    )


def evict(
    store: MtmStore,
    config: MtmConfig,
    *,
    user_id: str,
    now: int,
    protect: frozenset[str] = frozenset(),
) -> list[str]:
    """Evict a user's lowest-utility items until the partition fits B.

    Ties go to the oldest created_at, then the lowest item_id. Evicted items
    with enough evidence are handed to the consolidator, flagged low_utility.
    """

    excess = store.size(user_id) - config.capacity_b
    if excess <= 0:
        return []

    table = store.table(user_id)
    keys = table.keys
    staleness = np.maximum(0, now - table.column("last_accessed"))
    approx = UTILITY_W_ACCESS * np.log1p(table.column("access_count")) + (
        UTILITY_W_RECENCY * np.exp(-staleness / UTILITY_DECAY_MS)
    )
    for key in protect:
        if (row := table.row(key)) is not None:
            approx[row] = np.inf

    cut = np.partition(approx, excess - 1)[excess - 1]
    pool = [keys[i] for i in np.flatnonzero(approx <= cut + _UTILITY_SLACK)]

    def order(item_id: str) -> tuple[float, int, str]:
        item = store.get(user_id, item_id)
        assert item is not None
        return (utility_score(item, now), item.created_at, item_id)

    evicted = sorted(pool, key=order)[:excess]
    for item_id in evicted:
        item = store.remove(user_id, item_id)
        if item.evidence_strength >= HANDOFF_MIN_EVIDENCE:
            store.handoff.append(
                replace(item, consolidation_flag=ConsolidationFlag.LOW_UTILITY)
            )

    _LOGGER.debug("Evicted %s items of %s", len(evicted), user_id)
    return evicted


def write_mtm(
    store: MtmStore, item: MemoryItem, config: MtmConfig, *, now: int | None = None
) -> WriteDelta:
    """Append an item to its user's MTM, then merge, resolve and evict."""

    if not item.user_id:
        raise PreconditionError("item has no user_id")
    if len(item.embedding) != store.dimension:
        raise DimensionMismatchError(
            f"item {item.item_id} has {len(item.embedding)} dims,"
            f" store has {store.dimension}"
        )

    now = item.created_at if now is None else now
    user_id = item.user_id

    key = (user_id, item.item_id)
    if store.get(user_id, item.item_id) or key in store.absorbed:
        return WriteDelta(item_id=store.absorbed.get(key, item.item_id))

    item = replace(item, consolidation_flag=ConsolidationFlag.NEWLY_WRITTEN)
    delta = WriteDelta(item_id=item.item_id)

    best = store.table(user_id).rank(item.embedding, 1) if store.size(user_id) else []
    if best and best[0][1] >= config.merge_threshold:
        existing = store.get(user_id, best[0][0])
        assert existing is not None

        if negation_divergent(existing.summary, item.summary):
            winner = resolve_conflict(existing, item)
            loser = item if winner.item_id == existing.item_id else existing
            if loser is existing:
                store.remove(user_id, existing.item_id)
                store.insert(winner)
            else:
                store.update(winner)
            delta.conflict_winner = winner.item_id
        else:
            winner, loser = merge_items(existing, item), item
            store.update(winner)
            delta.merged = True

        store.absorbed[(user_id, loser.item_id)] = winner.item_id
        delta.item_id, delta.absorbed = winner.item_id, loser.item_id
    else:
        store.insert(item)
        delta.inserted = True

    mark = len(store.handoff)
    delta.evicted = evict(
        store, config, user_id=user_id, now=now, protect=frozenset({delta.item_id})
    )
    delta.handed_off = [i.item_id for i in store.handoff[mark:]]
    return delta


class MemoryWriter:
    """Summarizes finished turns through the writer role and stores them."""

    def __init__(
        self,
        config: MtmConfig,
        *,
        gateway: ModelGateway,
        embedder: Embedder,
        events: EventLog | None = None,
    ) -> None:
        self.config = config
        self._gateway = gateway
        self._embedder = embedder
        self._events = events or EventLog()

    async def async_summarize_turn(
        self, turn: DialogueTurn, context: StmBuffer
    ) -> list[str]:
        """Return the summaries worth storing for a turn (possibly none)."""

        if not turn.response_text:
            raise PreconditionError(f"turn {turn.turn_index} has no response yet")

        payload = {
            "user_id": turn.user_id,
            "turn_index": turn.turn_index,
            "input": turn.input_text,
            "response": turn.response_text,
            "context": context.window(),
        }
        response = await self._gateway.async_complete(Role.WRITER, payload)
        if response.parsed is None:
            self._events.record(
                SRC_WRITER,
                "write_skipped",
                timestamp=turn.timestamp,
                error=response.error or "no structured output",
            )
            return []

        summaries: list[str] = response.parsed[SZ_SUMMARIES]
        return summaries

    async def async_write_turn(
        self, turn: DialogueTurn, context: StmBuffer, store: MtmStore
    ) -> list[WriteDelta]:
        """Summarize a turn and write each summary to the user's MTM."""

        deltas = []
        for idx, summary in enumerate(await self.async_summarize_turn(turn, context)):
            item = MemoryItem(
                item_id=stable_id("mtm", turn.user_id, turn.turn_index, idx, summary),
                user_id=turn.user_id,
                summary=summary,
                embedding=await self._embedder.async_embed(summary),
                created_at=turn.timestamp,
                last_accessed=turn.timestamp,
            )
            deltas.append(write_mtm(store, item, self.config, now=turn.timestamp))
        return deltas
