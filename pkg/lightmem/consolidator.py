"""Offline consolidation of MTM episodes into the shared LTM graph.

A cycle selects flagged MTM items, abstracts each into de-identified knowledge
candidates, integrates them into a private copy of the graph (merge or insert
and link), applies confidence decay, then publishes the copy in one reference
swap. Queries running meanwhile keep reading the graph they started with.
"""

from __future__ import annotations

import asyncio
import logging
import re
import time
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any, Final

from .const import (
    DEFAULT_ANCHOR_K,
    DEFAULT_DECAY_LAMBDA,
    DEFAULT_DROP_FLOOR,
    DEFAULT_MERGE_THRESHOLD,
    DEFAULT_TRIGGER_INTERVAL,
    INITIAL_CONFIDENCE,
    MERGE_CONFIDENCE_BUMP,
    REDACTED_USER,
    RELATED_TO_THRESHOLD,
    ConsolidationFlag,
    NodeKind,
    Relation,
    Role,
)
from .events import SRC_CONSOLIDATOR, EventLog
from .exceptions import PreconditionError
from .graph import LtmGraph
from .helpers import stable_id, word_tokens
from .models import LtmEdge, LtmNode, MemoryItem, Vector
from .schemas import (
    SZ_CANDIDATES,
    SZ_EDGES,
    SZ_NODE_KIND,
    SZ_RELATION,
    SZ_STATEMENT,
    SZ_TARGET,
)
from .vector_index import Embedder, MtmStore

if TYPE_CHECKING:
    from .gateway import ModelGateway
    from .retrieval import MemoryStores


_LOGGER = logging.getLogger(__name__)

_FIRST_PERSON: Final = (
    (re.compile(r"\bi'm\b", re.IGNORECASE), f"{REDACTED_USER} is"),
    (re.compile(r"\bi've\b", re.IGNORECASE), f"{REDACTED_USER} has"),
    (re.compile(r"\b(?:my|mine)\b", re.IGNORECASE), f"{REDACTED_USER}'s"),
    (re.compile(r"\b(?:i|me|myself)\b", re.IGNORECASE), REDACTED_USER),
)

_TIMESTAMP_RE: Final = re.compile(
    r"\b\d{4}-\d{2}-\d{2}"
    r"(?:[T ]\d{2}:\d{2}(?::\d{2}(?:\.\d+)?)?(?:Z|[+-]\d{2}:?\d{2})?)?\b"
    r"|\b\d{1,2}:\d{2}(?::\d{2})?\b"
    r"|\b\d{10,13}\b"
)
_SPACES_RE: Final = re.compile(r"\s+")
_SPACE_PUNCT_RE: Final = re.compile(r"\s+([,.;:!?])")

_PLACEHOLDER_TOKENS: Final = frozenset(word_tokens(REDACTED_USER)) | {"s"}


@dataclass(frozen=True, kw_only=True)
class KnowledgeCandidate:
    """A de-identified statement proposed for the LTM graph."""

    statement: str
    embedding: Vector
    proposed_kind: NodeKind = NodeKind.CONCEPT
    proposed_edges: tuple[tuple[Relation, str], ...] = ()
    source_item_ids: tuple[str, ...] = ()


@dataclass(frozen=True, kw_only=True)
class ConsolidationConfig:
    trigger_interval_turns: int = DEFAULT_TRIGGER_INTERVAL
    anchor_k: int = DEFAULT_ANCHOR_K
    merge_threshold: float = DEFAULT_MERGE_THRESHOLD
    decay_lambda: float = DEFAULT_DECAY_LAMBDA
    drop_floor: float = DEFAULT_DROP_FLOOR

    def __post_init__(self) -> None:
        if self.trigger_interval_turns < 1 or self.anchor_k < 1:
            raise PreconditionError("trigger interval and anchor_k must be >= 1")
        if not 0 < self.decay_lambda < 1:
            raise PreconditionError(f"decay_lambda not in (0,1): {self.decay_lambda}")
        if not self.drop_floor < 1:
            raise PreconditionError(f"drop_floor must be < 1: {self.drop_floor}")


@dataclass(kw_only=True)
class GraphDelta:
    inserted: list[str] = field(default_factory=list)
    merged: list[str] = field(default_factory=list)
    updated: list[str] = field(default_factory=list)
    dropped: list[str] = field(default_factory=list)  # statements
    edges_added: int = 0

    def __iadd__(self, other: GraphDelta) -> GraphDelta:
        self.inserted += other.inserted
        self.merged += other.merged
        self.updated += other.updated
        self.dropped += other.dropped
        self.edges_added += other.edges_added
        return self


@dataclass(frozen=True, kw_only=True)
class CycleReport:
    """The outcome of one consolidation cycle."""

    cycle: int
    batch_size: int = 0
    inserted: int = 0
    merged: int = 0
    dropped: int = 0
    edges_added: int = 0
    removed: int = 0
    commit_ms: float = 0.0
    nodes: int = 0
    edges: int = 0

    def as_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def _id_pattern(user_id: str) -> re.Pattern[str]:
    # whole words only: "ann" must not match inside "annual"
    return re.compile(
        rf"(?<![A-Za-z0-9]){re.escape(user_id)}(?![A-Za-z0-9])", re.IGNORECASE
    )


def contains_user_id(text: str, user_ids: Iterable[str]) -> bool:
    """Return True if any user id occurs in text."""
    return any(_id_pattern(uid).search(text) for uid in user_ids if uid)


def redact(text: str, user_ids: Iterable[str]) -> str:
    """Strip user identifiers, first-person references and timestamps."""

    ids = sorted({u for u in user_ids if u}, key=len, reverse=True)
    for uid in ids:  # "user <id>" first, so it does not become "user a user"
        text = re.sub(
            rf"\buser\s+{_id_pattern(uid).pattern}",
            REDACTED_USER,
            text,
            flags=re.IGNORECASE,
        )
    for uid in ids:
        text = _id_pattern(uid).sub(REDACTED_USER, text)
    for pattern, repl in _FIRST_PERSON:
        text = pattern.sub(repl, text)

    text = _TIMESTAMP_RE.sub("", text)
    text = _SPACE_PUNCT_RE.sub(r"\1", _SPACES_RE.sub(" ", text))
    return text.strip(" ,;:")


def is_placeholder_only(text: str) -> bool:
    """Return True if nothing but redaction placeholders and punctuation is left."""
    return not set(word_tokens(text)) - _PLACEHOLDER_TOKENS


def select_batch(mtm: MtmStore) -> list[MemoryItem]:
    """Take the flagged MTM items and the evicted hand-offs, clearing their flags."""

    batch: list[MemoryItem] = []
    for item in list(mtm.all_items()):
        if item.consolidation_flag == ConsolidationFlag.NONE:
            continue
        batch.append(item)
        mtm.update(replace(item, consolidation_flag=ConsolidationFlag.NONE))

    batch += mtm.handoff
    mtm.handoff.clear()
    return batch


def restore_batch(mtm: MtmStore, batch: Sequence[MemoryItem]) -> None:
    """Give back a batch taken by select_batch after a failed cycle.

    Items still in the MTM get their flag back (unless it was set again
    meanwhile); the rest return to the front of the hand-off queue.
    """

    queued = {(i.user_id, i.item_id) for i in mtm.handoff}
    handoff = []
    for item in batch:
        current = mtm.get(item.user_id, item.item_id)
        if current is None:
            if (item.user_id, item.item_id) not in queued:
                handoff.append(item)
        elif current.consolidation_flag == ConsolidationFlag.NONE:
            mtm.update(
                replace(current, consolidation_flag=item.consolidation_flag)
            )
    mtm.handoff[:0] = handoff


async def async_abstract_episode(
    item: MemoryItem,
    *,
    gateway: ModelGateway,
    embedder: Embedder,
    user_ids: Iterable[str] = (),
    events: EventLog | None = None,
) -> list[KnowledgeCandidate]:
    """Abstract one MTM episode into de-identified knowledge candidates."""

    if not item.summary:
        raise PreconditionError(f"item {item.item_id} has an empty summary")

    known = {*user_ids, item.user_id}
    payload = {"summary": redact(item.summary, known)}
    response = await gateway.async_complete(Role.CONSOLIDATOR, payload)
    if response.parsed is None:
        (events or EventLog()).record(
            SRC_CONSOLIDATOR,
            "episode_skipped",
            item_id=item.item_id,
            error=response.error or "no structured output",
        )
        return []

    candidates = []
    for raw in response.parsed[SZ_CANDIDATES]:
        statement = redact(raw[SZ_STATEMENT], known)
        if is_placeholder_only(statement) or contains_user_id(statement, known):
            _LOGGER.debug("Discarded candidate from %s: %r", item.item_id, statement)
            continue
        candidates.append(
            KnowledgeCandidate(
                statement=statement,
                embedding=await embedder.async_embed(statement),
                proposed_kind=raw[SZ_NODE_KIND],
                proposed_edges=tuple(
                    (e[SZ_RELATION], e[SZ_TARGET]) for e in raw[SZ_EDGES]
                ),
                source_item_ids=(item.item_id,),
            )
        )
    return candidates


def integrate_candidate(
    candidate: KnowledgeCandidate,
    graph: LtmGraph,
    config: ConsolidationConfig,
    *,
    now: int = 0,
    touched: set[str] | None = None,
) -> GraphDelta:
    """Merge a candidate into its best anchor, or insert and link it.

    `touched` collects the nodes changed in the current batch; a candidate
    landing on one of them again is dropped.
    """

    touched = set() if touched is None else touched
    delta = GraphDelta()

    if not candidate.statement.strip():
        delta.dropped.append(candidate.statement)
        return delta

    anchors = graph.anchors(candidate.embedding, config.anchor_k)

    if anchors and anchors[0][1] >= config.merge_threshold:
        node_id = anchors[0][0]
        if node_id in touched:
            delta.dropped.append(candidate.statement)
            return delta

        node = graph.node(node_id)
        graph.update_node(
            replace(
                node,
                evidence_count=node.evidence_count + 1,
                confidence=min(1.0, node.confidence + MERGE_CONFIDENCE_BUMP),
                updated_at=max(node.updated_at, now),
            )
        )
        touched.add(node_id)
        delta.merged.append(node_id)
        return delta

    node_id = stable_id("ltm", candidate.statement)
    if node_id in graph:  # same text, different vector (non-mock embedder)
        delta.dropped.append(candidate.statement)
        return delta

    graph.add_node(
        LtmNode(
            node_id=node_id,
            kind=candidate.proposed_kind,
            label=candidate.statement,
            embedding=candidate.embedding,
            confidence=INITIAL_CONFIDENCE,
            evidence_count=1,
            created_at=now,
            updated_at=now,
        )
    )
    touched.add(node_id)
    delta.inserted.append(node_id)

    for anchor_id, score in anchors:
        if score >= RELATED_TO_THRESHOLD:
            delta.edges_added += graph.add_edge(
                LtmEdge(
                    src=node_id,
                    dst=anchor_id,
                    relation=Relation.RELATED_TO,
                    confidence=min(1.0, score),
                )
            )

    for relation, target in candidate.proposed_edges:
        target_id = graph.find_label(target)
        if target_id is None or target_id == node_id:
            _LOGGER.debug("Skipped %s edge to unresolved %r", relation, target)
            continue
        delta.edges_added += graph.add_edge(
            LtmEdge(
                src=node_id,
                dst=target_id,
                relation=relation,
                confidence=INITIAL_CONFIDENCE,
            )
        )

    return delta


def decay_and_forget(graph: LtmGraph, config: ConsolidationConfig) -> list[str]:
    """Decay singly-evidenced nodes, then drop every node below the floor."""

    for node in list(graph.nodes()):
        if node.evidence_count == 1:
            graph.update_node(
                replace(node, confidence=node.confidence * config.decay_lambda)
            )

    removed = [n.node_id for n in graph.nodes() if n.confidence < config.drop_floor]
    for node_id in removed:
        graph.remove_node(node_id)
    return removed


class Consolidator:
    """Runs consolidation cycles, one at a time, against the live stores."""

    def __init__(
        self,
        config: ConsolidationConfig,
        *,
        gateway: ModelGateway,
        embedder: Embedder,
        events: EventLog | None = None,
    ) -> None:
        self.config = config
        self._gateway = gateway
        self._embedder = embedder
        self._events = events or EventLog()
        self._lock = asyncio.Lock()

        self.cycles = 0
        self.last_report: CycleReport | None = None

    @property
    def running(self) -> bool:
        return self._lock.locked()

    async def async_run_cycle(self, stores: MemoryStores, *, now: int) -> CycleReport:
        """Consolidate the current batch and publish the new graph."""

        async with self._lock:
            self.cycles += 1
            batch = select_batch(stores.mtm)
            if not batch:
                report = CycleReport(
                    cycle=self.cycles,
                    nodes=len(stores.ltm),
                    edges=stores.ltm.edge_count,
                )
                self.last_report = report
                return report

            user_ids = set(stores.mtm.users()) | {i.user_id for i in batch}
            work = stores.ltm.copy()

            delta = GraphDelta()
            touched: set[str] = set()
            try:
                for item in batch:
                    for candidate in await async_abstract_episode(
                        item,
                        gateway=self._gateway,
                        embedder=self._embedder,
                        user_ids=user_ids,
                        events=self._events,
                    ):
                        delta += integrate_candidate(
                            candidate, work, self.config, now=now, touched=touched
                        )
                removed = decay_and_forget(work, self.config)
            except BaseException:
                _LOGGER.warning(
                    "Consolidation cycle %s failed, %s episodes kept for the next",
                    self.cycles,
                    len(batch),
                )
                restore_batch(stores.mtm, batch)
                raise

            start = time.perf_counter()
            stores.ltm = work
            commit_ms = (time.perf_counter() - start) * 1000

            report = CycleReport(
                cycle=self.cycles,
                batch_size=len(batch),
                inserted=len(delta.inserted),
                merged=len(delta.merged),
                dropped=len(delta.dropped),
                edges_added=delta.edges_added,
                removed=len(removed),
                commit_ms=commit_ms,
                nodes=len(work),
                edges=work.edge_count,
            )
            self.last_report = report

        _LOGGER.info(
            "Consolidation cycle %s: %s episodes, +%s nodes, %s merged, -%s removed",
            report.cycle,
            report.batch_size,
            report.inserted,
            report.merged,
            report.removed,
        )
        return report
