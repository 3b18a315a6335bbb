"""Broker for the LightMem engine: owns the stores and runs the turn pipeline."""

from __future__ import annotations

import asyncio
import logging
import os
import time
from collections.abc import Callable, Mapping
from copy import deepcopy
from dataclasses import dataclass
from typing import Any, Final

from .bench.stats import latency_percentiles
from .const import (
    CONF_ANCHOR_K,
    CONF_API_KEY_REF,
    CONF_CAPACITY_B,
    CONF_DECAY_LAMBDA,
    CONF_DROP_FLOOR,
    CONF_EMBEDDING_BACKEND,
    CONF_EMBEDDING_DIM,
    CONF_ENDPOINT_URL,
    CONF_EVICTION_BATCH,
    CONF_FIXTURES_PATH,
    CONF_K,
    CONF_LEXICON_PATH,
    CONF_LTM_MERGE_THRESHOLD,
    CONF_MAX_RETRIES,
    CONF_MERGE_THRESHOLD,
    CONF_METRICS_PATH,
    CONF_MODEL,
    CONF_N_MAX,
    CONF_SAVE_INTERVAL,
    CONF_STAGE2,
    CONF_STATE_PATH,
    CONF_STM_MAX_TOKENS,
    CONF_STM_MAX_TURNS,
    CONF_TIMEOUT_MS,
    CONF_TRIGGER_INTERVAL,
    ENV_MODEL_ENDPOINT,
    Backend,
    EmbeddingBackend,
    Role,
)
from .consolidator import ConsolidationConfig, Consolidator, CycleReport
from .events import SRC_GENERATOR, SRC_WRITER, EventLog
from .exceptions import GatewayError, PreconditionError
from .gateway import ModelGateway, RoleConfig, ScriptedFixtures
from .graph import LtmGraph
from .mock import MockResponder
from .models import DialogueTurn
from .planner import MarkerLexicon, Planner, PlannerConfig
from .retrieval import MemoryStores, RetrievedSet, Retriever
from .schemas import SZ_ANSWER, role_backend
from .stm import StmBuffer
from .storage import (
    LatencyRecord,
    MetricsLog,
    load_snapshot,
    save_snapshot,
    snapshot_exists,
)
from .vector_index import Embedder, EmbeddingConfig, MtmStore
from .writer import MemoryWriter, MtmConfig

_LOGGER = logging.getLogger(__name__)

_ITEM_FIELDS: Final = ("item_id", "summary", "created_at", "last_accessed")


def wall_clock_ms() -> int:
    return time.time_ns() // 1_000_000


def build_gateway(options: Mapping[str, Any]) -> ModelGateway:
    """Create the model gateway described by a validated engine config."""

    endpoint = options.get(CONF_ENDPOINT_URL) or os.environ.get(ENV_MODEL_ENDPOINT)

    roles = {}
    for role in Role:
        backend = role_backend(options, role)  # type: ignore[arg-type]
        roles[role] = RoleConfig(
            role=role,
            backend=backend,
            endpoint_url=endpoint if backend == Backend.HTTP else None,
            api_key_ref=options.get(CONF_API_KEY_REF),
            model=options[CONF_MODEL],
            timeout_ms=options[CONF_TIMEOUT_MS],
            max_retries=options[CONF_MAX_RETRIES],
        )
    backends = {cfg.backend for cfg in roles.values()}

    fixtures = None
    if Backend.SCRIPTED in backends:
        if not options.get(CONF_FIXTURES_PATH):
            raise PreconditionError("the scripted backend needs fixtures_path")
        fixtures = ScriptedFixtures.from_file(options[CONF_FIXTURES_PATH])

    mock = None
    if Backend.MOCK in backends:
        mock = MockResponder(
            lexicon=_lexicon(options),
            embedding=EmbeddingConfig(dimension=options[CONF_EMBEDDING_DIM]),
        )

    return ModelGateway(
        roles,
        mock=mock,
        fixtures=fixtures,
        embedding_url=(
            endpoint
            if options[CONF_EMBEDDING_BACKEND] == EmbeddingBackend.HTTP_ENDPOINT
            else None
        ),
    )


def _lexicon(options: Mapping[str, Any]) -> MarkerLexicon:
    if path := options.get(CONF_LEXICON_PATH):
        return MarkerLexicon.from_file(path)
    return MarkerLexicon.default()


@dataclass(frozen=True, kw_only=True)
class QueryResult:
    answer: str
    retrieved: RetrievedSet
    latency: LatencyRecord

    def as_dict(self) -> dict[str, Any]:
        return {
            "answer": self.answer,
            "retrieved": self.retrieved.as_dict(),
            "latency": self.latency.as_dict(),
        }


class MemoryBroker:
    """Container for the stores, the pipeline components and their tasks."""

    def __init__(
        self,
        options: Mapping[str, Any],
        *,
        gateway: ModelGateway | None = None,
        clock: Callable[[], int] = wall_clock_ms,
    ) -> None:
        """Initialize the engine from a validated config (SCH_ENGINE_CONFIG)."""

        self.options = deepcopy(dict(options))
        self._clock = clock
        _LOGGER.debug("Config = %s", self.options)

        self.events = EventLog()
        self.gateway = gateway or build_gateway(self.options)

        dimension = self.options[CONF_EMBEDDING_DIM]
        self.embedder = Embedder(
            EmbeddingConfig(
                dimension=dimension, backend=self.options[CONF_EMBEDDING_BACKEND]
            ),
            self.gateway,
        )
        self.stores = MemoryStores(mtm=MtmStore(dimension), ltm=LtmGraph(dimension))

        self.planner = Planner(
            PlannerConfig(k=self.options[CONF_K], n_max=self.options[CONF_N_MAX]),
            gateway=self.gateway,
            embedder=self.embedder,
            lexicon=_lexicon(self.options),
            events=self.events,
        )
        self.retriever = Retriever(
            stage2=self.options[CONF_STAGE2], gateway=self.gateway, events=self.events
        )
        self.writer = MemoryWriter(
            MtmConfig(
                capacity_b=self.options[CONF_CAPACITY_B],
                merge_threshold=self.options[CONF_MERGE_THRESHOLD],
                eviction_batch=self.options[CONF_EVICTION_BATCH],
            ),
            gateway=self.gateway,
            embedder=self.embedder,
            events=self.events,
        )
        self.consolidator = Consolidator(
            ConsolidationConfig(
                trigger_interval_turns=self.options[CONF_TRIGGER_INTERVAL],
                anchor_k=self.options[CONF_ANCHOR_K],
                merge_threshold=self.options[CONF_LTM_MERGE_THRESHOLD],
                decay_lambda=self.options[CONF_DECAY_LAMBDA],
                drop_floor=self.options[CONF_DROP_FLOOR],
            ),
            gateway=self.gateway,
            embedder=self.embedder,
            events=self.events,
        )

        self.metrics = MetricsLog(self.options.get(CONF_METRICS_PATH))
        self._metrics_queue: asyncio.Queue[LatencyRecord] = asyncio.Queue()

        self._sessions: dict[str, StmBuffer] = {}
        self._turn_locks: dict[str, asyncio.Lock] = {}  # one turn at a time per user
        self._writes: dict[str, asyncio.Task[None]] = {}  # newest per user
        self._cycles: set[asyncio.Task[CycleReport]] = set()
        self._tasks: list[asyncio.Task[None]] = []
        self._metrics_consumer: asyncio.Task[None] | None = None
        self._turns_since_cycle = 0

    async def async_setup(self) -> None:
        """Load persisted state, if any, and start the metrics consumer."""

        if (path := self.options.get(CONF_STATE_PATH)) and snapshot_exists(path):
            self.stores = load_snapshot(
                path, dimension=self.options[CONF_EMBEDDING_DIM]
            )
        if self.metrics.path is not None:
            self.metrics = MetricsLog.from_file(self.metrics.path)

        self._metrics_consumer = asyncio.create_task(self._async_consume_metrics())
        self._tasks.append(self._metrics_consumer)

    async def async_start(self) -> None:
        """Save state at intervals (if a state path is configured)."""

        interval = self.options[CONF_SAVE_INTERVAL]
        if self.options.get(CONF_STATE_PATH) and interval:
            self._tasks.append(asyncio.create_task(self._async_save_periodically()))

    async def async_stop(self) -> None:
        """Finish pending work, save the state and release the gateway."""

        await self.async_drain()
        for task in self._tasks:
            task.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)
        self._tasks.clear()
        self._metrics_consumer = None

        await self.async_save_state()
        await self.gateway.async_close()

    async def _async_save_periodically(self) -> None:
        while True:
            await asyncio.sleep(self.options[CONF_SAVE_INTERVAL])
            await self.async_save_state()

    async def async_save_state(self) -> None:
        if path := self.options.get(CONF_STATE_PATH):
            _LOGGER.info("Saving the store snapshot (MTM, LTM)")
            save_snapshot(self.stores, path)

    async def _async_consume_metrics(self) -> None:
        while True:
            record = await self._metrics_queue.get()
            try:
                self.metrics.append(record)
            except OSError as err:
                _LOGGER.error("Failed to log latency of %s: %s", record.query_id, err)
            finally:
                self._metrics_queue.task_done()

    def session(self, user_id: str) -> StmBuffer:
        """Return the STM buffer of a user, creating it on first use."""

        if user_id not in self._sessions:
            self._sessions[user_id] = StmBuffer(
                user_id,
                max_turns=self.options[CONF_STM_MAX_TURNS],
                max_tokens=self.options[CONF_STM_MAX_TOKENS],
            )
        return self._sessions[user_id]

    async def async_handle_query(
        self, user_id: str, text: str, *, timestamp: int | None = None
    ) -> QueryResult:
        """Answer one user input with memory, then write it behind."""

        if not user_id or not text:
            raise PreconditionError("user_id and text must be non-empty")

        lock = self._turn_locks.setdefault(user_id, asyncio.Lock())
        async with lock:  # the turn index is taken before the model calls
            return await self._async_answer(user_id, text, timestamp)

    async def _async_answer(
        self, user_id: str, text: str, timestamp: int | None
    ) -> QueryResult:
        now = self._clock() if timestamp is None else timestamp
        session = self.session(user_id)
        turn_index = 0 if session.last_index is None else session.last_index + 1

        start = time.perf_counter()
        plan = await self.planner.async_build_plan(text, session, now=now)
        retrieved, _ = await self.retriever.async_retrieve(plan, self.stores, now=now)
        payload = {
            "input": text,
            "context": session.window(),
            "memories": retrieved.summaries,
        }
        retrieval_ms = (time.perf_counter() - start) * 1000

        response = await self.gateway.async_complete(Role.GENERATOR, payload)
        if response.parsed is None:
            self.events.record(
                SRC_GENERATOR, "no_answer", timestamp=now, error=response.error
            )
            raise GatewayError(
                f"the generator failed: {response.error}", status=response.status
            )
        answer: str = response.parsed[SZ_ANSWER]
        end_to_end_ms = (time.perf_counter() - start) * 1000

        turn = DialogueTurn(
            user_id=user_id,
            turn_index=turn_index,
            input_text=text,
            response_text=answer,
            timestamp=now,
        )
        session.append(turn)

        latency = LatencyRecord(
            query_id=f"{user_id}:{turn_index}",
            user_id=user_id,
            retrieval_ms=retrieval_ms,
            end_to_end_ms=end_to_end_ms,
            timestamp=now,
        )
        if self._metrics_consumer is not None:  # nothing drains it before setup
            self._metrics_queue.put_nowait(latency)

        self._schedule_write(turn, deepcopy(session))
        self._turns_since_cycle += 1
        if self._turns_since_cycle >= self.consolidator.config.trigger_interval_turns:
            self._schedule_cycle("turn interval", now)

        return QueryResult(answer=answer, retrieved=retrieved, latency=latency)

    def _schedule_write(self, turn: DialogueTurn, context: StmBuffer) -> None:
        """Chain a write after the user's previous one (per-user order)."""

        previous = self._writes.get(turn.user_id)
        task = asyncio.create_task(self._async_write(turn, context, previous))
        self._writes[turn.user_id] = task

        def forget(done: asyncio.Task[None]) -> None:
            if self._writes.get(turn.user_id) is done:
                del self._writes[turn.user_id]

        task.add_done_callback(forget)

    async def _async_write(
        self,
        turn: DialogueTurn,
        context: StmBuffer,
        previous: asyncio.Task[None] | None,
    ) -> None:
        if previous is not None:
            await asyncio.gather(previous, return_exceptions=True)

        try:
            await self.writer.async_write_turn(turn, context, self.stores.mtm)
        except Exception as err:  # write-behind: the answer has already gone
            _LOGGER.exception(
                "Failed to write turn %s of %s", turn.turn_index, turn.user_id
            )
            self.events.record(
                SRC_WRITER, "write_failed", timestamp=turn.timestamp, error=str(err)
            )
            return

        if len(self.stores.mtm.handoff) >= self.writer.config.eviction_batch:
            self._schedule_cycle("capacity pressure", turn.timestamp)

    def _schedule_cycle(self, reason: str, now: int) -> None:
        if self.consolidator.running or self._cycles:
            return
        _LOGGER.debug("Consolidation triggered by %s", reason)
        self._turns_since_cycle = 0

        task = asyncio.create_task(self._async_cycle_after_writes(now))
        self._cycles.add(task)
        task.add_done_callback(self._cycles.discard)

    async def _async_cycle_after_writes(self, now: int) -> CycleReport:
        await asyncio.gather(*self._writes.values(), return_exceptions=True)
        return await self.consolidator.async_run_cycle(self.stores, now=now)

    async def async_consolidate(self, *, now: int | None = None) -> CycleReport:
        """Run a consolidation cycle now (waits for one already running)."""

        self._turns_since_cycle = 0
        now = self._clock() if now is None else now
        return await self.consolidator.async_run_cycle(self.stores, now=now)

    async def async_drain(self) -> None:
        """Wait for all pending writes, cycles and metrics records."""

        while self._writes or self._cycles:
            await asyncio.gather(
                *self._writes.values(), *self._cycles, return_exceptions=True
            )
        await self.async_flush_metrics()

    async def async_flush_metrics(self) -> None:
        if self._metrics_consumer is not None:
            await self._metrics_queue.join()

    def mtm_page(
        self, user_id: str, *, offset: int = 0, limit: int = 50
    ) -> dict[str, Any]:
        """Return one page of a user's MTM items, oldest first."""

        items = self.stores.mtm.items(user_id)
        return {
            "user_id": user_id,
            "total": len(items),
            "offset": offset,
            "items": [
                {f: getattr(i, f) for f in _ITEM_FIELDS}
                | {
                    "access_count": i.access_count,
                    "consolidation_flag": str(i.consolidation_flag),
                }
                for i in items[offset : offset + limit]
            ],
        }

    def ltm_stats(self) -> dict[str, Any]:
        report = self.consolidator.last_report
        return self.stores.ltm.stats() | {
            "cycles": self.consolidator.cycles,
            "last_cycle": report.as_dict() if report else None,
            "pending_handoff": len(self.stores.mtm.handoff),
        }

    def latency_report(self) -> dict[str, Any]:
        records = self.metrics.records
        report: dict[str, Any] = {"count": len(records)}
        if records:
            report["retrieval_ms"] = latency_percentiles(
                [r.retrieval_ms for r in records]
            )
            report["end_to_end_ms"] = latency_percentiles(
                [r.end_to_end_ms for r in records]
            )
        return report
