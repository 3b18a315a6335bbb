"""Two-stage retrieval: a 2K coarse vector pool, then semantic filtering to K."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Final

from .const import Role, Stage2Mode, Store, TargetStore
from .events import SRC_SELECTOR, EventLog
from .exceptions import PreconditionError
from .graph import LtmGraph
from .models import Vector
from .planner import RetrievalPlan
from .schemas import SZ_KEEP_IDS
from .vector_index import MtmStore, SearchableStore, cosine, search

if TYPE_CHECKING:
    from .gateway import ModelGateway


_LOGGER = logging.getLogger(__name__)

_SCORE_DIGITS: Final = 6  # coarse scores shown to the selector


@dataclass
class MemoryStores:
    """The searchable tiers. `ltm` is replaced wholesale by consolidation."""

    mtm: MtmStore
    ltm: LtmGraph

    def for_route(self, route: Store) -> SearchableStore:
        return self.mtm if route == Store.MTM else self.ltm


@dataclass(frozen=True, kw_only=True)
class Candidate:
    """One Stage-1 hit, with what Stage 2 needs to judge it."""

    ref: str
    store: Store
    hq_index: int
    coarse_score: float
    summary: str
    embedding: Vector
    created_at: int

    @property
    def sort_key(self) -> tuple[float, int, str]:
        return (-self.coarse_score, -self.created_at, self.ref)


@dataclass(frozen=True, kw_only=True)
class CandidateSet:
    """The Stage-1 pool (C), at most 2K distinct items."""

    entries: tuple[Candidate, ...]
    budget: int

    def __post_init__(self) -> None:
        if len(self.entries) > self.budget:
            raise PreconditionError(f"{len(self.entries)} candidates > {self.budget}")
        if len({c.ref for c in self.entries}) != len(self.entries):
            raise PreconditionError("duplicate candidate refs")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def refs(self) -> list[str]:
        return [c.ref for c in self.entries]


@dataclass(frozen=True, kw_only=True)
class RetrievedItem:
    ref: str
    store: Store
    summary: str
    final_score: float
    justification: str  # the HQ the item answered, e.g. "hq:0"


@dataclass(frozen=True, kw_only=True)
class RetrievedSet:
    """The final Top-K (R_t), a subset of its candidate pool."""

    entries: tuple[RetrievedItem, ...]
    k: int

    def __post_init__(self) -> None:
        if len(self.entries) > self.k:
            raise PreconditionError(f"{len(self.entries)} retrieved > k={self.k}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def refs(self) -> list[str]:
        return [e.ref for e in self.entries]

    @property
    def summaries(self) -> list[str]:
        return [e.summary for e in self.entries]

    def as_dict(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "entries": [
                {
                    "ref": e.ref,
                    "store": str(e.store),
                    "summary": e.summary,
                    "score": round(e.final_score, _SCORE_DIGITS),
                    "justification": e.justification,
                }
                for e in self.entries
            ],
        }


def _tag(hq_index: int) -> str:
    return f"hq:{hq_index}"


def _candidate(
    mtm: MtmStore,
    ltm: LtmGraph,
    user_id: str,
    route: Store,
    hit: tuple[str, float],
    idx: int,
) -> Candidate:
    ref, score = hit
    if route == Store.MTM:
        item = mtm.get(user_id, ref)
        assert item is not None  # just returned by search
        summary, embedding, created = item.summary, item.embedding, item.created_at
    else:
        node = ltm.node(ref)
        summary, embedding, created = node.label, node.embedding, node.created_at
    return Candidate(
        ref=ref,
        store=route,
        hq_index=idx,
        coarse_score=score,
        summary=summary,
        embedding=embedding,
        created_at=created,
    )


def stage1_coarse(
    plan: RetrievalPlan,
    stores: MemoryStores,
    *,
    now: int = 0,
    record_hits: bool = True,
) -> CandidateSet:
    """Collect each HQ's quota from its store, dedupe and cut to 2K."""

    ltm = stores.ltm  # one graph version for the whole query
    flt = plan.filter

    pool: dict[str, Candidate] = {}
    for idx, hq in enumerate(plan.hqs):
        if flt.target_store not in (TargetStore.BOTH, TargetStore(hq.route)):
            continue
        store = stores.mtm if hq.route == Store.MTM else ltm
        for hit in search(
            hq.embedding, flt, hq.quota, store, now=now, record_hits=record_hits
        ):
            if hit[0] not in pool:  # the lowest HQ index wins
                pool[hit[0]] = _candidate(
                    stores.mtm, ltm, flt.user_id, hq.route, hit, idx
                )

    entries = sorted(pool.values(), key=lambda c: c.sort_key)[: plan.budget]
    return CandidateSet(entries=tuple(entries), budget=plan.budget)


def fallback_scores(
    plan: RetrievalPlan, c: CandidateSet
) -> dict[str, tuple[float, int]]:
    """Return each candidate's max cosine over the HQs, with the argmax HQ."""

    scores = {}
    for cand in c.entries:
        sims = [cosine(cand.embedding, hq.embedding) for hq in plan.hqs]
        best = max(range(len(sims)), key=lambda i: (sims[i], -i))
        scores[cand.ref] = (sims[best], best)
    return scores


def _top_k(
    c: CandidateSet, scores: dict[str, tuple[float, int]], refs: list[str], k: int
) -> list[str]:
    by_ref = {cand.ref: cand for cand in c.entries}
    return sorted(
        refs,
        key=lambda r: (-scores[r][0], -by_ref[r].created_at, r),
    )[:k]


class Retriever:
    """Runs Stage 1 and Stage 2 for a plan."""

    def __init__(
        self,
        *,
        stage2: Stage2Mode = Stage2Mode.MODEL,
        gateway: ModelGateway | None = None,
        events: EventLog | None = None,
    ) -> None:
        if stage2 == Stage2Mode.MODEL and gateway is None:
            raise PreconditionError("the model selector needs a gateway")
        self.stage2 = stage2
        self._gateway = gateway
        self._events = events or EventLog()

    def _finish(
        self,
        c: CandidateSet,
        refs: list[str],
        scores: dict[str, tuple[float, int]],
        k: int,
    ) -> RetrievedSet:
        by_ref = {cand.ref: cand for cand in c.entries}
        return RetrievedSet(
            entries=tuple(
                RetrievedItem(
                    ref=r,
                    store=by_ref[r].store,
                    summary=by_ref[r].summary,
                    final_score=scores[r][0],
                    justification=_tag(scores[r][1]),
                )
                for r in refs
            ),
            k=k,
        )

    async def async_stage2_filter(
        self,
        plan: RetrievalPlan,
        c: CandidateSet,
        *,
        mode: Stage2Mode | None = None,
        now: int = 0,
    ) -> RetrievedSet:
        """Select at most K candidates from the pool (selection only)."""

        mode = mode or self.stage2
        k = plan.k

        if mode == Stage2Mode.BYPASS:  # plain vector Top-K
            top = c.entries[:k]
            return RetrievedSet(
                entries=tuple(
                    RetrievedItem(
                        ref=e.ref,
                        store=e.store,
                        summary=e.summary,
                        final_score=e.coarse_score,
                        justification=_tag(e.hq_index),
                    )
                    for e in top
                ),
                k=k,
            )

        scores = fallback_scores(plan, c)
        if len(c) <= k:  # nothing to select
            return self._finish(c, _top_k(c, scores, c.refs, k), scores, k)

        if mode == Stage2Mode.FALLBACK:
            return self._finish(c, _top_k(c, scores, c.refs, k), scores, k)

        kept = await self._async_model_select(plan, c, now=now)
        if kept is None:
            return self._finish(c, _top_k(c, scores, c.refs, k), scores, k)
        if len(kept) > k:
            chosen = set(_top_k(c, scores, kept, k))
            kept = [r for r in kept if r in chosen]
        return self._finish(c, kept, scores, k)

    async def _async_model_select(
        self, plan: RetrievalPlan, c: CandidateSet, *, now: int
    ) -> list[str] | None:
        assert self._gateway is not None

        payload = {
            "hqs": [hq.text for hq in plan.hqs],
            "k": plan.k,
            "candidates": [
                {
                    "id": e.ref,
                    "store": str(e.store),
                    "summary": e.summary,
                    "score": round(e.coarse_score, _SCORE_DIGITS),
                    "created_at": e.created_at,
                }
                for e in c.entries
            ],
        }
        response = await self._gateway.async_complete(Role.SELECTOR, payload)
        if response.parsed is None:
            self._events.record(
                SRC_SELECTOR,
                "fallback_selection",
                timestamp=now,
                error=response.error or "no structured output",
            )
            return None

        allowed = set(c.refs)
        kept: list[str] = []
        invalid: list[str] = []
        for ref in response.parsed[SZ_KEEP_IDS]:
            if ref not in allowed:
                invalid.append(ref)
            elif ref not in kept:
                kept.append(ref)

        if invalid:
            self._events.record(
                SRC_SELECTOR, "ids_outside_candidates", timestamp=now, ids=invalid
            )
        return kept

    async def async_retrieve(
        self, plan: RetrievalPlan, stores: MemoryStores, *, now: int = 0
    ) -> tuple[RetrievedSet, float]:
        """Run both stages; returns R_t and the retrieval time in ms."""

        start = time.perf_counter()
        c = stage1_coarse(plan, stores, now=now)
        r_t = await self.async_stage2_filter(plan, c, now=now)
        elapsed_ms = (time.perf_counter() - start) * 1000

        _LOGGER.debug(
            "Retrieved %s of %s candidates for %s in %.2f ms",
            len(r_t),
            len(c),
            plan.filter.user_id,
            elapsed_ms,
        )
        return r_t, elapsed_ms


async def async_stage2_filter(
    plan: RetrievalPlan,
    c: CandidateSet,
    *,
    mode: Stage2Mode = Stage2Mode.FALLBACK,
    gateway: ModelGateway | None = None,
    events: EventLog | None = None,
) -> RetrievedSet:
    """Filter a candidate pool down to K with the given selector."""
    retriever = Retriever(stage2=mode, gateway=gateway, events=events)
    return await retriever.async_stage2_filter(plan, c)
