"""Retrieval planning: turn an input and its context into a budgeted plan.

A plan holds the hypothetical queries (HQs), each routed to MTM or LTM with a
Stage-1 quota, plus the metadata filter and the final Top-K budget. Plans come
from the planner role behind the model gateway; when that fails, or returns
something unusable, the rule-based planner below takes over.
"""

from __future__ import annotations

import asyncio
import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Final

import voluptuous as vol  # type: ignore[import-untyped, unused-ignore]

from .const import (
    DEFAULT_K,
    DEFAULT_N_MAX,
    MS_PER_DAY,
    VAGUE_TIME_WINDOW_MS,
    Horizon,
    Personalization,
    Role,
    Store,
    TargetStore,
)
from .events import SRC_PLANNER, EventLog
from .exceptions import PreconditionError
from .helpers import STOPWORDS, word_tokens
from .models import Vector
from .schemas import (
    SCH_LEXICON,
    SZ_DECOMPOSE,
    SZ_FILTERS,
    SZ_GENERAL,
    SZ_HORIZON,
    SZ_HQS,
    SZ_INTENT,
    SZ_PERSONAL,
    SZ_PERSONALIZATION,
    SZ_PREFERENCE,
    SZ_PRONOUNS,
    SZ_ROUTE,
    SZ_TEXT,
    SZ_TIME,
    SZ_TIME_WINDOW_DAYS,
    SZ_TYPE_TAGS,
)
from .stm import StmBuffer
from .vector_index import Embedder, MetadataFilter

if TYPE_CHECKING:
    from .gateway import ModelGateway


_LOGGER = logging.getLogger(__name__)

DEFAULT_LEXICON_PATH: Final = Path(__file__).with_name("markers.txt")

VAGUE_TIME_WINDOW_DAYS: Final[float] = VAGUE_TIME_WINDOW_MS / MS_PER_DAY


@dataclass(frozen=True, kw_only=True)
class HypotheticalQuery:
    """One routed rewrite of the input, with its Stage-1 quota."""

    text: str
    route: Store
    quota: int
    embedding: Vector

    def __post_init__(self) -> None:
        if not self.text:
            raise PreconditionError("hypothetical query text must be non-empty")
        if self.quota < 1:
            raise PreconditionError(f"quota must be positive: {self.quota}")


@dataclass(frozen=True, kw_only=True)
class Intent:
    personalization: Personalization = Personalization.LOW
    horizon: Horizon = Horizon.MIXED


@dataclass(frozen=True, kw_only=True)
class RetrievalPlan:
    """The plan (Q_t) handed to two-stage retrieval."""

    hqs: tuple[HypotheticalQuery, ...]
    filter: MetadataFilter
    k: int
    intent: Intent = field(default_factory=Intent)

    def __post_init__(self) -> None:
        if self.k < 1:
            raise PreconditionError(f"plan budget k must be positive: {self.k}")
        if not self.hqs:
            raise PreconditionError("a plan needs at least one hypothetical query")

        total = sum(hq.quota for hq in self.hqs)
        if not 2 * self.k <= total <= 2 * self.k + len(self.hqs) - 1:
            raise PreconditionError(
                f"quotas sum to {total}, outside [2k, 2k+n-1] for k={self.k}"
            )

    @property
    def budget(self) -> int:
        """Return the Stage-1 pool size (2K)."""
        return 2 * self.k


@dataclass(frozen=True, kw_only=True)
class PlannerConfig:
    k: int = DEFAULT_K
    n_max: int = DEFAULT_N_MAX

    def __post_init__(self) -> None:
        if self.k < 1 or self.n_max < 1:
            raise PreconditionError("k and n_max must be positive")


@dataclass(frozen=True, kw_only=True)
class PlanDraft:
    """A plan before routing expansion, budgeting and embedding.

    This is the shape the planner role emits (see `as_output`).
    """

    hqs: tuple[tuple[str, TargetStore], ...]
    time_window_days: float | None = None
    type_tags: frozenset[str] | None = None
    intent: Intent = field(default_factory=Intent)

    def as_output(self) -> dict[str, Any]:
        return {
            SZ_HQS: [{SZ_TEXT: t, SZ_ROUTE: str(r)} for t, r in self.hqs],
            SZ_FILTERS: {
                SZ_TIME_WINDOW_DAYS: self.time_window_days,
                SZ_TYPE_TAGS: sorted(self.type_tags) if self.type_tags else None,
            },
            SZ_INTENT: {
                SZ_PERSONALIZATION: str(self.intent.personalization),
                SZ_HORIZON: str(self.intent.horizon),
            },
        }

    @classmethod
    def from_output(cls, parsed: dict[str, Any], default_intent: Intent) -> PlanDraft:
        """Build a draft from a validated planner-role output."""

        filters = parsed[SZ_FILTERS]
        intent = default_intent
        if raw := parsed.get(SZ_INTENT):
            intent = Intent(
                personalization=raw[SZ_PERSONALIZATION], horizon=raw[SZ_HORIZON]
            )
        tags = filters.get(SZ_TYPE_TAGS)
        return cls(
            hqs=tuple((hq[SZ_TEXT], hq[SZ_ROUTE]) for hq in parsed[SZ_HQS]),
            time_window_days=filters.get(SZ_TIME_WINDOW_DAYS),
            type_tags=frozenset(tags) if tags else None,
            intent=intent,
        )


def allocate_budget(n: int, k: int) -> list[int]:
    """Split the 2K Stage-1 budget over n HQs, ceil(2K/n) each."""

    if n < 1 or k < 1:
        raise PreconditionError(f"n and k must be positive: n={n}, k={k}")
    return [math.ceil(2 * k / n)] * n


class MarkerLexicon:
    """The marker table of the rule-based planner, one section per cue."""

    def __init__(self, sections: dict[str, list[str]]) -> None:
        try:
            sections = SCH_LEXICON(sections)
        except vol.Invalid as err:
            raise PreconditionError(f"invalid marker lexicon: {err}") from err

        self._markers: dict[str, tuple[tuple[str, ...], ...]] = {
            name: tuple(m for m in (tuple(word_tokens(s)) for s in markers) if m)
            for name, markers in sections.items()
        }

    @classmethod
    def from_text(cls, text: str) -> MarkerLexicon:
        sections: dict[str, list[str]] = {}
        current: list[str] | None = None

        for num, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = sections.setdefault(line[1:-1].strip(), [])
            elif current is None:
                raise PreconditionError(f"line {num}: marker outside any section")
            else:
                current.append(line)

        return cls(sections)

    @classmethod
    def from_file(cls, path: str | Path) -> MarkerLexicon:
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> MarkerLexicon:
        return cls.from_file(DEFAULT_LEXICON_PATH)

    def markers(self, section: str) -> tuple[tuple[str, ...], ...]:
        return self._markers.get(section, ())

    def matches(self, section: str, tokens: Sequence[str]) -> list[str]:
        """Return the markers of a section found in the token sequence."""

        found = []
        for marker in self.markers(section):
            width = len(marker)
            if any(
                tuple(tokens[i : i + width]) == marker
                for i in range(len(tokens) - width + 1)
            ):
                found.append(" ".join(marker))
        return found

    def fires(self, section: str, tokens: Sequence[str]) -> bool:
        return bool(self.matches(section, tokens))


def route_hq(hq_text: str, lexicon: MarkerLexicon) -> TargetStore:
    """Route an HQ by its markers: personal to MTM, general to LTM.

    When both or neither kind of marker fires, the HQ goes to both stores.
    """

    if not hq_text:
        raise PreconditionError("cannot route an empty query")

    tokens = word_tokens(hq_text)
    personal = lexicon.fires(SZ_PERSONAL, tokens) or lexicon.fires(
        SZ_PREFERENCE, tokens
    )
    general = lexicon.fires(SZ_GENERAL, tokens)

    if personal and not general:
        return TargetStore.MTM
    if general and not personal:
        return TargetStore.LTM
    return TargetStore.BOTH


class RuleBasedPlanner:
    """The deterministic planner used as fallback and as the mock backend."""

    def __init__(self, lexicon: MarkerLexicon) -> None:
        self.lexicon = lexicon

    def intent(self, x_t: str) -> Intent:
        tokens = word_tokens(x_t)
        lex = self.lexicon

        personal = lex.fires(SZ_PERSONAL, tokens) or lex.fires(SZ_PREFERENCE, tokens)
        if lex.fires(SZ_TIME, tokens):
            horizon = Horizon.RECENT
        elif lex.fires(SZ_GENERAL, tokens) and not personal:
            horizon = Horizon.LONG_TERM
        else:
            horizon = Horizon.MIXED

        return Intent(
            personalization=Personalization.HIGH if personal else Personalization.LOW,
            horizon=horizon,
        )

    def _topic(self, tokens: list[str]) -> str:
        noise = {t for m in self.lexicon.markers(SZ_DECOMPOSE) for t in m}
        return " ".join(t for t in tokens if t not in STOPWORDS and t not in noise)

    def draft(self, x_t: str, last_input: str | None = None) -> PlanDraft:
        """Return the rule-table plan for an input."""

        if not x_t:
            raise PreconditionError("x_t must be non-empty")

        tokens = word_tokens(x_t)
        lex = self.lexicon

        hqs: list[tuple[str, TargetStore]]
        if lex.fires(SZ_DECOMPOSE, tokens) and (topic := self._topic(tokens)):
            # separate the user's own constraints from objective options
            hqs = [
                (f"what are the user's preferences and constraints for {topic}",
                 TargetStore.MTM),
                (f"highly rated nearby {topic} options", TargetStore.LTM),
            ]
        else:
            text = x_t.strip()
            if lex.fires(SZ_PRONOUNS, tokens) and last_input and last_input != x_t:
                text = f"{text} {last_input.strip()}"
            hqs = [(text, route_hq(text, lex))]

        return PlanDraft(
            hqs=tuple(hqs),
            time_window_days=(
                VAGUE_TIME_WINDOW_DAYS if lex.fires(SZ_TIME, tokens) else None
            ),
            intent=self.intent(x_t),
        )


def expand_routes(
    hqs: Iterable[tuple[str, TargetStore]], n_max: int
) -> list[tuple[str, TargetStore]]:
    """Keep HQs in order while their store slots fit in n_max.

    An HQ routed to both stores takes two slots; if it alone would not fit it
    is kept for MTM only.
    """

    kept: list[tuple[str, TargetStore]] = []
    slots = 0
    for text, route in hqs:
        need = 2 if route == TargetStore.BOTH else 1
        if slots + need > n_max:
            if not kept:
                kept.append((text, TargetStore.MTM))
            break
        kept.append((text, route))
        slots += need
    return kept


class Planner:
    """Builds retrieval plans through the planner role, with rule fallback."""

    def __init__(
        self,
        config: PlannerConfig,
        *,
        gateway: ModelGateway,
        embedder: Embedder,
        lexicon: MarkerLexicon | None = None,
        events: EventLog | None = None,
    ) -> None:
        self.config = config
        self._gateway = gateway
        self._embedder = embedder
        self.rules = RuleBasedPlanner(lexicon or MarkerLexicon.default())
        self._events = events or EventLog()

    async def async_build_plan(
        self, x_t: str, context: StmBuffer, *, now: int
    ) -> RetrievalPlan:
        """Return the retrieval plan for input x_t in its session context."""

        if not x_t:
            raise PreconditionError("x_t must be non-empty")

        last_input = context.last_input()
        payload = {
            "input": x_t,
            "context": context.window(),
            "last_input": last_input,
            "n_max": self.config.n_max,
        }
        response = await self._gateway.async_complete(Role.PLANNER, payload)

        if response.parsed is None:
            self._events.record(
                SRC_PLANNER,
                "rule_fallback",
                timestamp=now,
                error=response.error or "no structured output",
            )
            draft = self.rules.draft(x_t, last_input)
        else:
            draft = PlanDraft.from_output(response.parsed, self.rules.intent(x_t))

        plan = await self.async_plan_from_draft(draft, context.user_id, now=now)
        _LOGGER.debug("Plan for %s: %s", context.user_id, [h.text for h in plan.hqs])
        return plan

    async def async_plan_from_draft(
        self, draft: PlanDraft, user_id: str, *, now: int, k: int | None = None
    ) -> RetrievalPlan:
        """Route, budget and embed a draft into a plan for user_id."""

        k = k or self.config.k
        base = expand_routes(draft.hqs, self.config.n_max)
        quotas = allocate_budget(len(base), k)

        routed: list[tuple[str, Store, int]] = []
        for (text, route), quota in zip(base, quotas, strict=True):
            if route == TargetStore.BOTH:
                half = math.ceil(quota / 2)
                routed += [(text, Store.MTM, half), (text, Store.LTM, half)]
            else:
                routed.append((text, Store(route), quota))

        embeddings = await asyncio.gather(
            *(self._embedder.async_embed(text) for text, _, _ in routed)
        )
        hqs = tuple(
            HypotheticalQuery(text=t, route=r, quota=q, embedding=e)
            for (t, r, q), e in zip(routed, embeddings, strict=True)
        )

        stores = {hq.route for hq in hqs}
        window = None
        if draft.time_window_days:
            window = (max(0, now - int(draft.time_window_days * MS_PER_DAY)), now)

        return RetrievalPlan(
            hqs=hqs,
            filter=MetadataFilter(
                user_id=user_id,
                time_window=window,
                type_tags=draft.type_tags,
                target_store=(
                    TargetStore(stores.pop()) if len(stores) == 1 else TargetStore.BOTH
                ),
            ),
            k=k,
            intent=draft.intent,
        )
