"""Tests for the retrieval planner and its rule tables."""

from __future__ import annotations

import math

import numpy as np
import pytest

from lightmem.const import (
    MS_PER_DAY,
    Backend,
    Horizon,
    Personalization,
    Role,
    Store,
    TargetStore,
)
from lightmem.events import SRC_PLANNER, EventLog
from lightmem.exceptions import PreconditionError
from lightmem.gateway import ModelGateway, RoleConfig, ScriptedFixtures
from lightmem.mock import MockResponder
from lightmem.planner import (
    MarkerLexicon,
    Planner,
    PlannerConfig,
    RuleBasedPlanner,
    allocate_budget,
    expand_routes,
    route_hq,
)
from lightmem.schemas import ANY_PAYLOAD
from lightmem.stm import StmBuffer
from lightmem.vector_index import Embedder

from .common import get_fixture_path, make_turn
from .const import T0, USER_ID


@pytest.mark.parametrize(
    ("n", "k", "quotas"),
    [
        (1, 5, [10]),
        (2, 5, [5, 5]),
        (1, 7, [14]),
        (3, 5, [4, 4, 4]),
        (4, 1, [1, 1, 1, 1]),
    ],
)
def test_allocate_budget(n: int, k: int, quotas: list[int]) -> None:
    assert allocate_budget(n, k) == quotas
    assert 2 * k <= sum(quotas) <= 2 * k + n - 1


def test_allocate_budget_rejects() -> None:
    with pytest.raises(PreconditionError):
        allocate_budget(0, 5)


def test_budget_law() -> None:
    rng = np.random.default_rng(0)

    for n, k in rng.integers(1, [9, 33], size=(10_000, 2)):
        quotas = allocate_budget(int(n), int(k))

        assert len(quotas) == n
        assert set(quotas) == {math.ceil(2 * k / n)}
        assert 2 * k <= sum(quotas) <= 2 * k + n - 1


@pytest.mark.parametrize(
    ("text", "route"),
    [
        ("what is my sister's name", TargetStore.MTM),
        ("what is the capital of peru", TargetStore.LTM),
        ("what do I like that is popular", TargetStore.BOTH),
        ("weather", TargetStore.BOTH),
    ],
)
def test_route_hq(text: str, route: TargetStore) -> None:
    assert route_hq(text, MarkerLexicon.default()) == route


def test_lexicon_file() -> None:
    lexicon = MarkerLexicon.from_file(get_fixture_path("markers.txt"))

    assert lexicon.markers("general") == ()
    assert route_hq("the capital of peru", lexicon) == TargetStore.BOTH
    assert route_hq("my capital", lexicon) == TargetStore.MTM

    with pytest.raises(PreconditionError):
        MarkerLexicon.from_text("orphan marker\n[pronouns]\nit\n")
    with pytest.raises(PreconditionError):
        MarkerLexicon.from_text("[pronouns]\nit\n")  # no time or preference


def test_decompose() -> None:
    draft = RuleBasedPlanner(MarkerLexicon.default()).draft("Recommend a dinner spot.")

    assert draft.hqs == (
        (
            "what are the user's preferences and constraints for dinner spot",
            TargetStore.MTM,
        ),
        ("highly rated nearby dinner spot options", TargetStore.LTM),
    )
    assert draft.time_window_days is None


def test_pronoun_and_time() -> None:
    rules = RuleBasedPlanner(MarkerLexicon.default())
    draft = rules.draft("did I finish it recently", "I started the boat model")

    assert draft.hqs[0][0] == "did I finish it recently I started the boat model"
    assert draft.time_window_days == 30
    assert draft.intent.horizon == Horizon.RECENT
    assert draft.intent.personalization == Personalization.HIGH


def test_expand_routes() -> None:
    hqs = [("a", TargetStore.BOTH), ("b", TargetStore.MTM), ("c", TargetStore.LTM)]

    assert expand_routes(hqs, 3) == hqs[:2]
    assert expand_routes(hqs, 2) == hqs[:1]
    assert expand_routes(hqs, 1) == [("a", TargetStore.MTM)]


async def test_build_plan(gateway: ModelGateway, embedder: Embedder) -> None:
    planner = Planner(PlannerConfig(k=5), gateway=gateway, embedder=embedder)
    plan = await planner.async_build_plan(
        "Recommend a dinner spot.", StmBuffer(USER_ID), now=T0
    )

    assert [(hq.route, hq.quota) for hq in plan.hqs] == [
        (Store.MTM, 5),
        (Store.LTM, 5),
    ]
    assert plan.budget == 10
    assert plan.filter.user_id == USER_ID
    assert plan.filter.target_store == TargetStore.BOTH
    assert all(len(hq.embedding) == embedder.dimension for hq in plan.hqs)


async def test_both_route_splits_quota(
    gateway: ModelGateway, embedder: Embedder
) -> None:
    planner = Planner(PlannerConfig(k=5), gateway=gateway, embedder=embedder)
    plan = await planner.async_build_plan("weather", StmBuffer(USER_ID), now=T0)

    assert [(hq.route, hq.quota) for hq in plan.hqs] == [
        (Store.MTM, 5),
        (Store.LTM, 5),
    ]
    assert plan.hqs[0].text == plan.hqs[1].text == "weather"


async def test_time_window(gateway: ModelGateway, embedder: Embedder) -> None:
    planner = Planner(PlannerConfig(), gateway=gateway, embedder=embedder)
    context = StmBuffer(USER_ID).append(make_turn("I bought a kayak"))

    plan = await planner.async_build_plan(
        "what did I buy recently", context, now=T0 + 40 * MS_PER_DAY
    )

    assert plan.filter.time_window == (T0 + 10 * MS_PER_DAY, T0 + 40 * MS_PER_DAY)


async def test_rule_fallback(embedder: Embedder) -> None:
    """An unusable planner output falls back to the rule tables."""

    fixtures = ScriptedFixtures(
        [
            {
                "role": Role.PLANNER,
                "payload_hash": ANY_PAYLOAD,
                "response": {
                    "hqs": [{"text": "x", "route": "MTM"}, {"text": "y"}],
                    "filters": {},
                },
            }
        ]
    )
    gateway = ModelGateway(
        {Role.PLANNER: RoleConfig(role=Role.PLANNER, backend=Backend.SCRIPTED)},
        mock=MockResponder(),
        fixtures=fixtures,
    )
    events = EventLog()
    planner = Planner(
        PlannerConfig(), gateway=gateway, embedder=embedder, events=events
    )

    plan = await planner.async_build_plan(
        "Recommend a dinner spot.", StmBuffer(USER_ID), now=T0
    )

    assert len(plan.hqs) == 2
    [event] = events.by_source(SRC_PLANNER)
    assert event.reason == "rule_fallback"
    assert "hqs[1].route" in event.detail["error"]


async def test_planner_rejects_empty(
    gateway: ModelGateway, embedder: Embedder
) -> None:
    planner = Planner(PlannerConfig(), gateway=gateway, embedder=embedder)

    with pytest.raises(PreconditionError):
        await planner.async_build_plan("", StmBuffer(USER_ID), now=T0)

