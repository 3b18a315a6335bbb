"""Tests for consolidation of MTM episodes into the LTM graph."""

from __future__ import annotations

import re
from dataclasses import replace

import numpy as np
import pytest

from lightmem.const import Backend, ConsolidationFlag, NodeKind, Relation, Role
from lightmem.consolidator import (
    ConsolidationConfig,
    Consolidator,
    KnowledgeCandidate,
    contains_user_id,
    decay_and_forget,
    integrate_candidate,
    is_placeholder_only,
    redact,
    restore_batch,
    select_batch,
)
from lightmem.events import SRC_CONSOLIDATOR, EventLog
from lightmem.exceptions import GatewayError
from lightmem.gateway import ModelGateway, RoleConfig, ScriptedFixtures
from lightmem.graph import LtmGraph
from lightmem.helpers import stable_id
from lightmem.mock import MockResponder
from lightmem.models import LtmNode, MemoryItem
from lightmem.retrieval import MemoryStores
from lightmem.schemas import ANY_PAYLOAD
from lightmem.vector_index import Embedder, MtmStore

from .common import make_item
from .const import MINUTE, OTHER_USER_ID, T0, USER_ID


def _node(
    node_id: str,
    vector: tuple[float, ...],
    *,
    label: str | None = None,
    confidence: float = 0.5,
    evidence_count: int = 1,
) -> LtmNode:
    return LtmNode(
        node_id=node_id,
        kind=NodeKind.CONCEPT,
        label=label or node_id,
        embedding=vector,
        confidence=confidence,
        evidence_count=evidence_count,
    )


#
# De-identification


@pytest.mark.parametrize(
    ("text", "user_ids", "expected"),
    [
        (
            "user alice said: I love my cat",
            ["alice"],
            "a user said: a user love a user's cat",
        ),
        ("met at 2024-05-01 10:30 by the lake", [], "met at by the lake"),
        ("bob and bo went out", ["bo"], "bob and a user went out"),
        ("ALICE likes tea", ["alice"], "a user likes tea"),
        ("user ann filed the annual report", ["ann"], "a user filed the annual report"),
        ("Joanna met ann.", ["ann"], "Joanna met a user."),
    ],
)
def test_redact(text: str, user_ids: list[str], expected: str) -> None:
    assert redact(text, user_ids) == expected


def test_identifier_checks() -> None:
    assert contains_user_id("note for Alice", [USER_ID])
    assert not contains_user_id("bobcat", ["bo"])
    assert not contains_user_id("the annual fee", ["ann"])
    assert contains_user_id("ask Ann first", ["ann"])

    assert is_placeholder_only("a user's.")
    assert not is_placeholder_only("a user likes tea")


#
# Integration into the graph


def test_select_batch() -> None:
    mtm = MtmStore()
    flagged = make_item("flagged", consolidation_flag=ConsolidationFlag.NEWLY_WRITTEN)
    mtm.insert(flagged)
    mtm.insert(make_item("quiet"))
    mtm.handoff.append(make_item("evicted", user_id=OTHER_USER_ID))

    batch = select_batch(mtm)

    assert [i.summary for i in batch] == ["flagged", "evicted"]
    assert mtm.handoff == []
    cleared = mtm.get(USER_ID, flagged.item_id)
    assert cleared is not None
    assert cleared.consolidation_flag == ConsolidationFlag.NONE
    assert select_batch(mtm) == []


def test_insert_merge_and_drop() -> None:
    graph = LtmGraph(3)
    config = ConsolidationConfig()
    candidate = KnowledgeCandidate(
        statement="tea is a drink", embedding=(1.0, 0.0, 0.0)
    )

    delta = integrate_candidate(candidate, graph, config, now=T0)
    node_id = stable_id("ltm", "tea is a drink")
    assert delta.inserted == [node_id]
    assert graph.node(node_id).confidence == 0.5
    assert graph.node(node_id).created_at == T0

    touched: set[str] = set()
    delta = integrate_candidate(candidate, graph, config, now=T0 + 1, touched=touched)
    assert delta.merged == [node_id]
    node = graph.node(node_id)
    assert (node.evidence_count, node.updated_at) == (2, T0 + 1)
    assert node.confidence == pytest.approx(0.55)

    delta = integrate_candidate(candidate, graph, config, touched=touched)
    assert delta.dropped == ["tea is a drink"]  # one merge per node and batch
    assert graph.node(node_id).evidence_count == 2


def test_links() -> None:
    graph = LtmGraph(3)
    graph.add_node(_node("n_drink", (1.0, 0.0, 0.0), label="drink"))
    graph.add_node(_node("n_far", (0.0, 0.0, 1.0), label="far away"))
    candidate = KnowledgeCandidate(
        statement="green tea",
        embedding=(0.8, 0.6, 0.0),
        proposed_kind=NodeKind.ENTITY,
        proposed_edges=((Relation.IS_A, "Drink"), (Relation.IMPLIES, "unknown")),
    )

    delta = integrate_candidate(candidate, graph, ConsolidationConfig())

    [node_id] = delta.inserted
    assert graph.node(node_id).kind == NodeKind.ENTITY
    edges = {(e.dst, e.relation): e.confidence for e in graph.incident(node_id)}
    assert edges == {
        ("n_drink", Relation.RELATED_TO): pytest.approx(0.8),
        ("n_drink", Relation.IS_A): 0.5,
    }
    assert delta.edges_added == 2


def test_decay_and_forget() -> None:
    graph = LtmGraph(3)
    graph.add_node(_node("n_single", (1.0, 0.0, 0.0), confidence=0.8))
    graph.add_node(_node("n_proven", (0.0, 1.0, 0.0), confidence=0.8, evidence_count=2))
    graph.add_node(_node("n_weak", (0.0, 0.0, 1.0), confidence=0.1))

    removed = decay_and_forget(graph, ConsolidationConfig(decay_lambda=0.95))

    assert removed == ["n_weak"]
    assert graph.node("n_single").confidence == pytest.approx(0.76)
    assert graph.node("n_proven").confidence == 0.8


#
# Cycles


async def test_cycle(gateway: ModelGateway, embedder: Embedder) -> None:
    mtm = MtmStore()
    item = make_item(
        f"user {USER_ID} said: my sister is a nurse ; outcome: Noted.",
        consolidation_flag=ConsolidationFlag.NEWLY_WRITTEN,
    )
    mtm.insert(item)
    stores = MemoryStores(mtm=mtm, ltm=LtmGraph())
    published = stores.ltm

    consolidator = Consolidator(
        ConsolidationConfig(), gateway=gateway, embedder=embedder
    )
    report = await consolidator.async_run_cycle(stores, now=T0)

    assert (report.cycle, report.batch_size, report.inserted) == (1, 1, 1)
    assert len(published) == 0  # the old version is never modified
    [node] = stores.ltm.nodes()
    assert node.kind == NodeKind.ENTITY
    assert USER_ID not in node.label.lower()
    assert node.label.startswith("a user said: a user's sister is a nurse")
    assert node.confidence == pytest.approx(0.5 * 0.95)

    again = await consolidator.async_run_cycle(stores, now=T0 + 1)
    assert (again.cycle, again.batch_size, again.nodes) == (2, 0, 1)
    assert consolidator.last_report == again
    assert not consolidator.running


async def test_episode_skipped(embedder: Embedder) -> None:
    fixtures = ScriptedFixtures(
        [{"role": "consolidator", "payload_hash": ANY_PAYLOAD, "response": "[]"}]
    )
    gateway = ModelGateway(
        {
            Role.CONSOLIDATOR: RoleConfig(
                role=Role.CONSOLIDATOR, backend=Backend.SCRIPTED
            )
        },
        mock=MockResponder(),
        fixtures=fixtures,
    )
    events = EventLog()
    mtm = MtmStore()
    mtm.insert(make_item("tea", consolidation_flag=ConsolidationFlag.REACTIVATED))
    stores = MemoryStores(mtm=mtm, ltm=LtmGraph())

    consolidator = Consolidator(
        ConsolidationConfig(), gateway=gateway, embedder=embedder, events=events
    )
    report = await consolidator.async_run_cycle(stores, now=T0)

    assert (report.batch_size, report.inserted) == (1, 0)
    assert [e.reason for e in events.by_source(SRC_CONSOLIDATOR)] == [
        "episode_skipped"
    ]


async def test_failed_cycle_keeps_batch(
    gateway: ModelGateway, embedder: Embedder, monkeypatch: pytest.MonkeyPatch
) -> None:
    outage = [True]
    working = embedder.async_embed

    async def flaky(text: str) -> tuple[float, ...]:
        if outage:
            raise GatewayError("embedding endpoint unreachable", status=503)
        return await working(text)

    mtm = MtmStore()
    flagged = make_item(
        "my sister is a nurse", consolidation_flag=ConsolidationFlag.REACTIVATED
    )
    mtm.insert(flagged)
    mtm.insert(make_item("quiet"))
    evicted = make_item(
        "likes jazz",
        user_id=OTHER_USER_ID,
        consolidation_flag=ConsolidationFlag.LOW_UTILITY,
    )
    mtm.handoff.append(evicted)
    stores = MemoryStores(mtm=mtm, ltm=LtmGraph())
    published = stores.ltm

    consolidator = Consolidator(
        ConsolidationConfig(), gateway=gateway, embedder=embedder
    )
    monkeypatch.setattr(embedder, "async_embed", flaky)

    with pytest.raises(GatewayError):
        await consolidator.async_run_cycle(stores, now=T0)

    assert stores.ltm is published
    assert mtm.handoff == [evicted]
    kept = mtm.get(USER_ID, flagged.item_id)
    assert kept is not None
    assert kept.consolidation_flag == ConsolidationFlag.REACTIVATED
    assert not consolidator.running

    outage.clear()  # the endpoint is back: nothing was lost
    report = await consolidator.async_run_cycle(stores, now=T0 + 1)
    assert (report.batch_size, report.inserted) == (2, 2)
    assert mtm.handoff == []


def test_restore_batch() -> None:
    mtm = MtmStore()
    new = ConsolidationFlag.NEWLY_WRITTEN
    flagged = make_item("flagged", consolidation_flag=new)
    reflagged = make_item("reflagged", consolidation_flag=new)
    gone = make_item("gone", consolidation_flag=new)
    for item in (flagged, reflagged, gone):
        mtm.insert(item)
    mtm.handoff.append(make_item("evicted", user_id=OTHER_USER_ID))

    batch = select_batch(mtm)
    # meanwhile: a hit reactivates one item and a write evicts another
    current = mtm.get(USER_ID, reflagged.item_id)
    assert current is not None
    mtm.update(replace(current, consolidation_flag=ConsolidationFlag.REACTIVATED))
    mtm.remove(USER_ID, gone.item_id)
    mtm.handoff.append(gone)

    restore_batch(mtm, batch)

    def flag(item: MemoryItem) -> ConsolidationFlag | None:
        found = mtm.get(USER_ID, item.item_id)
        return found.consolidation_flag if found else None

    assert flag(flagged) == ConsolidationFlag.NEWLY_WRITTEN
    assert flag(reflagged) == ConsolidationFlag.REACTIVATED
    assert [i.summary for i in mtm.handoff] == ["evicted", "gone"]


async def test_random_cycles(gateway: ModelGateway, embedder: Embedder) -> None:
    rng = np.random.default_rng(11)
    users = (USER_ID, OTHER_USER_ID, "carol")
    owners = ("sister", "coach", "landlord", "nephew")
    likes = ("tea", "jazz", "chess", "rowing", "sushi", "opera")

    mtm = MtmStore()
    stores = MemoryStores(mtm=mtm, ltm=LtmGraph())
    consolidator = Consolidator(
        ConsolidationConfig(), gateway=gateway, embedder=embedder
    )

    for cycle in range(100):
        for j in range(int(rng.integers(0, 4))):
            uid = users[int(rng.integers(0, len(users)))]
            owner = owners[int(rng.integers(0, len(owners)))]
            like = likes[int(rng.integers(0, len(likes)))]
            mtm.insert(
                make_item(
                    f"user {uid} said: at 10:30 {uid} told me my {owner} likes"
                    f" {like} ; outcome: Noted.",
                    item_id=f"mtm_{cycle}_{j}",
                    user_id=uid,
                    created_at=T0 + cycle * MINUTE,
                    consolidation_flag=ConsolidationFlag.NEWLY_WRITTEN,
                )
            )
        before = stores.ltm
        before_ids = [n.node_id for n in before.nodes()]

        report = await consolidator.async_run_cycle(stores, now=T0 + cycle * MINUTE)

        graph = stores.ltm
        if report.batch_size == 0:
            assert graph is before
            assert [n.node_id for n in graph.nodes()] == before_ids
        for node in graph.nodes():
            assert not contains_user_id(node.label, users)
            assert not re.search(r"\d{1,2}:\d{2}", node.label)
            assert 0.0 <= node.confidence <= 1.0
        for edge in graph.edges():
            assert edge.src in graph and edge.dst in graph
            assert 0.0 <= edge.confidence <= 1.0
        assert (report.nodes, report.edges) == (len(graph), graph.edge_count)

    assert consolidator.cycles == 100
