"""Tests for the LTM knowledge graph."""

from __future__ import annotations

import pytest

from lightmem.const import NodeKind, Relation, TargetStore
from lightmem.exceptions import PreconditionError
from lightmem.graph import LtmGraph
from lightmem.models import LtmEdge, LtmNode
from lightmem.vector_index import EmbeddingConfig, MetadataFilter, embed, search

from .const import USER_ID

DIM = 64


def _node(node_id: str, label: str, confidence: float = 0.5) -> LtmNode:
    return LtmNode(
        node_id=node_id,
        kind=NodeKind.CONCEPT,
        label=label,
        embedding=embed(label, EmbeddingConfig(dimension=DIM)),
        confidence=confidence,
    )


@pytest.fixture()
def graph() -> LtmGraph:
    graph = LtmGraph(DIM)
    graph.add_node(_node("n_b", "thai food", 0.8))
    graph.add_node(_node("n_a", "cuisine", 0.4))
    graph.add_edge(LtmEdge(src="n_b", dst="n_a", relation=Relation.IS_A))
    return graph


def test_nodes_and_edges(graph: LtmGraph) -> None:
    assert [n.node_id for n in graph.nodes()] == ["n_a", "n_b"]
    assert graph.find_label("  Thai Food ") == "n_b"

    assert not graph.add_edge(LtmEdge(src="n_b", dst="n_a", relation=Relation.IS_A))
    assert graph.add_edge(LtmEdge(src="n_b", dst="n_a", relation=Relation.IMPLIES))
    assert graph.edge_count == 2

    with pytest.raises(PreconditionError):
        graph.add_edge(LtmEdge(src="n_b", dst="n_x", relation=Relation.IS_A))
    with pytest.raises(PreconditionError):
        graph.add_node(_node("n_a", "again"))


def test_remove_node(graph: LtmGraph) -> None:
    removed = graph.remove_node("n_a")

    assert [(e.src, e.dst) for e in removed] == [("n_b", "n_a")]
    assert "n_a" not in graph
    assert graph.edge_count == 0
    assert graph.find_label("cuisine") is None


def test_update_node(graph: LtmGraph) -> None:
    node = graph.node("n_a")
    graph.update_node(
        LtmNode(**node.__dict__ | {"confidence": 0.9, "evidence_count": 2})
    )
    assert graph.node("n_a").confidence == 0.9

    with pytest.raises(PreconditionError):
        graph.update_node(LtmNode(**node.__dict__ | {"label": "renamed"}))


def test_copy_is_independent(graph: LtmGraph) -> None:
    twin = graph.copy()
    twin.add_node(_node("n_c", "noodles"))
    twin.remove_node("n_a")

    assert len(graph) == 2
    assert graph.edge_count == 1
    assert len(twin) == 2


def test_rank_is_shared(graph: LtmGraph) -> None:
    query = embed("thai food", EmbeddingConfig(dimension=DIM))

    hits = search(query, MetadataFilter(user_id=USER_ID), 1, graph)
    assert hits[0][0] == "n_b"
    assert hits[0][1] == pytest.approx(1.0)

    mtm_only = MetadataFilter(user_id=USER_ID, target_store=TargetStore.MTM)
    assert search(query, mtm_only, 1, graph) == []


def test_stats(graph: LtmGraph) -> None:
    assert graph.stats() == {
        "nodes": 2,
        "edges": 1,
        "nodes_by_kind": {"Concept": 2},
        "edges_by_relation": {
            "IsA": 1,
            "HasProperty": 0,
            "RelatedTo": 0,
            "Implies": 0,
        },
        "mean_confidence": pytest.approx(0.6),
    }
    assert LtmGraph(DIM).stats()["mean_confidence"] is None
