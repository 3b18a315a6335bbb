"""The long-term memory graph: de-identified nodes linked by typed edges."""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Iterator, Sequence
from typing import Any

import networkx as nx  # type: ignore[import-untyped, unused-ignore]

from .const import DEFAULT_EMBEDDING_DIM, Relation, TargetStore
from .exceptions import DimensionMismatchError, PreconditionError
from .models import LtmEdge, LtmNode
from .vector_index import MetadataFilter, VectorTable

_LOGGER = logging.getLogger(__name__)

_SZ_NODE = "node"
_SZ_EDGE = "edge"


class LtmGraph:
    """A networkx multigraph of LtmNodes, with an exact vector index over them.

    Edges are keyed by relation, so two nodes share at most one edge per type.
    """

    def __init__(self, dimension: int = DEFAULT_EMBEDDING_DIM) -> None:
        self.dimension = dimension
        self._graph = nx.MultiDiGraph()
        self._table = VectorTable(dimension, columns=("created_at",))
        self._labels: dict[str, str] = {}  # casefolded label -> node_id

    def __len__(self) -> int:
        return int(self._graph.number_of_nodes())

    def __contains__(self, node_id: object) -> bool:
        return bool(self._graph.has_node(node_id))

    @property
    def edge_count(self) -> int:
        return int(self._graph.number_of_edges())

    def node(self, node_id: str) -> LtmNode:
        node: LtmNode = self._graph.nodes[node_id][_SZ_NODE]
        return node

    def get(self, node_id: str) -> LtmNode | None:
        return self.node(node_id) if node_id in self else None

    def nodes(self) -> Iterator[LtmNode]:
        """Yield the nodes ordered by node_id."""
        for node_id in sorted(self._graph.nodes):
            yield self.node(node_id)

    def edges(self) -> Iterator[LtmEdge]:
        """Yield the edges ordered by (src, dst, relation)."""
        for _, _, _, edge in sorted(
            self._graph.edges(keys=True, data=_SZ_EDGE), key=lambda e: e[:3]
        ):
            yield edge

    def incident(self, node_id: str) -> list[LtmEdge]:
        out = self._graph.out_edges(node_id, data=_SZ_EDGE)
        into = self._graph.in_edges(node_id, data=_SZ_EDGE)
        return [e for _, _, e in [*out, *into]]

    def find_label(self, label: str) -> str | None:
        """Return the id of the node with this label (case-insensitive)."""
        return self._labels.get(label.strip().casefold())

    def add_node(self, node: LtmNode) -> None:
        if len(node.embedding) != self.dimension:
            raise DimensionMismatchError(
                f"node {node.node_id} has {len(node.embedding)} dims,"
                f" graph has {self.dimension}"
            )
        if node.node_id in self:
            raise PreconditionError(f"node {node.node_id} already exists")

        self._graph.add_node(node.node_id, **{_SZ_NODE: node})
        self._table.add(node.node_id, node.embedding, created_at=node.created_at)
        self._labels.setdefault(node.label.strip().casefold(), node.node_id)

    def update_node(self, node: LtmNode) -> None:
        """Replace a node's attributes; its label and embedding are kept."""

        current = self.node(node.node_id)
        if node.label != current.label or node.embedding != current.embedding:
            raise PreconditionError(f"cannot relabel node {node.node_id}")
        self._graph.nodes[node.node_id][_SZ_NODE] = node

    def remove_node(self, node_id: str) -> list[LtmEdge]:
        """Remove a node and its incident edges, returning the edges."""

        edges = self.incident(node_id)
        label = self.node(node_id).label.strip().casefold()
        self._graph.remove_node(node_id)
        self._table.remove(node_id)
        if self._labels.get(label) == node_id:
            del self._labels[label]
        return edges

    def add_edge(self, edge: LtmEdge) -> bool:
        """Add an edge between existing nodes; False if it already exists."""

        if edge.src not in self or edge.dst not in self:
            raise PreconditionError(f"dangling edge {edge.src} -> {edge.dst}")
        if self._graph.has_edge(edge.src, edge.dst, key=edge.relation):
            return False
        self._graph.add_edge(edge.src, edge.dst, key=edge.relation, **{_SZ_EDGE: edge})
        return True

    def anchors(self, vector: Sequence[float], k: int) -> list[tuple[str, float]]:
        """Return the k nodes most similar to a vector."""
        return self._table.rank(vector, k)

    def rank(
        self, query: Sequence[float], flt: MetadataFilter, k: int
    ) -> list[tuple[str, float]]:
        """Rank the nodes by cosine; LTM is shared, so only the store is filtered."""
        if flt.target_store == TargetStore.MTM:
            return []
        return self._table.rank(query, k)

    def record_hits(self, user_id: str, ids: Sequence[str], now: int) -> None:
        """LTM nodes keep no per-user access statistics."""

    def copy(self) -> LtmGraph:
        """Return an independent copy (nodes and edges are immutable values)."""

        twin = LtmGraph(self.dimension)
        twin._graph = self._graph.copy()
        twin._table = self._table.copy()
        twin._labels = dict(self._labels)
        return twin

    def stats(self) -> dict[str, Any]:
        kinds = Counter(str(n.kind) for n in self.nodes())
        relations = Counter(str(e.relation) for e in self.edges())
        confidences = [n.confidence for n in self.nodes()]
        return {
            "nodes": len(self),
            "edges": self.edge_count,
            "nodes_by_kind": dict(sorted(kinds.items())),
            "edges_by_relation": {
                str(r): relations.get(str(r), 0) for r in Relation
            },
            "mean_confidence": (
                sum(confidences) / len(confidences) if confidences else None
            ),
        }
