"""Shared domain types of the LightMem engine.

Values are immutable once created: stores replace them (`dataclasses.replace`)
rather than mutate them in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .const import ConsolidationFlag, NodeKind, Relation
from .exceptions import PreconditionError

Vector = tuple[float, ...]


@dataclass(frozen=True, kw_only=True)
class DialogueTurn:
    """One user input (x_t) and, once generated, its response (y_t)."""

    user_id: str
    turn_index: int
    input_text: str
    response_text: str | None = None
    timestamp: int = 0  # ms since epoch

    def __post_init__(self) -> None:
        if self.turn_index < 0:
            raise PreconditionError(f"turn_index must be >= 0: {self.turn_index}")
        if not self.input_text:
            raise PreconditionError("input_text must be non-empty")


@dataclass(frozen=True, kw_only=True)
class MemoryItem:
    """One MTM entry: a compressed episodic summary of a user's interaction."""

    item_id: str
    user_id: str
    summary: str
    embedding: Vector
    created_at: int
    last_accessed: int
    access_count: int = 0
    type_tags: frozenset[str] = field(default_factory=frozenset)
    evidence_strength: float = 1.0
    consolidation_flag: ConsolidationFlag = ConsolidationFlag.NONE

    def __post_init__(self) -> None:
        if not self.summary:
            raise PreconditionError("summary must be non-empty")
        if self.last_accessed < self.created_at:
            raise PreconditionError(
                f"last_accessed < created_at for {self.item_id}"
            )
        if self.access_count < 0:
            raise PreconditionError(f"access_count < 0 for {self.item_id}")


@dataclass(frozen=True, kw_only=True)
class LtmNode:
    """A de-identified knowledge unit in the LTM graph."""

    node_id: str
    kind: NodeKind
    label: str
    embedding: Vector
    confidence: float
    evidence_count: int = 1
    created_at: int = 0
    updated_at: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise PreconditionError(f"confidence out of [0,1]: {self.confidence}")
        if self.evidence_count < 1:
            raise PreconditionError(f"evidence_count < 1 for {self.node_id}")


@dataclass(frozen=True, kw_only=True)
class LtmEdge:
    """A typed link between two LTM nodes."""

    src: str
    dst: str
    relation: Relation
    confidence: float = 0.5

    def __post_init__(self) -> None:
        if self.src == self.dst:
            raise PreconditionError(f"self-loop on {self.src}")
        if not isinstance(self.relation, Relation):
            object.__setattr__(self, "relation", Relation(self.relation))
        if not 0.0 <= self.confidence <= 1.0:
            raise PreconditionError(f"confidence out of [0,1]: {self.confidence}")
