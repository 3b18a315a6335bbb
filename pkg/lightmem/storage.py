"""Durable state: JSONL store snapshots and the append-only latency log.

A snapshot is a directory of JSONL files, one per record kind. The first line
of each file is a header carrying the format version; every other line is one
record with a fixed field order, so equal stores give byte-equal files.
STM is never written.
"""

from __future__ import annotations

import json
import logging
import os
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Final

import voluptuous as vol  # type: ignore[import-untyped, unused-ignore]

from .const import (
    DEFAULT_EMBEDDING_DIM,
    FORMAT_VERSION,
    SZ_FORMAT_VERSION,
    SZ_KIND,
    SZ_LTM_EDGES,
    SZ_LTM_NODES,
    SZ_MTM_ITEMS,
)
from .exceptions import (
    DimensionMismatchError,
    PreconditionError,
    SnapshotCorruptError,
    SnapshotVersionError,
)
from .graph import LtmGraph
from .models import LtmEdge, LtmNode, MemoryItem
from .retrieval import MemoryStores
from .schemas import (
    SCH_LTM_EDGE_RECORD,
    SCH_LTM_NODE_RECORD,
    SCH_MTM_ABSORBED_RECORD,
    SCH_MTM_ITEM_RECORD,
    SCH_SNAPSHOT_HEADER,
)
from .vector_index import MtmStore

_LOGGER = logging.getLogger(__name__)

SZ_MTM_HANDOFF: Final = "mtm_handoff"  # evicted items awaiting consolidation
SZ_MTM_ABSORBED: Final = "mtm_absorbed"  # merged-away ids and their survivors

SNAPSHOT_KINDS: Final = (
    SZ_MTM_ITEMS,
    SZ_MTM_HANDOFF,
    SZ_MTM_ABSORBED,
    SZ_LTM_NODES,
    SZ_LTM_EDGES,
)


def _dumps(record: dict[str, Any]) -> str:
    return json.dumps(record, separators=(",", ":"), ensure_ascii=False)


def item_record(item: MemoryItem) -> dict[str, Any]:
    return {
        "item_id": item.item_id,
        "user_id": item.user_id,
        "summary": item.summary,
        "embedding": list(item.embedding),
        "created_at": item.created_at,
        "last_accessed": item.last_accessed,
        "access_count": item.access_count,
        "type_tags": sorted(item.type_tags),
        "evidence_strength": item.evidence_strength,
        "consolidation_flag": str(item.consolidation_flag),
    }


def node_record(node: LtmNode) -> dict[str, Any]:
    return {
        "node_id": node.node_id,
        "kind": str(node.kind),
        "label": node.label,
        "embedding": list(node.embedding),
        "confidence": node.confidence,
        "evidence_count": node.evidence_count,
        "created_at": node.created_at,
        "updated_at": node.updated_at,
    }


def edge_record(edge: LtmEdge) -> dict[str, Any]:
    return {
        "src": edge.src,
        "dst": edge.dst,
        "relation": str(edge.relation),
        "confidence": edge.confidence,
    }


def snapshot_lines(stores: MemoryStores) -> dict[str, list[str]]:
    """Return the canonical lines of each snapshot file (headers included)."""

    mtm, ltm = stores.mtm, stores.ltm  # one graph version throughout
    records: dict[str, Iterable[dict[str, Any]]] = {
        SZ_MTM_ITEMS: (
            item_record(i) for u in mtm.users() for i in mtm.items(u)
        ),
        SZ_MTM_HANDOFF: (item_record(i) for i in mtm.handoff),
        SZ_MTM_ABSORBED: (
            {"user_id": user_id, "item_id": item_id, "winner_id": winner}
            for (user_id, item_id), winner in sorted(mtm.absorbed.items())
        ),
        SZ_LTM_NODES: (node_record(n) for n in ltm.nodes()),
        SZ_LTM_EDGES: (edge_record(e) for e in ltm.edges()),
    }
    return {
        kind: [
            _dumps({SZ_FORMAT_VERSION: FORMAT_VERSION, SZ_KIND: kind}),
            *(_dumps(r) for r in recs),
        ]
        for kind, recs in records.items()
    }


def save_snapshot(stores: MemoryStores, path: str | Path) -> dict[str, int]:
    """Write the MTM and LTM stores under a directory; returns record counts."""

    folder = Path(path)
    folder.mkdir(parents=True, exist_ok=True)

    counts = {}
    for kind, lines in snapshot_lines(stores).items():
        target = folder / f"{kind}.jsonl"
        tmp = target.with_suffix(".jsonl.tmp")
        tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
        os.replace(tmp, target)
        counts[kind] = len(lines) - 1

    _LOGGER.info("Saved the store snapshot to %s: %s", folder, counts)
    return counts


def _read_records(
    file: Path, kind: str, schema: vol.Schema
) -> Iterator[dict[str, Any]]:
    if not file.exists():
        raise SnapshotCorruptError("file is missing", file=str(file), line=0)

    with file.open(encoding="utf-8") as fh:
        for num, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as err:
                raise SnapshotCorruptError(
                    f"undecodable line ({err.msg})", file=str(file), line=num
                ) from err

            if num == 1:
                try:
                    header = SCH_SNAPSHOT_HEADER(data)
                except vol.Invalid as err:
                    raise SnapshotCorruptError(
                        f"bad header ({err})", file=str(file), line=num
                    ) from err
                if header[SZ_FORMAT_VERSION] != FORMAT_VERSION:
                    raise SnapshotVersionError(
                        f"{file} has format_version {header[SZ_FORMAT_VERSION]},"
                        f" expected {FORMAT_VERSION}"
                    )
                if header[SZ_KIND] != kind:
                    raise SnapshotCorruptError(
                        f"holds {header[SZ_KIND]}, expected {kind}",
                        file=str(file),
                        line=num,
                    )
                continue

            try:
                yield schema(data)
            except (vol.Invalid, PreconditionError) as err:
                raise SnapshotCorruptError(
                    f"invalid record ({err})", file=str(file), line=num
                ) from err


def _item(record: dict[str, Any]) -> MemoryItem:
    fields = record | {
        "embedding": tuple(record["embedding"]),
        "type_tags": frozenset(record["type_tags"]),
    }
    return MemoryItem(**fields)


def load_snapshot(
    path: str | Path, *, dimension: int = DEFAULT_EMBEDDING_DIM
) -> MemoryStores:
    """Rebuild the stores from a snapshot directory written by save_snapshot."""

    folder = Path(path)
    mtm = MtmStore(dimension)
    ltm = LtmGraph(dimension)

    def checked(file: Path, num: int, vector: list[float]) -> tuple[float, ...]:
        if len(vector) != dimension:
            raise DimensionMismatchError(
                f"{file}, record {num}: {len(vector)} dims, expected {dimension}"
            )
        return tuple(vector)

    file = folder / f"{SZ_MTM_ITEMS}.jsonl"
    for num, rec in enumerate(_read_records(file, SZ_MTM_ITEMS, SCH_MTM_ITEM_RECORD)):
        checked(file, num, rec["embedding"])
        mtm.insert(_item(rec))

    file = folder / f"{SZ_MTM_HANDOFF}.jsonl"
    for num, rec in enumerate(
        _read_records(file, SZ_MTM_HANDOFF, SCH_MTM_ITEM_RECORD)
    ):
        checked(file, num, rec["embedding"])
        mtm.handoff.append(_item(rec))

    file = folder / f"{SZ_MTM_ABSORBED}.jsonl"
    for rec in _read_records(file, SZ_MTM_ABSORBED, SCH_MTM_ABSORBED_RECORD):
        mtm.absorbed[(rec["user_id"], rec["item_id"])] = rec["winner_id"]

    file = folder / f"{SZ_LTM_NODES}.jsonl"
    for num, rec in enumerate(_read_records(file, SZ_LTM_NODES, SCH_LTM_NODE_RECORD)):
        vector = checked(file, num, rec["embedding"])
        ltm.add_node(LtmNode(**rec | {"embedding": vector}))

    file = folder / f"{SZ_LTM_EDGES}.jsonl"
    for num, rec in enumerate(_read_records(file, SZ_LTM_EDGES, SCH_LTM_EDGE_RECORD)):
        try:
            ltm.add_edge(LtmEdge(**rec))
        except PreconditionError as err:
            raise SnapshotCorruptError(str(err), file=str(file), line=num + 2) from err

    _LOGGER.info(
        "Loaded the store snapshot from %s: %s MTM items, %s LTM nodes",
        folder,
        len(mtm),
        len(ltm),
    )
    return MemoryStores(mtm=mtm, ltm=ltm)


def snapshot_exists(path: str | Path) -> bool:
    return (Path(path) / f"{SZ_MTM_ITEMS}.jsonl").exists()


#
# Latency metrics


@dataclass(frozen=True, kw_only=True)
class LatencyRecord:
    """Timings of one query, in milliseconds."""

    query_id: str
    user_id: str
    retrieval_ms: float  # plan, both retrieval stages and prompt assembly
    end_to_end_ms: float  # retrieval_ms plus answer generation
    timestamp: int

    def __post_init__(self) -> None:
        if not 0 <= self.retrieval_ms <= self.end_to_end_ms:
            raise PreconditionError(
                f"need 0 <= retrieval_ms <= end_to_end_ms for {self.query_id}"
            )

    def as_dict(self) -> dict[str, Any]:
        return {
            "query_id": self.query_id,
            "user_id": self.user_id,
            "retrieval_ms": self.retrieval_ms,
            "end_to_end_ms": self.end_to_end_ms,
            "timestamp": self.timestamp,
        }


class MetricsLog:
    """An append-only log of LatencyRecords, mirrored to a JSONL file if given.

    Only the broker's metrics consumer appends, so writes never interleave.
    """

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path else None
        self._records: list[LatencyRecord] = []

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> list[LatencyRecord]:
        return list(self._records)

    def append(self, record: LatencyRecord) -> None:
        self._records.append(record)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(_dumps(record.as_dict()) + "\n")

    @classmethod
    def from_file(cls, path: str | Path) -> MetricsLog:
        """Reopen an existing log, keeping its records."""

        log = cls(path)
        if log.path is not None and log.path.exists():
            for num, line in enumerate(log.path.read_text().splitlines(), start=1):
                if not line.strip():
                    continue
                try:
                    log._records.append(LatencyRecord(**json.loads(line)))
                except (json.JSONDecodeError, TypeError, PreconditionError) as err:
                    raise SnapshotCorruptError(
                        str(err), file=str(log.path), line=num
                    ) from err
        return log
