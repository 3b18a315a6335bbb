"""Embedding backends and exact, metadata-filtered top-k similarity search.

Search is an exact linear scan over a dense matrix per partition. At the MTM
capacity bound (B = 10^4) this keeps latency low and every result checkable
against a brute-force ranking; an ANN index would slot in behind `VectorTable`.
"""

from __future__ import annotations

import hashlib
import logging
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import TYPE_CHECKING, Final, Protocol

import numpy as np
import numpy.typing as npt

from .const import (
    DEFAULT_EMBEDDING_DIM,
    ConsolidationFlag,
    EmbeddingBackend,
    TargetStore,
)
from .exceptions import (
    DimensionMismatchError,
    PreconditionError,
    ZeroNormError,
)
from .helpers import word_tokens
from .models import MemoryItem, Vector

if TYPE_CHECKING:
    from .gateway import ModelGateway


_LOGGER = logging.getLogger(__name__)

_MOCK_SEED: Final = b"lightmem-embed-v1"
_NGRAM: Final = 3
_INITIAL_ROWS: Final = 64

FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True, kw_only=True)
class EmbeddingConfig:
    """How text is turned into vectors."""

    dimension: int = DEFAULT_EMBEDDING_DIM
    backend: EmbeddingBackend = EmbeddingBackend.DETERMINISTIC_MOCK

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise PreconditionError(f"dimension must be positive: {self.dimension}")


@dataclass(frozen=True, kw_only=True)
class MetadataFilter:
    """Constraints (phi_t) applied to every search of a plan."""

    user_id: str
    time_window: tuple[int, int] | None = None  # [start, end] ms, on created_at
    type_tags: frozenset[str] | None = None  # matches items sharing any tag
    target_store: TargetStore = TargetStore.BOTH

    def __post_init__(self) -> None:
        if not self.user_id:
            raise PreconditionError("a metadata filter needs a user_id")
        if self.time_window and self.time_window[0] > self.time_window[1]:
            raise PreconditionError(f"time window start > end: {self.time_window}")

    def admits(self, item: MemoryItem) -> bool:
        """Return True if an MTM item satisfies the filter."""
        if item.user_id != self.user_id:
            return False
        if self.time_window and not (
            self.time_window[0] <= item.created_at <= self.time_window[1]
        ):
            return False
        return not self.type_tags or bool(self.type_tags & item.type_tags)


def _features(text: str) -> Iterator[str]:
    for word in word_tokens(text):
        yield word
        padded = f"#{word}#"
        for i in range(max(1, len(padded) - _NGRAM + 1)):
            yield padded[i : i + _NGRAM]


@lru_cache(maxsize=65_536)
def _mock_embed(text: str, dimension: int) -> Vector:
    vec = np.zeros(dimension, dtype=np.float64)

    features = list(_features(text)) or [text.strip() or text]
    for feat in features:
        digest = hashlib.blake2b(feat.encode(), key=_MOCK_SEED, digest_size=8).digest()
        value = int.from_bytes(digest, "little")
        vec[value % dimension] += 1.0 if (value >> 63) & 1 else -1.0

    norm = float(np.linalg.norm(vec))
    if norm == 0.0:  # features cancelled out
        vec[0], norm = 1.0, 1.0
    return tuple((vec / norm).tolist())


def embed(text: str, config: EmbeddingConfig) -> Vector:
    """Return the deterministic mock embedding of text.

    The vector is a seeded hash of the text's words and character trigrams,
    L2-normalized; it is a pure function of (text, dimension).
    """

    if not text:
        raise PreconditionError("cannot embed empty text")
    if config.backend != EmbeddingBackend.DETERMINISTIC_MOCK:
        raise PreconditionError(f"{config.backend} embeddings need async_embed()")
    return _mock_embed(text, config.dimension)


class Embedder:
    """Embeds text with the configured backend."""

    def __init__(
        self, config: EmbeddingConfig, gateway: ModelGateway | None = None
    ) -> None:
        self.config = config
        self._gateway = gateway

    @property
    def dimension(self) -> int:
        return self.config.dimension

    def embed(self, text: str) -> Vector:
        """Embed synchronously (deterministic mock only)."""
        return embed(text, self.config)

    async def async_embed(self, text: str) -> Vector:
        """Embed text with whatever backend is configured."""

        if self.config.backend == EmbeddingBackend.DETERMINISTIC_MOCK:
            return embed(text, self.config)

        if not text:
            raise PreconditionError("cannot embed empty text")
        if self._gateway is None:
            raise PreconditionError("http embeddings need a model gateway")

        vector = await self._gateway.async_embed(text)
        if len(vector) != self.config.dimension:
            raise DimensionMismatchError(
                f"endpoint returned {len(vector)} dims,"
                f" expected {self.config.dimension}"
            )
        return vector


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    """Return the cosine similarity of two equal-length, nonzero vectors."""

    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise DimensionMismatchError(f"{va.shape} vs {vb.shape}")

    na, nb = float(np.linalg.norm(va)), float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ZeroNormError("cosine of a zero-norm vector")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


class VectorTable:
    """A dense, growable matrix of keyed vectors plus int64 side columns.

    Rows are removed by moving the last row into the hole, so row order is not
    insertion order; rankings never depend on row order.
    """

    def __init__(self, dimension: int, columns: Iterable[str] = ()) -> None:
        self.dimension = dimension
        self._keys: list[str] = []
        self._rows: dict[str, int] = {}
        self._matrix: FloatArray = np.zeros((_INITIAL_ROWS, dimension))
        self._norms: FloatArray = np.zeros(_INITIAL_ROWS)
        self._columns: dict[str, npt.NDArray[np.int64]] = {
            name: np.zeros(_INITIAL_ROWS, dtype=np.int64) for name in columns
        }

    def __len__(self) -> int:
        return len(self._keys)

    def __contains__(self, key: object) -> bool:
        return key in self._rows

    @property
    def keys(self) -> list[str]:
        return list(self._keys)

    def row(self, key: str) -> int | None:
        """Return the live row of a key, if present."""
        return self._rows.get(key)

    def _grow(self) -> None:
        rows = self._matrix.shape[0] * 2
        self._matrix = np.resize(self._matrix, (rows, self.dimension))
        self._norms = np.resize(self._norms, rows)
        for name, col in self._columns.items():
            self._columns[name] = np.resize(col, rows)

    def add(self, key: str, vector: Sequence[float], **columns: int) -> None:
        """Add a keyed vector (replacing any existing row for the key)."""

        if len(vector) != self.dimension:
            raise DimensionMismatchError(
                f"vector has {len(vector)} dims, store has {self.dimension}"
            )
        if key in self._rows:
            self.remove(key)
        if len(self._keys) == self._matrix.shape[0]:
            self._grow()

        row = len(self._keys)
        self._keys.append(key)
        self._rows[key] = row
        self._matrix[row] = vector
        self._norms[row] = np.linalg.norm(self._matrix[row])
        for name, value in columns.items():
            self._columns[name][row] = value

    def set(self, key: str, **columns: int) -> None:
        """Update side columns of an existing row."""
        row = self._rows[key]
        for name, value in columns.items():
            self._columns[name][row] = value

    def remove(self, key: str) -> None:
        row = self._rows.pop(key)
        last = len(self._keys) - 1
        if row != last:
            moved = self._keys[last]
            self._keys[row] = moved
            self._rows[moved] = row
            self._matrix[row] = self._matrix[last]
            self._norms[row] = self._norms[last]
            for col in self._columns.values():
                col[row] = col[last]
        self._keys.pop()

    def column(self, name: str) -> npt.NDArray[np.int64]:
        """Return a view of a side column over the live rows."""
        return self._columns[name][: len(self._keys)]

    def scores(self, query: Sequence[float]) -> FloatArray:
        """Return the cosine of the query with every live row."""

        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.dimension,):
            raise DimensionMismatchError(
                f"query has {q.shape[0]} dims, store has {self.dimension}"
            )
        qn = float(np.linalg.norm(q))
        if qn == 0.0:
            raise ZeroNormError("query vector has zero norm")

        n = len(self._keys)
        norms = self._norms[:n]
        with np.errstate(divide="ignore", invalid="ignore"):
            sims = (self._matrix[:n] @ q) / (norms * qn)
        return np.clip(np.nan_to_num(sims, nan=-1.0), -1.0, 1.0)

    def rank(
        self,
        query: Sequence[float],
        k: int,
        *,
        created_column: str = "created_at",
        mask: npt.NDArray[np.bool_] | None = None,
    ) -> list[tuple[str, float]]:
        """Return up to k (key, score) by descending score.

        Ties are broken by newer created_at, then lexicographic key.
        """

        n = len(self._keys)
        if n == 0 or k < 1:
            return []

        sims = self.scores(query)
        live = np.arange(n) if mask is None else np.flatnonzero(mask[:n])
        if live.size == 0:
            return []

        if live.size > k:  # keep everything tied with the k-th best score
            kth = np.partition(sims[live], live.size - k)[live.size - k]
            live = live[sims[live] >= kth]

        created = self.column(created_column)
        ordered = sorted(
            live.tolist(), key=lambda r: (-sims[r], -created[r], self._keys[r])
        )
        return [(self._keys[r], float(sims[r])) for r in ordered[:k]]

    def copy(self) -> VectorTable:
        twin = VectorTable(self.dimension)
        twin._keys = list(self._keys)
        twin._rows = dict(self._rows)
        twin._matrix = self._matrix.copy()
        twin._norms = self._norms.copy()
        twin._columns = {k: v.copy() for k, v in self._columns.items()}
        return twin


class SearchableStore(Protocol):
    """A store that search() can rank and credit with hits."""

    def rank(
        self, query: Sequence[float], flt: MetadataFilter, k: int
    ) -> list[tuple[str, float]]: ...

    def record_hits(self, user_id: str, ids: Sequence[str], now: int) -> None: ...


@dataclass
class _Partition:
    table: VectorTable
    items: dict[str, MemoryItem] = field(default_factory=dict)


class MtmStore:
    """Per-user mid-term memory: summaries, embeddings and access metadata."""

    def __init__(self, dimension: int = DEFAULT_EMBEDDING_DIM) -> None:
        self.dimension = dimension
        self._partitions: dict[str, _Partition] = {}

        # item ids merged away, so re-writing them is a no-op: (user, id) -> winner
        self.absorbed: dict[tuple[str, str], str] = {}

        # evicted items kept for the consolidator (flagged low_utility)
        self.handoff: list[MemoryItem] = []

    def __len__(self) -> int:
        return sum(len(p.items) for p in self._partitions.values())

    def users(self) -> list[str]:
        return sorted(self._partitions)

    def size(self, user_id: str) -> int:
        part = self._partitions.get(user_id)
        return len(part.items) if part else 0

    def _partition(self, user_id: str) -> _Partition:
        if user_id not in self._partitions:
            self._partitions[user_id] = _Partition(
                VectorTable(
                    self.dimension,
                    columns=("created_at", "last_accessed", "access_count"),
                )
            )
        return self._partitions[user_id]

    def table(self, user_id: str) -> VectorTable:
        return self._partition(user_id).table

    def get(self, user_id: str, item_id: str) -> MemoryItem | None:
        part = self._partitions.get(user_id)
        return part.items.get(item_id) if part else None

    def items(self, user_id: str) -> list[MemoryItem]:
        """Return a user's items ordered by (created_at, item_id)."""
        part = self._partitions.get(user_id)
        if not part:
            return []
        return sorted(part.items.values(), key=lambda i: (i.created_at, i.item_id))

    def all_items(self) -> Iterator[MemoryItem]:
        for user_id in self.users():
            yield from self.items(user_id)

    def insert(self, item: MemoryItem) -> None:
        """Add (or overwrite) an item in its user's partition."""

        if len(item.embedding) != self.dimension:
            raise DimensionMismatchError(
                f"item {item.item_id} has {len(item.embedding)} dims,"
                f" store has {self.dimension}"
            )
        part = self._partition(item.user_id)
        part.items[item.item_id] = item
        part.table.add(
            item.item_id,
            item.embedding,
            created_at=item.created_at,
            last_accessed=item.last_accessed,
            access_count=item.access_count,
        )

    def update(self, item: MemoryItem) -> None:
        """Replace an existing item's metadata (its embedding is unchanged)."""

        part = self._partitions[item.user_id]
        if item.embedding is not part.items[item.item_id].embedding:
            self.insert(item)
            return
        part.items[item.item_id] = item
        part.table.set(
            item.item_id,
            created_at=item.created_at,
            last_accessed=item.last_accessed,
            access_count=item.access_count,
        )

    def remove(self, user_id: str, item_id: str) -> MemoryItem:
        part = self._partitions[user_id]
        part.table.remove(item_id)
        return part.items.pop(item_id)

    def rank(
        self, query: Sequence[float], flt: MetadataFilter, k: int
    ) -> list[tuple[str, float]]:
        """Rank the filter's user partition by cosine to the query."""

        if flt.target_store == TargetStore.LTM:
            return []
        part = self._partitions.get(flt.user_id)
        if not part:
            return []

        mask = None
        if flt.time_window or flt.type_tags:
            mask = np.fromiter(
                (flt.admits(part.items[key]) for key in part.table.keys),
                dtype=bool,
                count=len(part.table),
            )
        return part.table.rank(query, k, mask=mask)

    def record_hits(self, user_id: str, ids: Sequence[str], now: int) -> None:
        """Credit retrieved items with an access, flagging them reactivated."""

        for item_id in ids:
            if (item := self.get(user_id, item_id)) is None:
                continue
            flag = item.consolidation_flag
            if flag == ConsolidationFlag.NONE:
                flag = ConsolidationFlag.REACTIVATED
            self.update(
                replace(
                    item,
                    access_count=item.access_count + 1,
                    last_accessed=max(item.last_accessed, now),
                    consolidation_flag=flag,
                )
            )


def search(
    query: Sequence[float],
    flt: MetadataFilter,
    k: int,
    store: SearchableStore,
    *,
    now: int = 0,
    record_hits: bool = True,
) -> list[tuple[str, float]]:
    """Return up to k (id, score) pairs satisfying the filter, best first.

    Hits bump access counts and reactivate MTM items unless record_hits is off.
    """

    if k < 1:
        raise PreconditionError(f"k must be positive: {k}")

    results = store.rank(query, flt, k)
    if results and record_hits:
        store.record_hits(flt.user_id, [r[0] for r in results], now)
    return results
