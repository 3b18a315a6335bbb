"""Helpers for the engine tests."""

from __future__ import annotations

import math
import pathlib
from collections.abc import Callable, Sequence
from typing import Any

import numpy as np

from lightmem.const import DEFAULT_EMBEDDING_DIM
from lightmem.helpers import stable_id
from lightmem.models import DialogueTurn, MemoryItem
from lightmem.schemas import read_config_file
from lightmem.vector_index import EmbeddingConfig, MetadataFilter, MtmStore, embed

from .const import MINUTE, T0, USER_ID


def get_fixture_path(filename: str) -> pathlib.Path:
    """Get path of fixture."""
    return pathlib.Path(__file__).parent.joinpath("fixtures", filename)


def configuration_fixture(instance: str) -> dict[str, Any]:
    """Return the raw config for an instance of the engine."""
    try:
        return dict(read_config_file(get_fixture_path(f"{instance}/lightmem.conf")))
    except FileNotFoundError:
        return dict(read_config_file(get_fixture_path("default/lightmem.conf")))


def fixed_clock(start: int = T0, step: int = 1_000) -> Callable[[], int]:
    """Return a clock that advances by step on every reading."""

    ticks = iter(range(start, 2**62, step))
    return lambda: next(ticks)


def make_item(
    summary: str,
    *,
    user_id: str = USER_ID,
    created_at: int = T0,
    dimension: int = DEFAULT_EMBEDDING_DIM,
    **kwargs: Any,
) -> MemoryItem:
    """Return an MTM item embedded with the mock embedder."""

    kwargs.setdefault("last_accessed", created_at)
    return MemoryItem(
        item_id=kwargs.pop("item_id", stable_id("mtm", user_id, summary)),
        user_id=user_id,
        summary=summary,
        embedding=embed(summary, EmbeddingConfig(dimension=dimension)),
        created_at=created_at,
        **kwargs,
    )


def make_turn(
    text: str,
    turn_index: int = 0,
    *,
    response: str | None = "Noted.",
    user_id: str = USER_ID,
    timestamp: int = T0,
) -> DialogueTurn:
    return DialogueTurn(
        user_id=user_id,
        turn_index=turn_index,
        input_text=text,
        response_text=response,
        timestamp=timestamp,
    )


#
# Brute-force oracles


def oracle_cosine(a: Sequence[float], b: Sequence[float]) -> float:
    dot = math.fsum(x * y for x, y in zip(a, b, strict=True))
    norm_a = math.sqrt(math.fsum(x * x for x in a))
    norm_b = math.sqrt(math.fsum(y * y for y in b))
    return dot / (norm_a * norm_b)


def random_item(
    rng: np.random.Generator,
    num: int,
    dim: int,
    users: Sequence[str] = (USER_ID,),
    **kwargs: Any,
) -> MemoryItem:
    """Return a gaussian item; created_at defaults to one of 50 shared minutes."""

    created = kwargs.pop("created_at", None) or T0 + int(rng.integers(0, 50)) * MINUTE
    kwargs.setdefault("last_accessed", created)
    return MemoryItem(
        item_id=f"mtm_{int(rng.integers(0, 10**6)):06d}_{num}",
        user_id=users[int(rng.integers(0, len(users)))],
        summary=f"item {num}",
        embedding=tuple(rng.normal(size=dim).tolist()),
        created_at=created,
        type_tags=frozenset(
            t for t in ("food", "work", "health") if rng.random() < 0.4
        ),
        **kwargs,
    )


def random_store(
    rng: np.random.Generator, n: int, dim: int, users: Sequence[str] = (USER_ID,)
) -> MtmStore:
    store = MtmStore(dim)
    for i in range(n):
        store.insert(random_item(rng, i, dim, users))
    return store


def random_filter(
    rng: np.random.Generator, users: Sequence[str] = (USER_ID,)
) -> MetadataFilter:
    """Return a filter with a random user, and maybe a time window and a tag."""

    start = T0 + int(rng.integers(0, 50)) * MINUTE
    return MetadataFilter(
        user_id=users[int(rng.integers(0, len(users)))],
        time_window=(
            (start, start + int(rng.integers(0, 30)) * MINUTE)
            if rng.random() < 0.5
            else None
        ),
        type_tags=frozenset({"food"}) if rng.random() < 0.5 else None,
    )


def oracle_ranking(
    store: MtmStore, query: Sequence[float], flt: MetadataFilter
) -> list[tuple[str, float]]:
    """Rank by a linear scan: cosine desc, then newer, then item_id."""

    scored = [
        (item.item_id, oracle_cosine(item.embedding, query), item.created_at)
        for item in store.items(flt.user_id)
        if flt.admits(item)
    ]
    scored.sort(key=lambda s: (-s[1], -s[2], s[0]))
    return [(item_id, score) for item_id, score, _ in scored]
