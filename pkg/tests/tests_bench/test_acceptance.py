"""Multi-seed runs of the experiments, checking the directional outcomes."""

from __future__ import annotations

from collections import defaultdict
from typing import Any

import numpy as np
import pytest

from lightmem.bench.corpus import split_corpus
from lightmem.bench.experiments import (
    DEFAULT_CHECKPOINTS,
    async_run_error_injection,
    async_run_growth,
    async_run_latency,
    async_run_update_gaps,
)
from lightmem.const import StressGroup, UpdateGapMode

from .const import SEED

pytestmark = pytest.mark.slow

SEEDS = range(10)


def _mean_by(rows: list[dict[str, Any]], key: str, value: str) -> dict[Any, float]:
    groups: dict[Any, list[float]] = defaultdict(list)
    for row in rows:
        groups[row[key]].append(row[value])
    return {name: float(np.mean(values)) for name, values in groups.items()}


async def test_two_stage_gap_grows() -> None:
    rows = []
    for seed in SEEDS:
        report = await async_run_growth(seed)
        assert all(r["reached"] for r in report["rows"])
        rows += report["rows"]

    full = _mean_by(rows, "checkpoint", "full_f1")
    vector = _mean_by(rows, "checkpoint", "vector_only_f1")
    gap = {cp: full[cp] - vector[cp] for cp in DEFAULT_CHECKPOINTS}

    assert all(gap[cp] >= 0 for cp in DEFAULT_CHECKPOINTS), gap
    assert gap[10_000] > gap[100], gap


async def test_error_injection_ordering() -> None:
    rows = []
    for seed in SEEDS:
        report = await async_run_error_injection(split_corpus(seed))
        rows += [
            {"group": r["group"], "f1": r["metrics"]["f1"]} for r in report["rows"]
        ]

    f1 = _mean_by(rows, "group", "f1")
    a, e = f1[StressGroup.A_FULL], f1[StressGroup.E_CASCADE]
    singles = (
        StressGroup.B_HQ_NOISE,
        StressGroup.C_NO_STAGE2,
        StressGroup.D_WRITE_NOISE,
    )

    assert all(a > f1[g] for g in singles), f1
    assert all(e < f1[g] for g in singles), f1  # the cascade drops furthest


async def test_update_gap_ordering() -> None:
    rows = []
    for seed in SEEDS:
        rows += (await async_run_update_gaps(split_corpus(seed)))["rows"]

    f1 = _mean_by(rows, "mode", "f1")
    full = f1[UpdateGapMode.FULL]
    single = (f1[UpdateGapMode.LTM_ONLY], f1[UpdateGapMode.MTM_ONLY])

    assert full >= max(single), f1
    assert min(single) <= f1[UpdateGapMode.MTM_NOISE] <= full, f1


async def test_latency_at_scale() -> None:
    report = await async_run_latency(SEED)

    [row] = report["rows"]
    assert row["mtm_items"] >= 10_000
    for key in ("retrieval_ms", "end_to_end_ms"):
        assert row[key]["p50"] <= row[key]["p95"]
    assert row["commit_ms"] < 10
