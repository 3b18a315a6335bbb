"""Tests for latency percentiles and the paired bootstrap."""

from __future__ import annotations

import numpy as np
import pytest

from lightmem.bench.stats import latency_percentiles, nearest_rank, paired_bootstrap
from lightmem.exceptions import PreconditionError

SAMPLES = [float(v) for v in range(100, 0, -10)]  # 100, 90, ..., 10


def test_nearest_rank() -> None:
    assert latency_percentiles(SAMPLES) == {"p50": 50.0, "p95": 100.0}
    assert nearest_rank(SAMPLES, 0.01) == 10.0
    assert nearest_rank(SAMPLES, 0.9) == 90.0
    assert nearest_rank([3.5], 0.95) == 3.5

    with pytest.raises(PreconditionError):
        nearest_rank([], 0.5)
    with pytest.raises(PreconditionError):
        nearest_rank(SAMPLES, 0.0)


def test_bootstrap_shift() -> None:
    a = [0.1, 0.4, 0.2, 0.8, 0.5]
    b = [x + 0.25 for x in a]

    result = paired_bootstrap(a, b, resamples=200, seed=1)

    assert result.delta == pytest.approx(0.25)
    assert result.ci95 == pytest.approx((0.25, 0.25))
    assert result.p_value == pytest.approx(2 / 201)


def test_bootstrap_deterministic() -> None:
    a = [0.0, 1.0, 0.5, 0.5, 1.0, 0.0, 0.25]
    b = [1.0, 1.0, 0.0, 0.5, 0.75, 0.5, 0.25]

    first = paired_bootstrap(a, b, resamples=500, seed=3)
    assert paired_bootstrap(a, b, resamples=500, seed=3) == first
    assert first.ci95[0] <= first.delta <= first.ci95[1]
    assert 0 < first.p_value <= 1

    assert first.as_dict(2)["ci95"] == [round(x, 2) for x in first.ci95]


def test_bootstrap_rejects() -> None:
    with pytest.raises(PreconditionError):
        paired_bootstrap([0.1, 0.2], [0.1])
    with pytest.raises(PreconditionError):
        paired_bootstrap([0.1], [0.2])
    with pytest.raises(PreconditionError):
        paired_bootstrap([0.1, 0.2], [0.2, 0.3], resamples=0)


def test_bootstrap_identical_systems() -> None:
    a = [0.0, 1.0, 0.5, 0.25]

    result = paired_bootstrap(a, list(a), resamples=100)

    assert result.delta == 0.0
    assert result.ci95 == (0.0, 0.0)
    assert result.p_value == 1.0


@pytest.mark.slow
def test_bootstrap_power() -> None:
    rng = np.random.default_rng(0)

    hits = 0
    for trial in range(100):
        a = rng.normal(size=200)
        b = a + 0.5 + rng.normal(size=200)
        hits += paired_bootstrap(a, b, seed=trial).p_value < 0.05

    assert hits >= 95


@pytest.mark.slow
def test_bootstrap_null_coverage() -> None:
    rng = np.random.default_rng(1)

    covered = 0
    for trial in range(1_000):
        a = rng.normal(size=100)
        b = a + rng.normal(size=100)  # no true difference
        low, high = paired_bootstrap(a, b, seed=trial).ci95
        covered += low <= 0.0 <= high

    assert 920 <= covered <= 980
