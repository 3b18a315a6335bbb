"""Latency percentiles and paired-bootstrap significance."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any, Final

import numpy as np

from ..exceptions import PreconditionError

DEFAULT_RESAMPLES: Final[int] = 1_000
DEFAULT_SEED: Final[int] = 42


@dataclass(frozen=True, kw_only=True)
class BootstrapResult:
    delta: float  # mean of b - a
    ci95: tuple[float, float]
    p_value: float

    def as_dict(self, digits: int | None = None) -> dict[str, Any]:
        def r(x: float) -> float:
            return x if digits is None else round(x, digits)

        return {
            "delta": r(self.delta),
            "ci95": [r(x) for x in self.ci95],
            "p_value": r(self.p_value),
        }


def nearest_rank(samples: Sequence[float], q: float) -> float:
    """Return the nearest-rank q-quantile: the ceil(q*n)-th smallest sample."""

    if not samples:
        raise PreconditionError("percentiles of an empty sample set")
    if not 0 < q <= 1:
        raise PreconditionError(f"quantile must be in (0, 1]: {q}")

    ordered = np.sort(np.asarray(samples, dtype=np.float64))
    rank = max(1, math.ceil(q * len(ordered)))
    return float(ordered[rank - 1])


def latency_percentiles(samples: Sequence[float]) -> dict[str, float]:
    return {"p50": nearest_rank(samples, 0.50), "p95": nearest_rank(samples, 0.95)}


def paired_bootstrap(
    a: Sequence[float],
    b: Sequence[float],
    *,
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = DEFAULT_SEED,
) -> BootstrapResult:
    """Compare two systems scored on the same instances.

    Returns the mean difference b - a, its 95% percentile interval over the
    resampled means, and a two-sided p-value from the sign of the resampled
    means (floored at the resampling resolution).
    """

    if len(a) != len(b):
        raise PreconditionError(f"unpaired scores: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise PreconditionError("paired bootstrap needs at least 2 pairs")
    if resamples < 1:
        raise PreconditionError("resamples must be positive")

    diffs = np.asarray(b, dtype=np.float64) - np.asarray(a, dtype=np.float64)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(diffs), size=(resamples, len(diffs)))
    means = diffs[idx].mean(axis=1)

    low, high = np.percentile(means, [2.5, 97.5])
    tail = min(int(np.sum(means <= 0)), int(np.sum(means >= 0)))
    p_value = min(1.0, 2 * (tail + 1) / (resamples + 1))

    return BootstrapResult(
        delta=float(diffs.mean()), ci95=(float(low), float(high)), p_value=p_value
    )
