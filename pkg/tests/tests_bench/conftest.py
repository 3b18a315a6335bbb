"""Fixtures for the bench tests."""

from __future__ import annotations

import pytest

from lightmem.bench.corpus import SyntheticCorpus, split_corpus

from .const import SEED, SMALL_SPLIT


@pytest.fixture()
def small_corpus() -> SyntheticCorpus:
    return split_corpus(SEED, **SMALL_SPLIT)
