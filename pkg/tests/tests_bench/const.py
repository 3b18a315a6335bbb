"""Constants for the bench tests."""

from __future__ import annotations

from typing import Final

SEED: Final = 7
SMALL_K: Final = 3

# a split corpus small enough to replay in every experiment
SMALL_SPLIT: Final = {"recent": 3, "consolidated": 2, "distractors": 6}
