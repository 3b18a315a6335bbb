"""Constants for the engine tests."""

from __future__ import annotations

from typing import Final

TEST_INSTANCES: Final = (
    "default",
    "minimal",
)

USER_ID: Final = "alice"
OTHER_USER_ID: Final = "bob"

T0: Final[int] = 1_700_000_000_000  # ms
MINUTE: Final[int] = 60_000

# a three-turn session, as (input, timestamp)
GOLDEN_SESSION: Final = (
    ("I am allergic to peanuts", T0),
    ("My favorite cuisine is thai food", T0 + MINUTE),
    ("Recommend a dinner spot.", T0 + 2 * MINUTE),
)
