"""Short-term memory: the in-prompt buffer of the most recent turns.

STM is working memory only. It is never persisted nor retrieved, so the buffer
deliberately has no serialization surface.
"""

from __future__ import annotations

import logging
from collections import deque
from collections.abc import Iterator

from .const import DEFAULT_STM_MAX_TOKENS, DEFAULT_STM_MAX_TURNS
from .exceptions import PreconditionError, TurnOrderError
from .helpers import whitespace_tokens
from .models import DialogueTurn

_LOGGER = logging.getLogger(__name__)


def render_turn(turn: DialogueTurn) -> str:
    """Render one turn as a single window line."""
    return (
        f"[{turn.turn_index}] user: {turn.input_text}"
        f" / assistant: {turn.response_text or ''}"
    ).rstrip()


class StmBuffer:
    """The truncated window of recent turns (C_t) for one user session."""

    def __init__(
        self,
        user_id: str,
        *,
        max_turns: int = DEFAULT_STM_MAX_TURNS,
        max_tokens: int = DEFAULT_STM_MAX_TOKENS,
    ) -> None:
        if max_turns < 1 or max_tokens < 1:
            raise PreconditionError("max_turns and max_tokens must be positive")

        self.user_id = user_id
        self.max_turns = max_turns
        self.max_tokens = max_tokens

        self._turns: deque[DialogueTurn] = deque()
        self._token_counts: deque[int] = deque()
        self._last_index: int | None = None

    def __len__(self) -> int:
        return len(self._turns)

    def __iter__(self) -> Iterator[DialogueTurn]:
        return iter(self._turns)

    @property
    def turns(self) -> list[DialogueTurn]:
        """Return the buffered turns, oldest first."""
        return list(self._turns)

    @property
    def last_index(self) -> int | None:
        """Return the turn_index of the newest turn ever appended."""
        return self._last_index

    @property
    def token_count(self) -> int:
        """Return the whitespace-token count of the rendered window."""
        return sum(self._token_counts)

    def append(self, turn: DialogueTurn) -> StmBuffer:
        """Append turn as the newest entry, dropping the oldest turns to fit."""

        if turn.user_id != self.user_id:
            raise PreconditionError(
                f"turn for {turn.user_id} appended to session of {self.user_id}"
            )
        if self._last_index is not None and turn.turn_index <= self._last_index:
            raise TurnOrderError(
                f"turn_index {turn.turn_index} after {self._last_index}"
            )

        self._turns.append(turn)
        self._token_counts.append(len(whitespace_tokens(render_turn(turn))))
        self._last_index = turn.turn_index

        # the newest turn is kept even if it alone exceeds max_tokens
        while len(self._turns) > 1 and (
            len(self._turns) > self.max_turns or self.token_count > self.max_tokens
        ):
            dropped = self._turns.popleft()
            self._token_counts.popleft()
            _LOGGER.debug("STM %s dropped turn %s", self.user_id, dropped.turn_index)

        return self

    def window(self) -> str:
        """Render the window oldest first, one line per turn."""

        text = "\n".join(render_turn(t) for t in self._turns)
        if self.token_count > self.max_tokens:  # a single oversize turn
            return " ".join(whitespace_tokens(text)[: self.max_tokens])
        return text

    def last_input(self) -> str | None:
        """Return the newest buffered user input, if any."""
        return self._turns[-1].input_text if self._turns else None


def stm_append(buffer: StmBuffer, turn: DialogueTurn) -> StmBuffer:
    """Append a turn to the buffer (see StmBuffer.append)."""
    return buffer.append(turn)


def stm_window(buffer: StmBuffer) -> str:
    """Return the deterministic text rendering of the buffer."""
    return buffer.window()
