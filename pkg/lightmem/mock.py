"""Deterministic rule tables standing in for the model roles.

The mock backend is what makes the engine testable offline: for a given payload
every role answers the same way on every run and platform.
"""

from __future__ import annotations

import logging
import re
from collections.abc import Callable
from typing import Any, Final

from .const import NodeKind, Relation, Role
from .helpers import content_tokens, truncate_tokens
from .planner import MarkerLexicon, RuleBasedPlanner
from .vector_index import EmbeddingConfig, cosine, embed

_LOGGER = logging.getLogger(__name__)

SUMMARY_TOKENS: Final[int] = 30  # per side of a turn

NO_MEMORY_REPLY: Final = "I don't have anything relevant in memory."

_IS_A_RE: Final = re.compile(
    r"(?P<subject>[\w' ]+?) (?:is|are) an? (?P<target>[a-z][\w ]*?)\s*(?:[.;,!]|$)",
    re.IGNORECASE,
)


class MockResponder:
    """A callable mock backend for every role (see ModelGateway)."""

    def __init__(
        self,
        *,
        lexicon: MarkerLexicon | None = None,
        embedding: EmbeddingConfig | None = None,
    ) -> None:
        self._rules = RuleBasedPlanner(lexicon or MarkerLexicon.default())
        self._embedding = embedding or EmbeddingConfig()
        self._handlers: dict[Role, Callable[[dict[str, Any]], dict[str, Any]]] = {
            Role.PLANNER: self._plan,
            Role.SELECTOR: self._select,
            Role.WRITER: self._write,
            Role.CONSOLIDATOR: self._consolidate,
            Role.GENERATOR: self._generate,
        }

    def __call__(self, role: Role, payload: dict[str, Any]) -> dict[str, Any]:
        return self._handlers[role](payload)

    def _plan(self, payload: dict[str, Any]) -> dict[str, Any]:
        draft = self._rules.draft(payload["input"], payload.get("last_input"))
        return draft.as_output()

    def _select(self, payload: dict[str, Any]) -> dict[str, Any]:
        """Rank candidates that contain a whole HQ first, then by max cosine."""

        hqs: list[str] = payload["hqs"]
        needs = [tokens for hq in hqs if (tokens := content_tokens(hq))]
        hq_vectors = [embed(hq, self._embedding) for hq in hqs]

        def key(cand: dict[str, Any]) -> tuple[bool, float, int, str]:
            summary = cand["summary"]
            have = content_tokens(summary)
            supports = any(need <= have for need in needs)
            vector = embed(summary, self._embedding)
            best = max(cosine(vector, q) for q in hq_vectors)
            return (not supports, -best, -int(cand.get("created_at", 0)), cand["id"])

        ranked = sorted(payload["candidates"], key=key)
        return {"keep_ids": [c["id"] for c in ranked[: payload["k"]]]}

    def _write(self, payload: dict[str, Any]) -> dict[str, Any]:
        said = truncate_tokens(payload["input"], SUMMARY_TOKENS)
        if not content_tokens(said):  # nothing but stopwords
            return {"summaries": []}
        outcome = truncate_tokens(payload.get("response") or "", SUMMARY_TOKENS)
        summary = f"user {payload['user_id']} said: {said} ; outcome: {outcome}"
        return {"summaries": [summary.rstrip()]}

    def _consolidate(self, payload: dict[str, Any]) -> dict[str, Any]:
        statement = payload["summary"].strip()
        if not content_tokens(statement):
            return {"candidates": []}

        candidate: dict[str, Any] = {
            "statement": statement,
            "kind": NodeKind.CONCEPT,
            "edges": [],
        }
        if match := _IS_A_RE.search(statement):
            candidate["kind"] = NodeKind.ENTITY
            candidate["edges"] = [
                {"relation": Relation.IS_A, "target": match["target"].strip()}
            ]
        return {"candidates": [candidate]}

    def _generate(self, payload: dict[str, Any]) -> dict[str, Any]:
        memories: list[str] = payload.get("memories") or []
        return {"answer": memories[0] if memories else NO_MEMORY_REPLY}
