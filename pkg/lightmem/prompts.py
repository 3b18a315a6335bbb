"""Prompt templates for the model roles.

Every template has the same five parts: Role, Input, Task, Constraints and
Output Format. The Constraints block of each role is also exported on its own,
so a role config can be checked to still carry it verbatim.
"""

from __future__ import annotations

from typing import Final

from .const import Role
from .helpers import canonical_json

SZ_INPUT_SLOT: Final = "{payload}"

CONSTRAINTS: Final[dict[Role, str]] = {
    Role.PLANNER: (
        "- You must not answer the user.\n"
        "- You must not retrieve or invent memory content.\n"
        "- User-specific or personalized information should be routed to MTM;"
        " general or factual knowledge should be routed to LTM.\n"
        "- Emit no more hypothetical queries than the n_max given in the input."
    ),
    Role.SELECTOR: (
        "- You must not rewrite, merge or summarize candidates.\n"
        "- Only return ids that appear in the candidate list.\n"
        "- Keep no more candidates than the k given in the input."
    ),
    Role.WRITER: (
        "- You must not store full dialogue transcripts.\n"
        "- Keep only information useful in later turns; return no summary if"
        " nothing is worth storing.\n"
        "- Each summary is one short sentence."
    ),
    Role.CONSOLIDATOR: (
        "- You must not keep user identifiers, names of the user or timestamps.\n"
        "- You must not answer questions.\n"
        "- Node kinds are Entity or Concept; relations are IsA, HasProperty,"
        " RelatedTo or Implies."
    ),
    Role.GENERATOR: (
        "- Use the retrieved memories only when they are relevant.\n"
        "- Do not reveal memory identifiers."
    ),
}

_ROLE: Final[dict[Role, str]] = {
    Role.PLANNER: "You are a retrieval controller for a conversational agent.",
    Role.SELECTOR: "You are a semantic filter over retrieved memory candidates.",
    Role.WRITER: "You are a memory writer that compresses one dialogue turn.",
    Role.CONSOLIDATOR: (
        "You are an offline knowledge curator building a user-agnostic graph."
    ),
    Role.GENERATOR: "You are a helpful assistant.",
}

_TASK: Final[dict[Role, str]] = {
    Role.PLANNER: (
        "1. Identify the user's intent and whether it needs personal or general"
        " knowledge.\n"
        "2. Detect missing information such as pronouns or vague time"
        " references and resolve them from the context.\n"
        "3. Separate user-specific preferences from objective facts.\n"
        "4. Rewrite the input into hypothetical queries, each routed to MTM or"
        " LTM, and state any time window or type tags."
    ),
    Role.SELECTOR: (
        "Judge which candidates are consistent with the hypothetical queries and"
        " keep the most relevant ones."
    ),
    Role.WRITER: (
        "Extract what the user revealed or decided in this turn and compress it"
        " into concise summaries."
    ),
    Role.CONSOLIDATOR: (
        "Abstract the episode into de-identified knowledge statements and"
        " propose typed links to existing concepts."
    ),
    Role.GENERATOR: "Answer the user's input.",
}

_OUTPUT_FORMAT: Final[dict[Role, str]] = {
    Role.PLANNER: (
        '{"hqs": [{"text": str, "route": "MTM" | "LTM" | "both"}],'
        ' "filters": {"time_window_days": number | null,'
        ' "type_tags": [str] | null},'
        ' "intent": {"personalization": "high" | "low",'
        ' "horizon": "recent" | "long_term" | "mixed"}}'
    ),
    Role.SELECTOR: '{"keep_ids": [str]}',
    Role.WRITER: '{"summaries": [str]}',
    Role.CONSOLIDATOR: (
        '{"candidates": [{"statement": str, "kind": "Entity" | "Concept",'
        ' "edges": [{"relation": str, "target": str}]}]}'
    ),
    Role.GENERATOR: '{"answer": str}',
}


def default_template(role: Role) -> str:
    """Return the built-in prompt template of a role."""

    return (
        f"# Role\n{_ROLE[role]}\n\n"
        f"# Input\n{SZ_INPUT_SLOT}\n\n"
        f"# Task\n{_TASK[role]}\n\n"
        f"# Constraints\n{CONSTRAINTS[role]}\n\n"
        f"# Output Format\nReturn JSON only:\n{_OUTPUT_FORMAT[role]}\n"
    )


def render_prompt(template: str, payload: dict[str, object]) -> str:
    """Fill the Input slot of a template with the canonical payload."""
    return template.replace(SZ_INPUT_SLOT, canonical_json(payload))
