"""Reply bodies in the shape of an OpenAI-compatible endpoint."""

from __future__ import annotations

import json
from collections.abc import Sequence
from typing import Any

from .const import DEFAULT_MODEL_NAME


def chat_reply(content: str | dict[str, Any]) -> dict[str, Any]:
    """Wrap message content (a dict is sent as its JSON text) in a completion."""

    if not isinstance(content, str):
        content = json.dumps(content)
    return {
        "id": "chatcmpl-virtual",
        "object": "chat.completion",
        "model": DEFAULT_MODEL_NAME,
        "choices": [
            {
                "index": 0,
                "message": {"role": "assistant", "content": content},
                "finish_reason": "stop",
            }
        ],
    }


def embedding_reply(vector: Sequence[float]) -> dict[str, Any]:
    return {
        "object": "list",
        "model": DEFAULT_MODEL_NAME,
        "data": [{"object": "embedding", "index": 0, "embedding": list(vector)}],
    }
