"""Text and serialization helpers shared across the engine."""

from __future__ import annotations

import hashlib
import json
import re
from typing import Any, Final

_WORD_RE: Final = re.compile(r"[a-z0-9]+")
_SPACES_RE: Final = re.compile(r"\s+")

STOPWORDS: Final[frozenset[str]] = frozenset(
    "a an and are as at be by did do does for from had has have how i in is it "
    "its me my of on or s so that the their them they this to was we were what "
    "when where which who whom why will with you your".split()
)


def whitespace_tokens(text: str) -> list[str]:
    """Return the whitespace tokens of text (the STM token measure)."""
    return text.split()


def word_tokens(text: str) -> list[str]:
    """Return lowercased alphanumeric tokens."""
    return _WORD_RE.findall(text.lower())


def content_tokens(text: str) -> frozenset[str]:
    """Return the lowercased non-stopword tokens of text."""
    return frozenset(t for t in word_tokens(text) if t not in STOPWORDS)


def truncate_tokens(text: str, limit: int) -> str:
    """Return the first `limit` whitespace tokens of text."""
    return " ".join(whitespace_tokens(text)[:limit])


def _normalise(obj: Any) -> Any:
    if isinstance(obj, str):
        return _SPACES_RE.sub(" ", obj).strip()
    if isinstance(obj, dict):
        return {str(k): _normalise(v) for k, v in obj.items()}
    if isinstance(obj, list | tuple):
        return [_normalise(v) for v in obj]
    if isinstance(obj, set | frozenset):
        return sorted(_normalise(v) for v in obj)
    return obj


def canonical_json(obj: Any) -> str:
    """Serialize with sorted keys, compact separators and normalized whitespace."""
    return json.dumps(
        _normalise(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=False
    )


def payload_hash(obj: Any) -> str:
    """Return the stable hash of a payload, used to key scripted fixtures."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def stable_id(prefix: str, *parts: object) -> str:
    """Return a deterministic identifier derived from parts."""
    digest = hashlib.blake2b(
        "\x1f".join(str(p) for p in parts).encode(), digest_size=8
    ).hexdigest()
    return f"{prefix}_{digest}"
