"""The model gateway: one call surface for every model role.

Backends:
  mock     - deterministic rule tables (see mock.py), injected as a callable
  scripted - replays JSONL fixtures keyed by (role, payload hash), in order
  http     - a chat-completion endpoint, with retries and exponential backoff

Whatever the backend, the raw text is parsed against the role's output schema.
Output that fails to parse, or an endpoint that keeps failing, yields a
degraded response rather than an exception; callers then fall back.
"""

from __future__ import annotations

import asyncio
import json
import logging
import os
import re
from collections import Counter, defaultdict, deque
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Final

import httpx
import voluptuous as vol  # type: ignore[import-untyped, unused-ignore]

from .const import (
    DEFAULT_EMBEDDING_MODEL,
    DEFAULT_MAX_RETRIES,
    DEFAULT_MODEL,
    DEFAULT_TIMEOUT_MS,
    ENV_MODEL_ENDPOINT,
    ENV_MODEL_KEY,
    Backend,
    Role,
)
from .exceptions import (
    FixturesExhaustedError,
    GatewayError,
    PreconditionError,
    StructuredOutputError,
)
from .helpers import canonical_json, payload_hash
from .models import Vector
from .prompts import CONSTRAINTS, default_template, render_prompt
from .schemas import (
    ANY_PAYLOAD,
    FORBIDDEN_OUTPUT_FIELDS,
    ROLE_OUTPUT_SCHEMAS,
    SCH_FIXTURE,
    SZ_PAYLOAD_HASH,
    SZ_RESPONSE,
    SZ_ROLE,
)

_LOGGER = logging.getLogger(__name__)

_RETRY_BASE_DELAY: Final[float] = 0.2  # seconds, doubled per attempt

_FENCE_RE: Final = re.compile(r"^\s*```(?:json)?\s*(.*?)\s*```\s*$", re.DOTALL)

MockResponder = Callable[[Role, dict[str, Any]], dict[str, Any]]


@dataclass(frozen=True, kw_only=True)
class RoleConfig:
    """How one model role is served."""

    role: Role
    backend: Backend = Backend.MOCK
    prompt_template: str = ""  # the role's built-in template when empty
    endpoint_url: str | None = None
    api_key_ref: str | None = None  # name of the env var holding the key
    model: str = DEFAULT_MODEL
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    max_retries: int = DEFAULT_MAX_RETRIES

    def __post_init__(self) -> None:
        if not self.prompt_template:
            object.__setattr__(self, "prompt_template", default_template(self.role))
        if CONSTRAINTS[self.role] not in self.prompt_template:
            raise PreconditionError(
                f"the {self.role} template lacks its Constraints section"
            )
        if self.backend == Backend.HTTP and not self.endpoint_url:
            raise PreconditionError(f"the {self.role} http backend needs endpoint_url")
        if self.timeout_ms < 1 or self.max_retries < 0:
            raise PreconditionError("timeout_ms must be > 0 and max_retries >= 0")

    @property
    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_ref or ENV_MODEL_KEY)


@dataclass(frozen=True, kw_only=True)
class StructuredResponse:
    """Raw model output and, when it validated, the parsed record."""

    raw: str
    parsed: dict[str, Any] | None = None
    degraded: bool = False
    error: str | None = None
    status: int | None = None  # last endpoint status, http only


def _format_path(path: Iterable[Any]) -> str:
    out = ""
    for part in path:
        out += f"[{part}]" if isinstance(part, int) else f".{part}"
    return out.lstrip(".") or "$"


def parse_structured(raw: str, role: Role) -> dict[str, Any]:
    """Parse and validate raw JSON output of a role.

    Unknown fields are dropped. Raises StructuredOutputError naming the path
    of the first problem, e.g. `hqs[1].route`.
    """

    if match := _FENCE_RE.match(raw):
        raw = match.group(1)

    try:
        data = json.loads(raw)
    except json.JSONDecodeError as err:
        raise StructuredOutputError(
            f"malformed JSON: {err.msg}", path=f"$@{err.pos}"
        ) from err

    if not isinstance(data, dict):
        raise StructuredOutputError("expected a JSON object", path="$")

    for key in FORBIDDEN_OUTPUT_FIELDS[role]:
        if key in data:
            raise StructuredOutputError(f"{role} output must not carry {key}", path=key)

    try:
        parsed: dict[str, Any] = ROLE_OUTPUT_SCHEMAS[role](data)
    except vol.MultipleInvalid as err:
        first = err.errors[0]
        raise StructuredOutputError(first.msg, path=_format_path(first.path)) from err
    except vol.Invalid as err:
        raise StructuredOutputError(err.msg, path=_format_path(err.path)) from err
    return parsed


class ScriptedFixtures:
    """FIFO queues of canned responses keyed by (role, payload hash).

    A fixture whose payload_hash is "*" answers any payload of its role once
    the exact-hash queue is empty.
    """

    def __init__(self, fixtures: Iterable[Mapping[str, Any]] = ()) -> None:
        self._queues: dict[tuple[Role, str], deque[str]] = defaultdict(deque)
        for num, fixture in enumerate(fixtures, start=1):
            self.add(fixture, num=num)

    def add(self, fixture: Mapping[str, Any], *, num: int = 0) -> None:
        try:
            fixture = SCH_FIXTURE(dict(fixture))
        except vol.Invalid as err:
            raise PreconditionError(f"fixture {num}: {err}") from err

        response = fixture[SZ_RESPONSE]
        raw = response if isinstance(response, str) else canonical_json(response)
        self._queues[(fixture[SZ_ROLE], fixture[SZ_PAYLOAD_HASH])].append(raw)

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptedFixtures:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(json.loads(line) for line in lines if line.strip())

    def remaining(self, role: Role) -> int:
        return sum(len(q) for (r, _), q in self._queues.items() if r == role)

    def pop(self, role: Role, payload: Mapping[str, Any]) -> str:
        for key in ((role, payload_hash(payload)), (role, ANY_PAYLOAD)):
            if self._queues.get(key):
                return self._queues[key].popleft()
        raise FixturesExhaustedError(
            f"no {role} fixture left for payload {payload_hash(payload)[:12]}"
        )


class ModelGateway:
    """Routes role calls to their configured backend."""

    def __init__(
        self,
        roles: Mapping[Role, RoleConfig] | None = None,
        *,
        mock: MockResponder | None = None,
        fixtures: ScriptedFixtures | None = None,
        embedding_url: str | None = None,
        embedding_model: str = DEFAULT_EMBEDDING_MODEL,
        client: httpx.AsyncClient | None = None,
    ) -> None:
        self.roles = {r: RoleConfig(role=r) for r in Role} | dict(roles or {})
        self._mock = mock
        self._fixtures = fixtures
        self._embedding_url = embedding_url or os.environ.get(ENV_MODEL_ENDPOINT)
        self._embedding_model = embedding_model
        self._client = client
        self._own_client = client is None

        self.calls: Counter[Role] = Counter()

        for cfg in self.roles.values():
            if cfg.backend == Backend.MOCK and mock is None:
                raise PreconditionError(f"the {cfg.role} role needs a mock responder")
            if cfg.backend == Backend.SCRIPTED and fixtures is None:
                raise PreconditionError(f"the {cfg.role} role needs fixtures")

    @property
    def client(self) -> httpx.AsyncClient:
        if self._client is None:
            self._client = httpx.AsyncClient()
        return self._client

    async def async_close(self) -> None:
        if self._client is not None and self._own_client:
            await self._client.aclose()
        self._client = None

    async def async_complete(
        self, role: Role, payload: dict[str, Any]
    ) -> StructuredResponse:
        """Run one role call and return its (possibly degraded) output."""

        cfg = self.roles[role]
        self.calls[role] += 1

        if cfg.backend == Backend.MOCK:
            assert self._mock is not None
            raw = canonical_json(self._mock(role, payload))
            status = None
        elif cfg.backend == Backend.SCRIPTED:
            assert self._fixtures is not None
            raw = self._fixtures.pop(role, payload)
            status = None
        else:
            try:
                raw, status = await self._async_chat(cfg, payload)
            except GatewayError as err:
                _LOGGER.error("The %s endpoint failed: %s", role, err)
                return StructuredResponse(
                    raw="", degraded=True, error=str(err), status=err.status
                )

        try:
            parsed = parse_structured(raw, role)
        except StructuredOutputError as err:
            _LOGGER.warning("Unusable %s output: %s", role, err)
            return StructuredResponse(
                raw=raw, degraded=True, error=str(err), status=status
            )
        return StructuredResponse(raw=raw, parsed=parsed, status=status)

    async def _async_post(
        self,
        url: str,
        body: dict[str, Any],
        *,
        api_key: str | None,
        timeout_ms: int,
        max_retries: int,
    ) -> tuple[dict[str, Any], int]:
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        status: int | None = None
        last_error = "no attempt made"
        for attempt in range(max_retries + 1):
            try:
                resp = await self.client.post(
                    url, json=body, headers=headers, timeout=timeout_ms / 1000
                )
                status = resp.status_code
                resp.raise_for_status()
                data: dict[str, Any] = resp.json()
                return data, status
            except httpx.TimeoutException:
                last_error = f"timed out after {timeout_ms} ms"
            except httpx.HTTPStatusError as err:
                last_error = f"HTTP {err.response.status_code}"
            except (httpx.HTTPError, json.JSONDecodeError) as err:
                last_error = f"{type(err).__name__}: {err}"

            if attempt < max_retries:
                delay = _RETRY_BASE_DELAY * 2**attempt
                _LOGGER.warning(
                    "POST %s failed (%s), retry %s in %.2fs",
                    url,
                    last_error,
                    attempt + 1,
                    delay,
                )
                await asyncio.sleep(delay)

        raise GatewayError(
            f"POST {url} failed after {max_retries + 1} attempts: {last_error}",
            status=status,
        )

    async def _async_chat(
        self, cfg: RoleConfig, payload: dict[str, Any]
    ) -> tuple[str, int]:
        assert cfg.endpoint_url is not None
        url = cfg.endpoint_url.rstrip("/")
        if not url.endswith("/chat/completions"):
            url += "/chat/completions"

        body = {
            "model": cfg.model,
            "messages": [
                {"role": "user", "content": render_prompt(cfg.prompt_template, payload)}
            ],
            "temperature": 0,
        }
        data, status = await self._async_post(
            url,
            body,
            api_key=cfg.api_key,
            timeout_ms=cfg.timeout_ms,
            max_retries=cfg.max_retries,
        )
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as err:
            raise GatewayError(
                f"no message content in reply: {err}", status=status
            ) from err
        return str(content), status

    async def async_embed(self, text: str) -> Vector:
        """Embed text at the endpoint's /embeddings route."""

        if not self._embedding_url:
            raise PreconditionError("no embedding endpoint configured")

        cfg = self.roles[Role.WRITER]  # timeouts and retries are shared
        url = self._embedding_url.rstrip("/")
        if not url.endswith("/embeddings"):
            url += "/embeddings"

        data, status = await self._async_post(
            url,
            {"model": self._embedding_model, "input": text},
            api_key=os.environ.get(cfg.api_key_ref or ENV_MODEL_KEY),
            timeout_ms=cfg.timeout_ms,
            max_retries=cfg.max_retries,
        )
        try:
            return tuple(float(x) for x in data["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError, ValueError) as err:
            raise GatewayError(f"no embedding in reply: {err}", status=status) from err
