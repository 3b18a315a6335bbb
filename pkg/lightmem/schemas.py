"""Schemas for the LightMem engine: configuration, wire bodies and model outputs."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Final, NewType

import voluptuous as vol  # type: ignore[import-untyped, unused-ignore]

from .const import (
    CONF_ANCHOR_K,
    CONF_API_KEY_REF,
    CONF_BACKEND,
    CONF_CAPACITY_B,
    CONF_DECAY_LAMBDA,
    CONF_DROP_FLOOR,
    CONF_EMBEDDING_BACKEND,
    CONF_EMBEDDING_DIM,
    CONF_ENDPOINT_URL,
    CONF_EVICTION_BATCH,
    CONF_FIXTURES_PATH,
    CONF_K,
    CONF_LEXICON_PATH,
    CONF_LTM_MERGE_THRESHOLD,
    CONF_MAX_RETRIES,
    CONF_MERGE_THRESHOLD,
    CONF_METRICS_PATH,
    CONF_MODEL,
    CONF_N_MAX,
    CONF_ROLE_BACKEND,
    CONF_SAVE_INTERVAL,
    CONF_STAGE2,
    CONF_STATE_PATH,
    CONF_STM_MAX_TOKENS,
    CONF_STM_MAX_TURNS,
    CONF_TIMEOUT_MS,
    CONF_TRIGGER_INTERVAL,
    DEFAULT_ANCHOR_K,
    DEFAULT_CAPACITY_B,
    DEFAULT_DECAY_LAMBDA,
    DEFAULT_DROP_FLOOR,
    DEFAULT_EMBEDDING_DIM,
    DEFAULT_EVICTION_BATCH,
    DEFAULT_K,
    DEFAULT_MAX_RETRIES,
    DEFAULT_MERGE_THRESHOLD,
    DEFAULT_MODEL,
    DEFAULT_N_MAX,
    DEFAULT_SAVE_INTERVAL,
    DEFAULT_STM_MAX_TOKENS,
    DEFAULT_STM_MAX_TURNS,
    DEFAULT_TIMEOUT_MS,
    DEFAULT_TRIGGER_INTERVAL,
    SZ_FORMAT_VERSION,
    SZ_KIND,
    Backend,
    ConsolidationFlag,
    EmbeddingBackend,
    Horizon,
    NodeKind,
    Personalization,
    Relation,
    Role,
    Stage2Mode,
    TargetStore,
)
from .exceptions import PreconditionError

_SchemaT = NewType("_SchemaT", dict[str, Any])

_LOGGER = logging.getLogger(__name__)


_POSITIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=1))
_NON_NEG_INT = vol.All(vol.Coerce(int), vol.Range(min=0))
_UNIT_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0, max=1))
_NON_EMPTY_STR = vol.All(str, vol.Length(min=1))

#
# Engine configuration (a flat mapping, usually read from a key=value file)

SCH_ENGINE_CONFIG = vol.Schema(
    {
        vol.Optional(CONF_K, default=DEFAULT_K): _POSITIVE_INT,
        vol.Optional(CONF_CAPACITY_B, default=DEFAULT_CAPACITY_B): _POSITIVE_INT,
        vol.Optional(CONF_MERGE_THRESHOLD, default=DEFAULT_MERGE_THRESHOLD): vol.All(
            vol.Coerce(float), vol.Range(min=0, max=1, min_included=False)
        ),
        vol.Optional(CONF_EVICTION_BATCH, default=DEFAULT_EVICTION_BATCH): (
            _POSITIVE_INT
        ),
        vol.Optional(CONF_STAGE2, default=Stage2Mode.MODEL): vol.Coerce(Stage2Mode),
        vol.Optional(CONF_EMBEDDING_DIM, default=DEFAULT_EMBEDDING_DIM): (
            _POSITIVE_INT
        ),
        vol.Optional(
            CONF_EMBEDDING_BACKEND, default=EmbeddingBackend.DETERMINISTIC_MOCK
        ): vol.Coerce(EmbeddingBackend),
        vol.Optional(CONF_TRIGGER_INTERVAL, default=DEFAULT_TRIGGER_INTERVAL): (
            _POSITIVE_INT
        ),
        vol.Optional(CONF_ANCHOR_K, default=DEFAULT_ANCHOR_K): _POSITIVE_INT,
        vol.Optional(
            CONF_LTM_MERGE_THRESHOLD, default=DEFAULT_MERGE_THRESHOLD
        ): vol.All(vol.Coerce(float), vol.Range(min=0, max=1, min_included=False)),
        vol.Optional(CONF_DECAY_LAMBDA, default=DEFAULT_DECAY_LAMBDA): vol.All(
            vol.Coerce(float),
            vol.Range(min=0, max=1, min_included=False, max_included=False),
        ),
        vol.Optional(CONF_DROP_FLOOR, default=DEFAULT_DROP_FLOOR): vol.All(
            vol.Coerce(float), vol.Range(min=0, max=1, max_included=False)
        ),
        vol.Optional(CONF_STM_MAX_TURNS, default=DEFAULT_STM_MAX_TURNS): (
            _POSITIVE_INT
        ),
        vol.Optional(CONF_STM_MAX_TOKENS, default=DEFAULT_STM_MAX_TOKENS): (
            _POSITIVE_INT
        ),
        vol.Optional(CONF_N_MAX, default=DEFAULT_N_MAX): _POSITIVE_INT,
        vol.Optional(CONF_BACKEND, default=Backend.MOCK): vol.Coerce(Backend),
        **{
            vol.Optional(CONF_ROLE_BACKEND.format(r)): vol.Coerce(Backend)
            for r in Role
        },
        vol.Optional(CONF_ENDPOINT_URL): vol.Url(),
        vol.Optional(CONF_MODEL, default=DEFAULT_MODEL): _NON_EMPTY_STR,
        vol.Optional(CONF_API_KEY_REF): _NON_EMPTY_STR,
        vol.Optional(CONF_TIMEOUT_MS, default=DEFAULT_TIMEOUT_MS): _POSITIVE_INT,
        vol.Optional(CONF_MAX_RETRIES, default=DEFAULT_MAX_RETRIES): _NON_NEG_INT,
        vol.Optional(CONF_FIXTURES_PATH): _NON_EMPTY_STR,
        vol.Optional(CONF_STATE_PATH): _NON_EMPTY_STR,
        vol.Optional(CONF_METRICS_PATH): _NON_EMPTY_STR,
        vol.Optional(CONF_LEXICON_PATH): _NON_EMPTY_STR,
        vol.Optional(CONF_SAVE_INTERVAL, default=DEFAULT_SAVE_INTERVAL): (
            _NON_NEG_INT  # 0 disables the periodic save
        ),
    },
    extra=vol.PREVENT_EXTRA,
)


def read_config_file(path: str | Path) -> _SchemaT:
    """Return the raw key=value pairs of a config file (not yet validated)."""

    config: dict[str, Any] = {}
    for num, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise PreconditionError(f"{path}, line {num}: expected key=value")
        config[key.strip()] = value.strip()
    return _SchemaT(config)


def role_backend(config: _SchemaT, role: Role) -> Backend:
    """Return the backend for a role: its override, else the global backend."""
    return Backend(config.get(CONF_ROLE_BACKEND.format(role), config[CONF_BACKEND]))


#
# Planner marker lexicon

SZ_PRONOUNS: Final = "pronouns"
SZ_TIME: Final = "time"
SZ_PREFERENCE: Final = "preference"
SZ_PERSONAL: Final = "personal"
SZ_GENERAL: Final = "general"
SZ_DECOMPOSE: Final = "decompose"

LEXICON_SECTIONS: Final = (
    SZ_PRONOUNS,
    SZ_TIME,
    SZ_PREFERENCE,
    SZ_PERSONAL,
    SZ_GENERAL,
    SZ_DECOMPOSE,
)

SCH_LEXICON = vol.Schema(
    {
        vol.Required(SZ_PRONOUNS): [_NON_EMPTY_STR],
        vol.Required(SZ_TIME): [_NON_EMPTY_STR],
        vol.Required(SZ_PREFERENCE): [_NON_EMPTY_STR],
        vol.Optional(SZ_PERSONAL, default=[]): [_NON_EMPTY_STR],
        vol.Optional(SZ_GENERAL, default=[]): [_NON_EMPTY_STR],
        vol.Optional(SZ_DECOMPOSE, default=[]): [_NON_EMPTY_STR],
    },
    extra=vol.PREVENT_EXTRA,
)

#
# Model role outputs (unknown fields are dropped, missing ones are errors)

SZ_HQS: Final = "hqs"
SZ_FILTERS: Final = "filters"
SZ_INTENT: Final = "intent"
SZ_KEEP_IDS: Final = "keep_ids"
SZ_SUMMARIES: Final = "summaries"
SZ_CANDIDATES: Final = "candidates"
SZ_ANSWER: Final = "answer"

SZ_TEXT: Final = "text"
SZ_ROUTE: Final = "route"
SZ_TIME_WINDOW_DAYS: Final = "time_window_days"
SZ_TYPE_TAGS: Final = "type_tags"
SZ_PERSONALIZATION: Final = "personalization"
SZ_HORIZON: Final = "horizon"
SZ_STATEMENT: Final = "statement"
SZ_NODE_KIND: Final = "kind"
SZ_EDGES: Final = "edges"
SZ_RELATION: Final = "relation"
SZ_TARGET: Final = "target"

SCH_HQ = vol.Schema(
    {
        vol.Required(SZ_TEXT): _NON_EMPTY_STR,
        vol.Required(SZ_ROUTE): vol.Coerce(TargetStore),
    },
    extra=vol.REMOVE_EXTRA,
)

SCH_PLAN_FILTERS = vol.Schema(
    {
        vol.Optional(SZ_TIME_WINDOW_DAYS, default=None): vol.Any(
            None, vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
        ),
        vol.Optional(SZ_TYPE_TAGS, default=None): vol.Any(None, [_NON_EMPTY_STR]),
    },
    extra=vol.REMOVE_EXTRA,
)

SCH_PLAN_INTENT = vol.Schema(
    {
        vol.Required(SZ_PERSONALIZATION): vol.Coerce(Personalization),
        vol.Required(SZ_HORIZON): vol.Coerce(Horizon),
    },
    extra=vol.REMOVE_EXTRA,
)

SCH_PLANNER_OUTPUT = vol.Schema(
    {
        vol.Required(SZ_HQS): vol.All([SCH_HQ], vol.Length(min=1)),
        vol.Required(SZ_FILTERS): SCH_PLAN_FILTERS,
        vol.Optional(SZ_INTENT): SCH_PLAN_INTENT,
    },
    extra=vol.REMOVE_EXTRA,
)

SCH_SELECTOR_OUTPUT = vol.Schema(
    {vol.Required(SZ_KEEP_IDS): [_NON_EMPTY_STR]},
    extra=vol.REMOVE_EXTRA,
)

SCH_WRITER_OUTPUT = vol.Schema(
    {vol.Required(SZ_SUMMARIES): [_NON_EMPTY_STR]},
    extra=vol.REMOVE_EXTRA,
)

SCH_PROPOSED_EDGE = vol.Schema(
    {
        vol.Required(SZ_RELATION): vol.Coerce(Relation),
        vol.Required(SZ_TARGET): _NON_EMPTY_STR,
    },
    extra=vol.REMOVE_EXTRA,
)

SCH_CANDIDATE = vol.Schema(
    {
        vol.Required(SZ_STATEMENT): str,  # may redact to nothing
        vol.Optional(SZ_NODE_KIND, default=NodeKind.CONCEPT): vol.Coerce(NodeKind),
        vol.Optional(SZ_EDGES, default=[]): [SCH_PROPOSED_EDGE],
    },
    extra=vol.REMOVE_EXTRA,
)

SCH_CONSOLIDATOR_OUTPUT = vol.Schema(
    {vol.Required(SZ_CANDIDATES): [SCH_CANDIDATE]},
    extra=vol.REMOVE_EXTRA,
)

SCH_GENERATOR_OUTPUT = vol.Schema(
    {vol.Required(SZ_ANSWER): str},
    extra=vol.REMOVE_EXTRA,
)

ROLE_OUTPUT_SCHEMAS: Final[dict[Role, vol.Schema]] = {
    Role.PLANNER: SCH_PLANNER_OUTPUT,
    Role.SELECTOR: SCH_SELECTOR_OUTPUT,
    Role.WRITER: SCH_WRITER_OUTPUT,
    Role.CONSOLIDATOR: SCH_CONSOLIDATOR_OUTPUT,
    Role.GENERATOR: SCH_GENERATOR_OUTPUT,
}

# fields whose presence breaks a role's "must not" constraint
FORBIDDEN_OUTPUT_FIELDS: Final[dict[Role, tuple[str, ...]]] = {
    Role.PLANNER: ("answer", "response", "reply"),
    Role.SELECTOR: ("summaries", "content", "rewritten"),
    Role.WRITER: ("transcript",),
    Role.CONSOLIDATOR: ("answer",),
    Role.GENERATOR: (),
}

#
# Scripted fixtures: one JSON object per line

SZ_ROLE: Final = "role"
SZ_PAYLOAD_HASH: Final = "payload_hash"
SZ_RESPONSE: Final = "response"

ANY_PAYLOAD: Final = "*"

SCH_FIXTURE = vol.Schema(
    {
        vol.Required(SZ_ROLE): vol.Coerce(Role),
        vol.Required(SZ_PAYLOAD_HASH): _NON_EMPTY_STR,
        vol.Required(SZ_RESPONSE): vol.Any(str, dict),
    },
    extra=vol.PREVENT_EXTRA,
)

#
# Snapshot records

_SCH_VECTOR = vol.All([vol.Coerce(float)], vol.Length(min=1))

SCH_SNAPSHOT_HEADER = vol.Schema(
    {vol.Required(SZ_FORMAT_VERSION): int, vol.Required(SZ_KIND): str},
    extra=vol.PREVENT_EXTRA,
)

SCH_MTM_ITEM_RECORD = vol.Schema(
    {
        vol.Required("item_id"): _NON_EMPTY_STR,
        vol.Required("user_id"): _NON_EMPTY_STR,
        vol.Required("summary"): _NON_EMPTY_STR,
        vol.Required("embedding"): _SCH_VECTOR,
        vol.Required("created_at"): int,
        vol.Required("last_accessed"): int,
        vol.Required("access_count"): vol.All(int, vol.Range(min=0)),
        vol.Required("type_tags"): [str],
        vol.Required("evidence_strength"): vol.All(
            vol.Coerce(float), vol.Range(min=0)
        ),
        vol.Required("consolidation_flag"): vol.Coerce(ConsolidationFlag),
    },
    extra=vol.PREVENT_EXTRA,
)

SCH_LTM_NODE_RECORD = vol.Schema(
    {
        vol.Required("node_id"): _NON_EMPTY_STR,
        vol.Required("kind"): vol.Coerce(NodeKind),
        vol.Required("label"): _NON_EMPTY_STR,
        vol.Required("embedding"): _SCH_VECTOR,
        vol.Required("confidence"): _UNIT_FLOAT,
        vol.Required("evidence_count"): vol.All(int, vol.Range(min=1)),
        vol.Required("created_at"): int,
        vol.Required("updated_at"): int,
    },
    extra=vol.PREVENT_EXTRA,
)

SCH_LTM_EDGE_RECORD = vol.Schema(
    {
        vol.Required("src"): _NON_EMPTY_STR,
        vol.Required("dst"): _NON_EMPTY_STR,
        vol.Required("relation"): vol.Coerce(Relation),
        vol.Required("confidence"): _UNIT_FLOAT,
    },
    extra=vol.PREVENT_EXTRA,
)

SCH_MTM_ABSORBED_RECORD = vol.Schema(
    {
        vol.Required("user_id"): _NON_EMPTY_STR,
        vol.Required("item_id"): _NON_EMPTY_STR,
        vol.Required("winner_id"): _NON_EMPTY_STR,
    },
    extra=vol.PREVENT_EXTRA,
)

#
# HTTP request bodies

SZ_USER_ID: Final = "user_id"
SZ_TIMESTAMP: Final = "timestamp"
SZ_OFFSET: Final = "offset"
SZ_LIMIT: Final = "limit"

MAX_PAGE_SIZE: Final[int] = 500

SCH_QUERY_REQUEST = vol.Schema(
    {
        vol.Required(SZ_USER_ID): _NON_EMPTY_STR,
        vol.Required(SZ_TEXT): _NON_EMPTY_STR,
        vol.Optional(SZ_TIMESTAMP): vol.All(int, vol.Range(min=0)),
    },
    extra=vol.PREVENT_EXTRA,
)

SCH_MTM_PAGE = vol.Schema(
    {
        vol.Optional(SZ_OFFSET, default=0): _NON_NEG_INT,
        vol.Optional(SZ_LIMIT, default=50): vol.All(
            vol.Coerce(int), vol.Range(min=1, max=MAX_PAGE_SIZE)
        ),
    },
    extra=vol.PREVENT_EXTRA,
)
