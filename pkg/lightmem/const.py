"""Constants for the LightMem engine."""

from __future__ import annotations

from enum import StrEnum
from typing import Final

DOMAIN: Final = "lightmem"

FORMAT_VERSION: Final[int] = 1  # snapshot/JSONL format
REPORT_SCHEMA_VERSION: Final[int] = 1  # bench reports

MS_PER_DAY: Final[int] = 86_400_000

# Config
CONF_ANCHOR_K: Final = "anchor_k"
CONF_API_KEY_REF: Final = "api_key_ref"
CONF_BACKEND: Final = "backend"
CONF_CAPACITY_B: Final = "capacity_b"
CONF_DECAY_LAMBDA: Final = "decay_lambda"
CONF_DROP_FLOOR: Final = "drop_floor"
CONF_EMBEDDING_BACKEND: Final = "embedding_backend"
CONF_EMBEDDING_DIM: Final = "embedding_dim"
CONF_ENDPOINT_URL: Final = "endpoint_url"
CONF_EVICTION_BATCH: Final = "eviction_batch"
CONF_FIXTURES_PATH: Final = "fixtures_path"
CONF_K: Final = "k"
CONF_LEXICON_PATH: Final = "lexicon_path"
CONF_LTM_MERGE_THRESHOLD: Final = "ltm_merge_threshold"
CONF_MAX_RETRIES: Final = "max_retries"
CONF_MERGE_THRESHOLD: Final = "merge_threshold"
CONF_METRICS_PATH: Final = "metrics_path"
CONF_MODEL: Final = "model"
CONF_N_MAX: Final = "n_max"
CONF_SAVE_INTERVAL: Final = "save_interval_s"
CONF_STAGE2: Final = "stage2"
CONF_STATE_PATH: Final = "state_path"
CONF_STM_MAX_TOKENS: Final = "stm_max_tokens"
CONF_STM_MAX_TURNS: Final = "stm_max_turns"
CONF_TIMEOUT_MS: Final = "timeout_ms"
CONF_TRIGGER_INTERVAL: Final = "trigger_interval_turns"

# per-role backend overrides, e.g. "selector_backend"
CONF_ROLE_BACKEND: Final = "{}_backend"

# Env
ENV_MODEL_ENDPOINT: Final = "LIGHTMEM_MODEL_ENDPOINT"
ENV_MODEL_KEY: Final = "LIGHTMEM_MODEL_KEY"

# Snapshot files
SZ_FORMAT_VERSION: Final = "format_version"
SZ_KIND: Final = "kind"
SZ_LTM_EDGES: Final = "ltm_edges"
SZ_LTM_NODES: Final = "ltm_nodes"
SZ_MTM_ITEMS: Final = "mtm_items"

# Defaults (see DESIGN.md for the rationale of each)
DEFAULT_K: Final[int] = 5
DEFAULT_CAPACITY_B: Final[int] = 10_000
DEFAULT_MERGE_THRESHOLD: Final[float] = 0.9
DEFAULT_EVICTION_BATCH: Final[int] = 64
DEFAULT_EMBEDDING_DIM: Final[int] = 384
DEFAULT_N_MAX: Final[int] = 4
DEFAULT_STM_MAX_TURNS: Final[int] = 20
DEFAULT_STM_MAX_TOKENS: Final[int] = 2048
DEFAULT_TRIGGER_INTERVAL: Final[int] = 12
DEFAULT_ANCHOR_K: Final[int] = 5
DEFAULT_DECAY_LAMBDA: Final[float] = 0.95
DEFAULT_DROP_FLOOR: Final[float] = 0.1
DEFAULT_TIMEOUT_MS: Final[int] = 10_000
DEFAULT_MAX_RETRIES: Final[int] = 2
DEFAULT_SAVE_INTERVAL: Final[int] = 300
DEFAULT_MODEL: Final = "lightmem-slm"
DEFAULT_EMBEDDING_MODEL: Final = "lightmem-embed"

VAGUE_TIME_WINDOW_MS: Final[int] = 30 * MS_PER_DAY

INITIAL_CONFIDENCE: Final[float] = 0.5
MERGE_CONFIDENCE_BUMP: Final[float] = 0.05
RELATED_TO_THRESHOLD: Final[float] = 0.5

UTILITY_W_ACCESS: Final[float] = 0.5
UTILITY_W_RECENCY: Final[float] = 0.5
UTILITY_DECAY_MS: Final[int] = 7 * MS_PER_DAY

CONFLICT_EVIDENCE_RATIO: Final[float] = 2.0
HANDOFF_MIN_EVIDENCE: Final[float] = 2.0

REDACTED_USER: Final = "a user"


class Store(StrEnum):
    """Memory stores addressable by retrieval."""

    MTM: Final = "MTM"
    LTM: Final = "LTM"


class TargetStore(StrEnum):
    """Stores a metadata filter may target."""

    MTM: Final = "MTM"
    LTM: Final = "LTM"
    BOTH: Final = "both"


class ConsolidationFlag(StrEnum):
    """Why (if at all) an MTM item awaits consolidation."""

    NONE: Final = "none"
    NEWLY_WRITTEN: Final = "newly_written"
    REACTIVATED: Final = "reactivated"
    LOW_UTILITY: Final = "low_utility"


class NodeKind(StrEnum):
    """LTM node types."""

    ENTITY: Final = "Entity"
    CONCEPT: Final = "Concept"


class Relation(StrEnum):
    """LTM edge types."""

    IS_A: Final = "IsA"
    HAS_PROPERTY: Final = "HasProperty"
    RELATED_TO: Final = "RelatedTo"
    IMPLIES: Final = "Implies"


class Personalization(StrEnum):
    """Degree of personalization an input needs."""

    HIGH: Final = "high"
    LOW: Final = "low"


class Horizon(StrEnum):
    """Reliance on recent vs long-term information."""

    RECENT: Final = "recent"
    LONG_TERM: Final = "long_term"
    MIXED: Final = "mixed"


class Role(StrEnum):
    """Model roles behind the gateway."""

    PLANNER: Final = "planner"
    SELECTOR: Final = "selector"
    WRITER: Final = "writer"
    CONSOLIDATOR: Final = "consolidator"
    GENERATOR: Final = "generator"  # answers, outside the memory-control plane


class Backend(StrEnum):
    """Inference backends."""

    MOCK: Final = "mock"
    SCRIPTED: Final = "scripted"
    HTTP: Final = "http"


class EmbeddingBackend(StrEnum):
    """Embedding backends."""

    DETERMINISTIC_MOCK: Final = "deterministic_mock"
    HTTP_ENDPOINT: Final = "http_endpoint"


class Stage2Mode(StrEnum):
    """How Stage 2 selects the final Top-K."""

    MODEL: Final = "model"
    FALLBACK: Final = "fallback"
    BYPASS: Final = "bypass"  # stage-1 vector Top-K, no semantic filtering


class StressGroup(StrEnum):
    """Error-injection groups."""

    A_FULL: Final = "A_full"
    B_HQ_NOISE: Final = "B_hq_noise"
    C_NO_STAGE2: Final = "C_no_stage2"
    D_WRITE_NOISE: Final = "D_write_noise"
    E_CASCADE: Final = "E_cascade"


class UpdateGapMode(StrEnum):
    """Store routing for the update-gap test."""

    FULL: Final = "full"
    LTM_ONLY: Final = "ltm_only"
    MTM_ONLY: Final = "mtm_only"
    MTM_NOISE: Final = "mtm_noise"
