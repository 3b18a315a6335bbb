"""Exceptions raised by the LightMem engine."""

from __future__ import annotations


class LightMemError(Exception):
    """Base class for all LightMem exceptions."""

    code: str = "lightmem_error"


class PreconditionError(LightMemError):
    """An operation was called with inputs that violate its preconditions."""

    code = "precondition_failed"


class TurnOrderError(PreconditionError):
    """A dialogue turn arrived out of order for its session."""

    code = "turn_out_of_order"


class DimensionMismatchError(LightMemError):
    """A vector does not match the store's configured dimension."""

    code = "dimension_mismatch"


class ZeroNormError(LightMemError):
    """Cosine similarity is undefined for a zero-norm vector."""

    code = "zero_norm"


class GatewayError(LightMemError):
    """A model backend failed (transport, status or timeout)."""

    code = "gateway_error"

    def __init__(self, msg: str, *, status: int | None = None) -> None:
        super().__init__(msg)
        self.status = status


class FixturesExhaustedError(GatewayError):
    """A scripted backend has no fixture left for a (role, payload) pair."""

    code = "fixtures_exhausted"


class StructuredOutputError(LightMemError):
    """Raw model output failed to parse or validate against its role schema."""

    code = "structured_output_invalid"

    def __init__(self, msg: str, *, path: str = "") -> None:
        super().__init__(f"{msg} @ {path}" if path else msg)
        self.path = path


class SnapshotError(LightMemError):
    """Base class for persistence errors."""

    code = "snapshot_error"


class SnapshotCorruptError(SnapshotError):
    """A snapshot line could not be decoded."""

    code = "snapshot_corrupt"

    def __init__(self, msg: str, *, file: str, line: int) -> None:
        super().__init__(f"{file}, line {line}: {msg}")
        self.file = file
        self.line = line


class SnapshotVersionError(SnapshotError):
    """A snapshot was written with an unsupported format version."""

    code = "snapshot_version_mismatch"
