"""Exception types shared across the package.

Every error that callers are expected to catch derives from RidecastError.
Parse-level errors carry the 1-based row or line number of the offending
input so CLI messages can point at the exact spot in the file.
"""

from __future__ import annotations

import datetime as dt


class RidecastError(Exception):
    """Base class for all errors raised by this package."""


# --- ingest -----------------------------------------------------------------


class IngestError(RidecastError):
    """Base class for raw-input parsing and cleaning errors."""


class MissingHeader(IngestError):
    def __init__(self, expected: str, got: str) -> None:
        super().__init__(f"expected header {expected!r}, got {got!r}")
        self.expected = expected
        self.got = got


class BadDate(IngestError):
    """A field that should hold an ISO-8601 calendar date does not."""

    def __init__(self, row: int, text: str) -> None:
        super().__init__(f"row {row}: invalid date {text!r}")
        self.row = row
        self.text = text


class WrongColumnCount(IngestError):
    def __init__(self, row: int, got: int, expected: int) -> None:
        super().__init__(f"row {row}: expected {expected} columns, got {got}")
        self.row = row
        self.got = got
        self.expected = expected


class NegativeCount(IngestError):
    def __init__(self, row: int, value: int) -> None:
        super().__init__(f"row {row}: negative count {value}")
        self.row = row
        self.value = value


class InvalidCount(IngestError):
    """A count field is not an integer literal."""

    def __init__(self, row: int, text: str) -> None:
        super().__init__(f"row {row}: count is not an integer: {text!r}")
        self.row = row
        self.text = text


class MissingStation(IngestError):
    def __init__(self, row: int) -> None:
        super().__init__(f"row {row}: blank station name")
        self.row = row


class EmptySeries(RidecastError):
    def __init__(self, station: str) -> None:
        super().__init__(f"no records for station {station!r}")
        self.station = station


class DateBeforeEpoch(RidecastError):
    def __init__(self, date: dt.date, epoch: dt.date) -> None:
        super().__init__(f"date {date.isoformat()} precedes epoch {epoch.isoformat()}")
        self.date = date
        self.epoch = epoch


# --- learners and metrics ---------------------------------------------------


class LengthMismatch(RidecastError):
    def __init__(self, left: int, right: int) -> None:
        super().__init__(f"length mismatch: {left} vs {right}")
        self.left = left
        self.right = right


class EmptyInput(RidecastError):
    """A fit or metric operation received zero rows."""


class DegenerateTarget(RidecastError):
    """Normalized error is undefined: the actuals are constant zero."""


class AllActualsZero(RidecastError):
    """Percentage error is undefined: every actual value is zero."""


class SeriesTooShort(RidecastError):
    def __init__(self, n: int, required: int, station: str | None = None) -> None:
        where = f" for station {station!r}" if station else ""
        super().__init__(f"{n} observations{where}, need at least {required}")
        self.n = n
        self.required = required
        self.station = station


class NoCandidates(RidecastError):
    """The candidate grid yielded nothing to evaluate."""


class EmptyLeaderboard(RidecastError):
    def __init__(self, station: str) -> None:
        super().__init__(f"leaderboard for station {station!r} is empty")
        self.station = station


class FoldEvaluationError(RidecastError):
    """A candidate failed while fitting or scoring one CV fold.

    The original exception is chained as __cause__.
    """

    def __init__(self, candidate_index: int, fold_index: int, cause: Exception) -> None:
        super().__init__(
            f"candidate {candidate_index} failed on fold {fold_index}: {cause}"
        )
        self.candidate_index = candidate_index
        self.fold_index = fold_index


# --- persistence ------------------------------------------------------------


class SchemaMismatch(RidecastError):
    """Model feature schema does not match the input it is applied to."""


class SchemaVersionMismatch(RidecastError):
    def __init__(self, got: object, supported: int) -> None:
        super().__init__(f"model schema_version {got!r} unsupported (reader supports {supported})")
        self.got = got
        self.supported = supported


class MalformedDocument(RidecastError):
    """Model document is not valid JSON or lacks required fields."""


class UnknownAlgorithmTag(RidecastError):
    def __init__(self, tag: object) -> None:
        super().__init__(f"unknown algorithm tag {tag!r}")
        self.tag = tag
