"""Raw ridership parsing, cleaning, and calendar featurization.

The raw input is a CSV with header ``station,date,entries,exits`` and
ISO-8601 dates. Cleaning keeps one station, drops the exits column,
resolves duplicate dates, and attaches weekend/holiday flags. Dates are
then expanded into the fixed 8-feature vector the learners consume.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
from dataclasses import dataclass, field
from typing import IO, Iterable, Union

import numpy as np

from .errors import (
    BadDate,
    DateBeforeEpoch,
    EmptySeries,
    InvalidCount,
    MissingHeader,
    MissingStation,
    NegativeCount,
    WrongColumnCount,
)

RAW_HEADER = ["station", "date", "entries", "exits"]
CLEAN_HEADER = ["station", "date", "ridership", "is_weekend", "is_holiday"]

#: Feature layout shared by every model in the package. Order is load-bearing:
#: serialized models store this list and refuse inputs that disagree.
FEATURE_NAMES = [
    "t_index",
    "year",
    "month",
    "day_of_month",
    "day_of_week",
    "day_of_year",
    "is_weekend",
    "is_holiday",
]

TextSource = Union[str, bytes, IO[str], IO[bytes]]


@dataclass(frozen=True)
class RawRidershipRecord:
    station: str
    date: dt.date
    entries: int
    exits: int


@dataclass(frozen=True)
class HolidayCalendar:
    dates: frozenset[dt.date] = frozenset()

    def __contains__(self, date: dt.date) -> bool:
        return date in self.dates


@dataclass(frozen=True)
class CleanObservation:
    date: dt.date
    ridership: int
    is_weekend: int  # 1 iff Saturday or Sunday
    is_holiday: int  # 1 iff date is in the operator's holiday calendar


@dataclass
class StationSeries:
    station: str
    observations: list[CleanObservation]

    @property
    def epoch(self) -> dt.date:
        """Date of the first observation; t_index counts days from here."""
        return self.observations[0].date

    @property
    def last_date(self) -> dt.date:
        return self.observations[-1].date

    def __len__(self) -> int:
        return len(self.observations)


@dataclass(frozen=True)
class FeatureVector:
    t_index: int
    year: int
    month: int
    day_of_month: int
    day_of_week: int  # Monday=0 .. Sunday=6
    day_of_year: int
    is_weekend: int
    is_holiday: int

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.t_index,
                self.year,
                self.month,
                self.day_of_month,
                self.day_of_week,
                self.day_of_year,
                self.is_weekend,
                self.is_holiday,
            ],
            dtype=np.float64,
        )


@dataclass
class DesignMatrix:
    feature_names: list[str]
    rows: list[FeatureVector]
    targets: list[float]
    _cache: tuple[np.ndarray, np.ndarray] | None = field(
        default=None, repr=False, compare=False
    )

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (X, y) as float64 arrays, built once and cached."""
        if self._cache is None:
            x = np.empty((len(self.rows), len(self.feature_names)), dtype=np.float64)
            for i, row in enumerate(self.rows):
                x[i] = row.as_array()
            y = np.asarray(self.targets, dtype=np.float64)
            self._cache = (x, y)
        return self._cache

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class ConflictingDuplicate:
    """Cleaning warning: several rows shared a date but disagreed on the count."""

    date: dt.date
    kept: int
    seen: tuple[int, ...]


def _as_text_lines(source: TextSource) -> Iterable[str]:
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, str):
        return io.StringIO(source)
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return io.StringIO(data)


def _parse_date(text: str, row: int) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise BadDate(row, text) from None


def _parse_count(text: str, row: int) -> int:
    try:
        value = int(text)
    except ValueError:
        raise InvalidCount(row, text) from None
    if value < 0:
        raise NegativeCount(row, value)
    return value


def parse_ridership_csv(source: TextSource) -> list[RawRidershipRecord]:
    """Parse a raw ridership CSV into records, in file order.

    The source may be text, UTF-8 bytes, or an open file object. Row numbers
    in errors are 1-based and count the header as row 1. Fields are trimmed;
    fully blank lines are skipped.
    """
    reader = csv.reader(_as_text_lines(source))
    try:
        header = next(reader)
    except StopIteration:
        raise MissingHeader(",".join(RAW_HEADER), "") from None
    if [h.strip() for h in header] != RAW_HEADER:
        raise MissingHeader(",".join(RAW_HEADER), ",".join(header))

    records: list[RawRidershipRecord] = []
    for row_no, fields in enumerate(reader, start=2):
        if not fields:
            continue
        if len(fields) != len(RAW_HEADER):
            raise WrongColumnCount(row_no, len(fields), len(RAW_HEADER))
        station, date_text, entries_text, exits_text = (f.strip() for f in fields)
        if not station:
            raise MissingStation(row_no)
        records.append(
            RawRidershipRecord(
                station=station,
                date=_parse_date(date_text, row_no),
                entries=_parse_count(entries_text, row_no),
                exits=_parse_count(exits_text, row_no),
            )
        )
    return records


def load_holidays(source: TextSource) -> HolidayCalendar:
    """Read a holiday file: one ISO date per line, ``#`` comments and blanks ignored."""
    dates: set[dt.date] = set()
    for line_no, line in enumerate(_as_text_lines(source), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        dates.add(_parse_date(text, line_no))
    return HolidayCalendar(frozenset(dates))


def _flags(date: dt.date, holidays: HolidayCalendar) -> tuple[int, int]:
    is_weekend = 1 if date.weekday() >= 5 else 0
    is_holiday = 1 if date in holidays else 0
    return is_weekend, is_holiday


def clean(
    records: list[RawRidershipRecord],
    station: str,
    holidays: HolidayCalendar,
) -> tuple[StationSeries, list[ConflictingDuplicate]]:
    """Reduce raw records for one station to a date-ordered daily series.

    Exits are dropped. Rows that repeat a date with identical entries collapse
    silently; rows that repeat a date with different entries resolve to the
    last occurrence in file order and produce a ConflictingDuplicate warning.

    Returns the series together with the warning list.
    """
    mine = [r for r in records if r.station == station]
    if not mine:
        raise EmptySeries(station)

    # Stable sort keeps file order within a date, so "last occurrence" survives.
    mine.sort(key=lambda r: r.date)
    observations: list[CleanObservation] = []
    warnings: list[ConflictingDuplicate] = []
    i = 0
    while i < len(mine):
        j = i
        while j + 1 < len(mine) and mine[j + 1].date == mine[i].date:
            j += 1
        group = mine[i : j + 1]
        kept = group[-1].entries
        values = tuple(r.entries for r in group)
        if len(set(values)) > 1:
            warnings.append(ConflictingDuplicate(mine[i].date, kept, values))
        is_weekend, is_holiday = _flags(mine[i].date, holidays)
        observations.append(
            CleanObservation(mine[i].date, kept, is_weekend, is_holiday)
        )
        i = j + 1
    return StationSeries(station, observations), warnings


def featurize(
    date: dt.date, epoch: dt.date, holidays: HolidayCalendar
) -> FeatureVector:
    """Expand one calendar date into the 8-feature vector.

    Args:
        date: the date to encode; must not precede the epoch.
        epoch: the first date of the series, anchoring t_index at 0.
        holidays: calendar used for the is_holiday flag.
    """
    if date < epoch:
        raise DateBeforeEpoch(date, epoch)
    is_weekend, is_holiday = _flags(date, holidays)
    return FeatureVector(
        t_index=(date - epoch).days,
        year=date.year,
        month=date.month,
        day_of_month=date.day,
        day_of_week=date.weekday(),
        day_of_year=date.timetuple().tm_yday,
        is_weekend=is_weekend,
        is_holiday=is_holiday,
    )


def build_design_matrix(
    series: StationSeries, holidays: HolidayCalendar
) -> DesignMatrix:
    """One row per observation, in series order; targets are the ridership counts.

    Missing calendar dates stay missing: a gap in the series shows up as a jump
    in t_index, never as an imputed row.
    """
    rows = [featurize(obs.date, series.epoch, holidays) for obs in series.observations]
    targets = [float(obs.ridership) for obs in series.observations]
    return DesignMatrix(list(FEATURE_NAMES), rows, targets)


def raw_records_to_csv(records: Iterable[RawRidershipRecord]) -> str:
    lines = [",".join(RAW_HEADER)]
    for r in records:
        lines.append(f"{r.station},{r.date.isoformat()},{r.entries},{r.exits}")
    return "\n".join(lines) + "\n"


def write_clean_csv(serieses: Iterable[StationSeries]) -> str:
    """Serialize cleaned series to the 5-column clean CSV format."""
    lines = [",".join(CLEAN_HEADER)]
    for series in serieses:
        for obs in series.observations:
            lines.append(
                f"{series.station},{obs.date.isoformat()},{obs.ridership},"
                f"{obs.is_weekend},{obs.is_holiday}"
            )
    return "\n".join(lines) + "\n"


def load_clean_csv(
    source: TextSource,
) -> tuple[dict[str, StationSeries], HolidayCalendar]:
    """Read a clean CSV back into per-station series plus the implied holiday calendar.

    The calendar is reconstructed from the is_holiday column, so downstream
    featurization reproduces the stored flags exactly.
    """
    reader = csv.reader(_as_text_lines(source))
    try:
        header = next(reader)
    except StopIteration:
        raise MissingHeader(",".join(CLEAN_HEADER), "") from None
    if [h.strip() for h in header] != CLEAN_HEADER:
        raise MissingHeader(",".join(CLEAN_HEADER), ",".join(header))

    per_station: dict[str, list[CleanObservation]] = {}
    holiday_dates: set[dt.date] = set()
    for row_no, fields in enumerate(reader, start=2):
        if not fields:
            continue
        if len(fields) != len(CLEAN_HEADER):
            raise WrongColumnCount(row_no, len(fields), len(CLEAN_HEADER))
        station, date_text, ridership_text, weekend_text, holiday_text = (
            f.strip() for f in fields
        )
        if not station:
            raise MissingStation(row_no)
        date = _parse_date(date_text, row_no)
        ridership = _parse_count(ridership_text, row_no)
        is_holiday = 1 if holiday_text == "1" else 0
        if is_holiday:
            holiday_dates.add(date)
        is_weekend = 1 if date.weekday() >= 5 else 0
        del weekend_text  # recomputed from the date, which is authoritative
        per_station.setdefault(station, []).append(
            CleanObservation(date, ridership, is_weekend, is_holiday)
        )

    series = {
        name: StationSeries(name, sorted(obs, key=lambda o: o.date))
        for name, obs in per_station.items()
    }
    return series, HolidayCalendar(frozenset(holiday_dates))
