"""Forward forecasts, holdout evaluation, and synthetic ridership data.

The forecaster extends a station's calendar features past the end of its
history and never trains; holdout evaluation splits a series in time,
refits on the head only, and scores the untouched tail. The synthetic
generator produces a raw CSV plus holiday file with known structure so the
whole pipeline can be exercised end to end with a known answer.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .ensemble import TrainedModel, feature_importance, predict_batch
from .errors import SchemaMismatch, SeriesTooShort
from .ingest import (
    FEATURE_NAMES,
    RAW_HEADER,
    CleanObservation,
    HolidayCalendar,
    StationSeries,
    build_design_matrix,
    featurize,
)
from .select import accuracy, mape


@dataclass(frozen=True)
class ForecastRow:
    date: dt.date
    predicted_ridership: float
    clamped: int  # 1 when a negative raw prediction was floored to zero


@dataclass
class ForecastReport:
    station: str
    model_algorithm: str
    horizon: int
    rows: list[ForecastRow]


def _feature_block(dates: Sequence[dt.date], epoch: dt.date,
                   holidays: HolidayCalendar) -> np.ndarray:
    return np.stack([featurize(d, epoch, holidays).as_array() for d in dates])


def forecast(model: TrainedModel, series: StationSeries,
             holidays: HolidayCalendar, horizon: int = 7) -> ForecastReport:
    """Predict the `horizon` consecutive days after the series ends.

    Negative raw predictions are floored to zero and marked; ridership
    cannot be negative, but the trees are unconstrained.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if model.payload.feature_names != FEATURE_NAMES:
        raise SchemaMismatch("model feature layout is not the standard calendar block")
    start = series.last_date + dt.timedelta(days=1)
    dates = [start + dt.timedelta(days=i) for i in range(horizon)]
    raw = predict_batch(model, _feature_block(dates, series.epoch, holidays))
    rows = []
    for d, value in zip(dates, raw):
        if value < 0.0:
            rows.append(ForecastRow(d, 0.0, 1))
        else:
            rows.append(ForecastRow(d, float(value), 0))
    return ForecastReport(series.station, model.algorithm, horizon, rows)


@dataclass(frozen=True)
class DayScore:
    date: dt.date
    actual: float
    predicted: float
    abs_pct_error: Optional[float]  # None when the actual is zero
    excluded: bool


@dataclass
class EvaluationReport:
    station: str
    algorithm: str
    holdout_days: int
    per_day: list[DayScore]
    mape: float
    accuracy: float
    excluded_zero_days: int

    @property
    def low_accuracy(self) -> bool:
        return self.accuracy < 0.0


ModelFactory = Callable[..., TrainedModel]


def evaluate_holdout(model_factory: ModelFactory, series: StationSeries,
                     holidays: HolidayCalendar, holdout: int = 7) -> EvaluationReport:
    """Refit on all but the last `holdout` days and score those days.

    The factory receives only the head's design matrix, so the holdout
    tail cannot leak into training no matter what the factory does with
    its input. Predictions are clamped at zero before scoring, matching
    what the forecaster would publish.
    """
    if holdout < 1:
        raise ValueError("holdout must be >= 1")
    n = len(series)
    if n - holdout < 2:
        raise SeriesTooShort(n, holdout + 2, station=series.station)
    head = StationSeries(series.station, series.observations[:n - holdout])
    tail = series.observations[n - holdout:]
    model = model_factory(build_design_matrix(head, holidays))
    dates = [obs.date for obs in tail]
    raw = predict_batch(model, _feature_block(dates, head.epoch, holidays))
    predicted = np.maximum(raw, 0.0)
    actual = np.array([float(obs.ridership) for obs in tail])
    result = mape(actual, predicted)
    acc = accuracy(result.value)
    per_day = []
    for d, a, p in zip(dates, actual, predicted):
        if a == 0.0:
            per_day.append(DayScore(d, a, float(p), None, True))
        else:
            per_day.append(
                DayScore(d, a, float(p), float(100.0 * abs(a - p) / abs(a)), False)
            )
    return EvaluationReport(
        station=series.station,
        algorithm=model.algorithm,
        holdout_days=holdout,
        per_day=per_day,
        mape=result.value,
        accuracy=acc.value,
        excluded_zero_days=result.excluded,
    )


@dataclass
class ImportanceReport:
    station: str
    shares: list[tuple[str, float]]  # descending share, declaration order on ties
    dominant_feature: str
    no_splits: bool


def importance_report(model: TrainedModel, station: str = "") -> ImportanceReport:
    result = feature_importance(model)
    order = sorted(
        range(len(result.shares)),
        key=lambda i: (-result.shares[i][1], i),
    )
    ranked = [result.shares[i] for i in order]
    return ImportanceReport(
        station=station or model.metadata.station,
        shares=ranked,
        dominant_feature=ranked[0][0],
        no_splits=result.no_splits,
    )


# --- synthetic data ----------------------------------------------------------

# Fixed-date observances scattered through the year, so holiday structure is
# never expressible as a cut on the running day index.
HOLIDAY_MONTH_DAYS = (
    (1, 1), (2, 25), (4, 9), (5, 1), (6, 12), (8, 21),
    (8, 30), (11, 1), (11, 30), (12, 8), (12, 25), (12, 30),
)

MIN_SYNTHETIC_DAYS = 60


@dataclass(frozen=True)
class StationProfile:
    name: str
    base_level: float  # weekday mean ridership
    weekend_factor: float
    holiday_factor: float


@dataclass(frozen=True)
class SyntheticSpec:
    n_stations: int = 13
    days: int = 730
    noise_sigma: float = 0.05
    seed: int = 42
    start: dt.date = dt.date(2019, 1, 1)
    profiles: Optional[tuple[StationProfile, ...]] = None
    lockdowns: tuple[tuple[dt.date, dt.date], ...] = ()  # inclusive ranges


@dataclass
class SyntheticDataset:
    raw_csv: str
    holiday_text: str
    series: dict[str, StationSeries]
    holidays: HolidayCalendar
    profiles: tuple[StationProfile, ...]


def default_profiles(n_stations: int, rng: np.random.Generator
                     ) -> tuple[StationProfile, ...]:
    """Heterogeneous station profiles drawn from wide uniform ranges."""
    profiles = []
    for i in range(n_stations):
        profiles.append(StationProfile(
            name=f"station{i + 1:02d}",
            base_level=float(rng.uniform(8000.0, 40000.0)),
            weekend_factor=float(rng.uniform(0.35, 0.8)),
            holiday_factor=float(rng.uniform(0.3, 1.2)),
        ))
    return tuple(profiles)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    """Deterministic multiplicative-calendar ridership panel.

    Each station's daily value is
    ``round(max(0, base * weekend_factor^[weekend] * holiday_factor^[holiday]
    * (1 + eps)))`` with eps uniform on ``(-sigma*sqrt(3), +sigma*sqrt(3))``
    so the noise has standard deviation sigma. Lockdown windows overwrite
    the value with zero. Equal specs produce byte-identical output.
    """
    if spec.days < MIN_SYNTHETIC_DAYS:
        raise ValueError(f"days must be >= {MIN_SYNTHETIC_DAYS}")
    if spec.n_stations < 1:
        raise ValueError("n_stations must be >= 1")
    if spec.noise_sigma < 0.0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng(spec.seed)
    profiles = spec.profiles
    if profiles is None:
        profiles = default_profiles(spec.n_stations, rng)
    elif len(profiles) != spec.n_stations:
        raise ValueError("profiles length must match n_stations")

    dates = [spec.start + dt.timedelta(days=i) for i in range(spec.days)]
    end = dates[-1]
    holiday_dates = set()
    for year in range(spec.start.year, end.year + 2):
        for month, day in HOLIDAY_MONTH_DAYS:
            holiday_dates.add(dt.date(year, month, day))
    holidays = HolidayCalendar(frozenset(holiday_dates))

    locked = set()
    for first, last in spec.lockdowns:
        d = first
        while d <= last:
            locked.add(d)
            d += dt.timedelta(days=1)

    amplitude = spec.noise_sigma * math.sqrt(3.0)
    csv_lines = [",".join(RAW_HEADER)]
    series: dict[str, StationSeries] = {}
    for profile in profiles:
        eps = rng.uniform(-amplitude, amplitude, size=spec.days)
        observations = []
        for i, d in enumerate(dates):
            weekend = d.weekday() >= 5
            holiday = d in holidays
            level = profile.base_level
            if weekend:
                level *= profile.weekend_factor
            if holiday:
                level *= profile.holiday_factor
            value = max(0.0, level * (1.0 + eps[i]))
            count = int(np.rint(value))
            if d in locked:
                count = 0
            csv_lines.append(f"{profile.name},{d.isoformat()},{count},{count}")
            observations.append(
                CleanObservation(d, count, int(weekend), int(holiday))
            )
        series[profile.name] = StationSeries(profile.name, observations)

    holiday_text = "".join(
        f"{d.isoformat()}\n" for d in sorted(holiday_dates)
    )
    return SyntheticDataset(
        raw_csv="\n".join(csv_lines) + "\n",
        holiday_text=holiday_text,
        series=series,
        holidays=holidays,
        profiles=profiles,
    )
