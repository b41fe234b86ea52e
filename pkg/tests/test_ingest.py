import datetime as dt
import io

import pytest

from ridecast.errors import (
    BadDate,
    DateBeforeEpoch,
    EmptySeries,
    InvalidCount,
    MissingHeader,
    MissingStation,
    NegativeCount,
    WrongColumnCount,
)
from ridecast.ingest import (
    FEATURE_NAMES,
    CleanObservation,
    HolidayCalendar,
    RawRidershipRecord,
    StationSeries,
    build_design_matrix,
    clean,
    featurize,
    load_clean_csv,
    load_holidays,
    parse_ridership_csv,
    raw_records_to_csv,
    write_clean_csv,
)

RAW = """\
station,date,entries,exits
ayala,2024-01-01,1200,1100
ayala,2024-01-02,1300,1250
cubao,2024-01-01,900,870
ayala,2024-01-06,400,380
"""

HOLIDAYS = """\
# fixed observances
2024-01-01

2024-12-25
"""


def test_parse_returns_records_in_file_order():
    records = parse_ridership_csv(RAW)
    assert records[0] == RawRidershipRecord("ayala", dt.date(2024, 1, 1), 1200, 1100)
    assert [r.station for r in records] == ["ayala", "ayala", "cubao", "ayala"]
    assert records[-1].exits == 380


@pytest.mark.parametrize("wrap", [
    lambda s: s,
    lambda s: s.encode("utf-8"),
    lambda s: io.StringIO(s),
    lambda s: io.BytesIO(s.encode("utf-8")),
])
def test_parse_accepts_text_bytes_and_files(wrap):
    assert len(parse_ridership_csv(wrap(RAW))) == 4


def test_parse_rejects_wrong_header():
    with pytest.raises(MissingHeader):
        parse_ridership_csv("station,date,riders,exits\na,2024-01-01,1,1\n")
    with pytest.raises(MissingHeader):
        parse_ridership_csv("")


def test_parse_reports_one_based_row_numbers_counting_the_header():
    bad = "station,date,entries,exits\na,2024-01-01,1,1\na,2024-13-01,2,2\n"
    with pytest.raises(BadDate) as err:
        parse_ridership_csv(bad)
    assert err.value.row == 3
    assert "row 3" in str(err.value)


def test_parse_rejects_negative_and_non_integer_counts():
    with pytest.raises(NegativeCount) as err:
        parse_ridership_csv("station,date,entries,exits\na,2024-01-01,-5,1\n")
    assert err.value.row == 2 and err.value.value == -5
    with pytest.raises(InvalidCount):
        parse_ridership_csv("station,date,entries,exits\na,2024-01-01,1.5,1\n")


def test_parse_rejects_wrong_column_count_and_blank_station():
    with pytest.raises(WrongColumnCount) as err:
        parse_ridership_csv("station,date,entries,exits\na,2024-01-01,1\n")
    assert (err.value.row, err.value.got) == (2, 3)
    with pytest.raises(MissingStation):
        parse_ridership_csv("station,date,entries,exits\n ,2024-01-01,1,1\n")


def test_parse_skips_blank_lines_and_trims_fields():
    text = "station,date,entries,exits\n\n a , 2024-01-01 , 7 , 8 \n\n"
    records = parse_ridership_csv(text)
    assert records == [RawRidershipRecord("a", dt.date(2024, 1, 1), 7, 8)]


def test_raw_csv_round_trip():
    records = parse_ridership_csv(RAW)
    assert parse_ridership_csv(raw_records_to_csv(records)) == records


def test_load_holidays_ignores_comments_and_blanks():
    cal = load_holidays(HOLIDAYS)
    assert dt.date(2024, 1, 1) in cal
    assert dt.date(2024, 12, 25) in cal
    assert dt.date(2024, 6, 12) not in cal
    assert len(cal.dates) == 2


def test_load_holidays_reports_bad_line():
    with pytest.raises(BadDate) as err:
        load_holidays("2024-01-01\nnot-a-date\n")
    assert err.value.row == 2


def test_clean_filters_sorts_and_flags():
    records = parse_ridership_csv(RAW)
    series, warnings = clean(records, "ayala", load_holidays(HOLIDAYS))
    assert warnings == []
    assert series.station == "ayala"
    assert [o.date.day for o in series.observations] == [1, 2, 6]
    # 2024-01-01 is a Monday holiday; 2024-01-06 is a Saturday.
    assert series.observations[0].is_weekend == 0
    assert series.observations[0].is_holiday == 1
    assert series.observations[2].is_weekend == 1
    assert series.observations[2].is_holiday == 0
    # exits never survive cleaning
    assert series.observations[0].ridership == 1200


def test_clean_collapses_identical_duplicates_silently():
    text = (
        "station,date,entries,exits\n"
        "a,2024-01-02,5,1\na,2024-01-01,3,1\na,2024-01-02,5,9\n"
    )
    series, warnings = clean(parse_ridership_csv(text), "a", HolidayCalendar())
    assert warnings == []
    assert [(o.date.day, o.ridership) for o in series.observations] == [(1, 3), (2, 5)]


def test_clean_resolves_conflicting_duplicates_to_last_and_warns():
    text = (
        "station,date,entries,exits\n"
        "a,2024-01-02,5,0\na,2024-01-02,8,0\na,2024-01-01,3,0\n"
    )
    series, warnings = clean(parse_ridership_csv(text), "a", HolidayCalendar())
    assert len(warnings) == 1
    assert warnings[0].date == dt.date(2024, 1, 2)
    assert warnings[0].kept == 8
    assert warnings[0].seen == (5, 8)
    assert series.observations[-1].ridership == 8


def test_clean_unknown_station_raises():
    with pytest.raises(EmptySeries):
        clean(parse_ridership_csv(RAW), "nowhere", HolidayCalendar())


def test_clean_is_idempotent_through_the_clean_csv():
    records = parse_ridership_csv(RAW)
    holidays = load_holidays(HOLIDAYS)
    ayala, _ = clean(records, "ayala", holidays)
    cubao, _ = clean(records, "cubao", holidays)
    text = write_clean_csv([ayala, cubao])
    reloaded, cal = load_clean_csv(text)
    assert reloaded["ayala"] == ayala
    assert reloaded["cubao"] == cubao
    assert write_clean_csv([reloaded["ayala"], reloaded["cubao"]]) == text
    assert dt.date(2024, 1, 1) in cal


def test_featurize_fields_and_declared_order():
    cal = HolidayCalendar(frozenset({dt.date(2024, 3, 29)}))
    epoch = dt.date(2024, 1, 1)
    fv = featurize(dt.date(2024, 3, 29), epoch, cal)  # Good Friday 2024
    assert fv.t_index == 88
    assert (fv.year, fv.month, fv.day_of_month) == (2024, 3, 29)
    assert fv.day_of_week == 4  # Friday, Monday=0
    assert fv.day_of_year == 89  # 2024 is a leap year
    assert (fv.is_weekend, fv.is_holiday) == (0, 1)
    assert FEATURE_NAMES == [
        "t_index", "year", "month", "day_of_month",
        "day_of_week", "day_of_year", "is_weekend", "is_holiday",
    ]
    assert list(fv.as_array()) == [88, 2024, 3, 29, 4, 89, 0, 1]


def test_featurize_rejects_dates_before_the_epoch():
    with pytest.raises(DateBeforeEpoch):
        featurize(dt.date(2023, 12, 31), dt.date(2024, 1, 1), HolidayCalendar())


def test_design_matrix_preserves_gaps_without_imputation():
    obs = [
        CleanObservation(dt.date(2024, 1, 1), 10, 0, 0),
        CleanObservation(dt.date(2024, 1, 2), 11, 0, 0),
        CleanObservation(dt.date(2024, 1, 9), 12, 0, 0),  # a week is missing
    ]
    matrix = build_design_matrix(StationSeries("a", obs), HolidayCalendar())
    t = [row.t_index for row in matrix.rows]
    assert t == [0, 1, 8]
    assert all(b > a for a, b in zip(t, t[1:]))
    X, y = matrix.to_arrays()
    assert X.shape == (3, 8)
    assert list(y) == [10.0, 11.0, 12.0]
    # second call returns the cached arrays
    assert matrix.to_arrays()[0] is X


def test_load_clean_csv_reconstructs_holiday_calendar():
    obs = [
        CleanObservation(dt.date(2024, 1, 1), 10, 0, 1),
        CleanObservation(dt.date(2024, 1, 2), 11, 0, 0),
    ]
    text = write_clean_csv([StationSeries("a", obs)])
    series, cal = load_clean_csv(text)
    assert dt.date(2024, 1, 1) in cal
    assert dt.date(2024, 1, 2) not in cal
    assert series["a"].observations == obs
