import json
import os

import pytest

from ridecast.cli import main


def run(*argv):
    return main(list(argv))


@pytest.fixture()
def synth_dir(tmp_path):
    data = tmp_path / "data"
    assert run("synth", "--output", str(data), "--stations", "2",
               "--days", "80", "--noise", "0.05", "--seed", "5") == 0
    return data


@pytest.fixture()
def clean_csv(tmp_path, synth_dir):
    out = tmp_path / "clean.csv"
    assert run("clean", "--input", str(synth_dir / "ridership.csv"),
               "--holidays", str(synth_dir / "holidays.txt"),
               "--output", str(out)) == 0
    return out


def test_synth_writes_deterministic_files(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for out in (a, b):
        assert run("synth", "--output", str(out), "--stations", "2",
                   "--days", "60", "--seed", "9") == 0
    assert (a / "ridership.csv").read_bytes() == (b / "ridership.csv").read_bytes()
    assert (a / "holidays.txt").read_bytes() == (b / "holidays.txt").read_bytes()


def test_synth_rejects_short_series(tmp_path, capsys):
    assert run("synth", "--output", str(tmp_path / "x"), "--days", "10") == 1
    assert "--days" in capsys.readouterr().err


def test_missing_subcommand_and_unknown_flags_are_usage_errors(capsys):
    assert run() == 1
    assert run("train", "--frobnicate") == 1
    assert run("clean") == 1  # required flags absent
    capsys.readouterr()


def test_clean_round_trip_and_station_filter(tmp_path, synth_dir):
    out = tmp_path / "clean.csv"
    assert run("clean", "--input", str(synth_dir / "ridership.csv"),
               "--holidays", str(synth_dir / "holidays.txt"),
               "--output", str(out), "--stations", "station02") == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "station,date,ridership,is_weekend,is_holiday"
    assert len(lines) == 1 + 80
    assert all(line.startswith("station02,") for line in lines[1:])


def test_clean_names_the_offending_row(tmp_path, capsys):
    rows = ["station,date,entries,exits"]
    rows += [f"a,2024-01-{d:02d},10,10" for d in range(1, 16)]  # rows 2..16
    rows.append("a,2024-02-31,10,10")  # row 17 holds an impossible date
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(rows) + "\n")
    holidays = tmp_path / "h.txt"
    holidays.write_text("2024-01-01\n")
    assert run("clean", "--input", str(bad), "--holidays", str(holidays),
               "--output", str(tmp_path / "out.csv")) == 2
    assert "row 17" in capsys.readouterr().err


def test_clean_missing_input_file_is_a_data_error(tmp_path, capsys):
    assert run("clean", "--input", str(tmp_path / "nope.csv"),
               "--holidays", str(tmp_path / "h.txt"),
               "--output", str(tmp_path / "out.csv")) == 2
    capsys.readouterr()


def test_clean_reports_conflicting_duplicates(tmp_path, capsys):
    raw = tmp_path / "raw.csv"
    raw.write_text(
        "station,date,entries,exits\n"
        "a,2024-01-01,5,5\na,2024-01-01,9,9\na,2024-01-02,7,7\n"
    )
    holidays = tmp_path / "h.txt"
    holidays.write_text("")
    assert run("clean", "--input", str(raw), "--holidays", str(holidays),
               "--output", str(tmp_path / "c.csv")) == 0
    err = capsys.readouterr().err
    assert "warning" in err and "2024-01-01" in err and "kept 9" in err


def train_args(clean_csv, out_dir, *extra):
    return ("train", "--input", str(clean_csv), "--output", str(out_dir),
            "--max-candidates", "6", "--patience", "3", "--seed", "11") + extra


def test_train_writes_models_leaderboards_and_summary(tmp_path, clean_csv):
    out = tmp_path / "models"
    assert run(*train_args(clean_csv, out)) == 0
    for station in ("station01", "station02"):
        assert (out / f"{station}.model.json").exists()
        board = (out / f"{station}.leaderboard.csv").read_text().strip().split("\n")
        assert board[0].startswith("rank,candidate_index,algorithm,")
        assert 2 <= len(board) <= 7
        doc = json.loads((out / f"{station}.leaderboard.json").read_text())
        assert doc["station"] == station
    summary = (out / "summary.csv").read_text().strip().split("\n")
    assert summary[0] == "station,algorithm,cv_nrmse,cv_mape,cv_accuracy"
    assert summary[1].startswith("station01,")
    assert summary[2].startswith("station02,")
    assert summary[3].startswith("# algorithm_counts: gb=")
    counts = dict(part.split("=") for part in summary[3].split(": ")[1].split(" "))
    assert sum(int(v) for v in counts.values()) == 2


def test_train_summary_bytes_are_reproducible(tmp_path, clean_csv):
    a = tmp_path / "runA"
    b = tmp_path / "runB"
    assert run(*train_args(clean_csv, a)) == 0
    assert run(*train_args(clean_csv, b)) == 0
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()

    def sans_timing(path):
        # fit_seconds is wall time and legitimately varies between runs
        rows = path.read_text().strip().split("\n")
        return [row.rsplit(",", 1)[0] for row in rows]

    assert (sans_timing(a / "station01.leaderboard.csv")
            == sans_timing(b / "station01.leaderboard.csv"))


def test_train_unknown_station_is_a_data_error(tmp_path, clean_csv, capsys):
    assert run(*train_args(clean_csv, tmp_path / "m", "--stations", "ghost")) == 2
    assert "ghost" in capsys.readouterr().err


def test_train_short_series_names_the_station(tmp_path, capsys):
    data = tmp_path / "short"
    assert run("synth", "--output", str(data), "--stations", "1",
               "--days", "60", "--seed", "2") == 0
    clean = tmp_path / "short.csv"
    assert run("clean", "--input", str(data / "ridership.csv"),
               "--holidays", str(data / "holidays.txt"),
               "--output", str(clean)) == 0
    # 5 folds x 7 days + 28 minimum training rows = 63 > 60 available
    assert run("train", "--input", str(clean),
               "--output", str(tmp_path / "m")) == 3
    err = capsys.readouterr().err
    assert "station01" in err and "63" in err


def test_forecast_csv_and_json_outputs(tmp_path, synth_dir, clean_csv):
    models = tmp_path / "models"
    assert run(*train_args(clean_csv, models)) == 0
    out = tmp_path / "fc.csv"
    assert run("forecast", "--model", str(models / "station01.model.json"),
               "--input", str(clean_csv),
               "--holidays", str(synth_dir / "holidays.txt"),
               "--horizon", "5", "--output", str(out)) == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "date,predicted"
    assert len(lines) == 6
    out_json = tmp_path / "fc.json"
    assert run("forecast", "--model", str(models / "station01.model.json"),
               "--input", str(clean_csv),
               "--holidays", str(synth_dir / "holidays.txt"),
               "--format", "json", "--output", str(out_json)) == 0
    doc = json.loads(out_json.read_text())
    assert doc["station"] == "station01"
    assert len(doc["rows"]) == 7
    assert {"date", "predicted", "clamped"} <= set(doc["rows"][0])


def test_forecast_missing_model_file_is_a_model_error(tmp_path, synth_dir,
                                                      clean_csv, capsys):
    assert run("forecast", "--model", str(tmp_path / "nope.model.json"),
               "--input", str(clean_csv),
               "--holidays", str(synth_dir / "holidays.txt")) == 3
    capsys.readouterr()


def test_evaluate_prints_per_station_scores(tmp_path, clean_csv, capsys):
    models = tmp_path / "models"
    assert run(*train_args(clean_csv, models)) == 0
    capsys.readouterr()
    report = tmp_path / "eval.csv"
    assert run("evaluate", "--models", str(models), "--input", str(clean_csv),
               "--holdout", "7", "--output", str(report)) == 0
    out = capsys.readouterr().out
    assert "station01 algorithm=" in out
    assert "mean accuracy=" in out
    lines = report.read_text().strip().split("\n")
    assert lines[0] == "station,algorithm,holdout_days,mape,accuracy,excluded_zero_days"
    assert len(lines) == 3


def test_evaluate_noiseless_prints_exactly_100(tmp_path, capsys):
    data = tmp_path / "nl"
    assert run("synth", "--output", str(data), "--stations", "1",
               "--days", "90", "--noise", "0", "--seed", "3") == 0
    clean = tmp_path / "nl.csv"
    assert run("clean", "--input", str(data / "ridership.csv"),
               "--holidays", str(data / "holidays.txt"),
               "--output", str(clean)) == 0
    models = tmp_path / "nlmodels"
    assert run("train", "--input", str(clean), "--output", str(models),
               "--max-candidates", "12", "--patience", "8", "--seed", "1") == 0
    capsys.readouterr()
    assert run("evaluate", "--model", str(models / "station01.model.json"),
               "--input", str(clean)) == 0
    assert "accuracy=100.00" in capsys.readouterr().out


def test_evaluate_rejects_zero_holdout(tmp_path, clean_csv, capsys):
    assert run("evaluate", "--model", str(tmp_path / "m.model.json"),
               "--input", str(clean_csv), "--holdout", "0") == 1
    capsys.readouterr()


def test_evaluate_corrupt_model_is_a_model_error(tmp_path, clean_csv, capsys):
    bad = tmp_path / "bad.model.json"
    bad.write_text("{not json")
    assert run("evaluate", "--model", str(bad), "--input", str(clean_csv)) == 3
    capsys.readouterr()


def test_no_stray_temp_files_after_a_full_run(tmp_path, synth_dir, clean_csv):
    models = tmp_path / "models"
    assert run(*train_args(clean_csv, models)) == 0
    leftovers = [name for name in os.listdir(models) if name.endswith(".tmp")]
    assert leftovers == []
