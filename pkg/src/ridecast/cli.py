"""Operator command line: synth, clean, train, forecast, evaluate.

Exit codes: 0 success, 1 usage, 2 bad input data, 3 model or series
problems. All file outputs are written atomically (temp file then rename)
so a crash never leaves a half-written artifact behind.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile
from dataclasses import dataclass
from typing import Optional, Sequence

from .ensemble import TrainedModel, fit_payload, load_model, save_model
from .errors import (
    DateBeforeEpoch,
    EmptySeries,
    IngestError,
    RidecastError,
    SeriesTooShort,
)
from .forecast import (
    MIN_SYNTHETIC_DAYS,
    SyntheticSpec,
    evaluate_holdout,
    forecast,
    generate_synthetic,
)
from .ingest import (
    DesignMatrix,
    build_design_matrix,
    clean,
    load_clean_csv,
    load_holidays,
    parse_ridership_csv,
    write_clean_csv,
)
from .select import (
    Leaderboard,
    SearchBudget,
    default_grid,
    leaderboard_to_csv,
    leaderboard_to_json,
    search,
    select_best_per_station,
    train_final_model,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_MODEL = 3


@dataclass(frozen=True)
class RunConfig:
    """Defaults shared by the training and evaluation commands."""

    folds: int = 5
    horizon: int = 7
    patience: int = 20
    max_candidates: int = 42
    time_budget: float = 300.0  # seconds per station search
    base_seed: int = 42
    holdout: int = 7
    output_format: str = "csv"
    workers: int = 1


_DEFAULTS = RunConfig()


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(message)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def _emit(text: str, output: Optional[str]) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        _atomic_write(output, text)


def _station_filter(raw: Optional[str]) -> Optional[list[str]]:
    if raw is None:
        return None
    names = [s.strip() for s in raw.split(",") if s.strip()]
    if not names:
        raise _UsageError("--stations given but names are empty")
    return names


def _build_parser() -> _Parser:
    parser = _Parser(prog="ridecast", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", help="generate a synthetic raw CSV and holiday file")
    p.add_argument("--output", required=True, help="directory for ridership.csv and holidays.txt")
    p.add_argument("--stations", type=int, default=13, help="number of stations")
    p.add_argument("--days", type=int, default=730, help="days per station (min %d)" % MIN_SYNTHETIC_DAYS)
    p.add_argument("--noise", type=float, default=0.05, help="relative noise level")
    p.add_argument("--seed", type=int, default=_DEFAULTS.base_seed)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("clean", help="validate raw counts and write the clean per-station CSV")
    p.add_argument("--input", required=True, help="raw CSV (station,date,entries,exits)")
    p.add_argument("--holidays", required=True, help="holiday list, one ISO date per line")
    p.add_argument("--output", required=True, help="clean CSV path")
    p.add_argument("--stations", default=None, help="comma-separated station filter")
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("train", help="search candidates per station and save the winners")
    p.add_argument("--input", required=True, help="clean CSV")
    p.add_argument("--output", required=True, help="directory for models, leaderboards, summary.csv")
    p.add_argument("--holidays", default=None, help="holiday list; default reconstructs from the clean CSV")
    p.add_argument("--stations", default=None, help="comma-separated station filter")
    p.add_argument("--folds", type=int, default=_DEFAULTS.folds)
    p.add_argument("--horizon", type=int, default=_DEFAULTS.horizon)
    p.add_argument("--patience", type=int, default=_DEFAULTS.patience)
    p.add_argument("--max-candidates", type=int, default=_DEFAULTS.max_candidates)
    p.add_argument("--time-budget", type=float, default=_DEFAULTS.time_budget,
                   help="wall clock seconds per station search")
    p.add_argument("--seed", type=int, default=_DEFAULTS.base_seed)
    p.add_argument("--workers", type=int, default=_DEFAULTS.workers,
                   help="threads for fold evaluation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="predict the days after a series ends")
    p.add_argument("--model", required=True, help="saved model JSON")
    p.add_argument("--input", required=True, help="clean CSV holding the model's station")
    p.add_argument("--holidays", required=True, help="holiday list covering the forecast window")
    p.add_argument("--horizon", type=int, default=_DEFAULTS.horizon)
    p.add_argument("--output", default=None, help="write here instead of stdout")
    p.add_argument("--format", choices=("csv", "json"), default=_DEFAULTS.output_format)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("evaluate", help="refit on a head split and score the holdout tail")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", help="one saved model JSON")
    group.add_argument("--models", help="directory of *.model.json files")
    p.add_argument("--input", required=True, help="clean CSV")
    p.add_argument("--holidays", default=None, help="holiday list; default reconstructs from the clean CSV")
    p.add_argument("--holdout", type=int, default=_DEFAULTS.holdout)
    p.add_argument("--output", default=None, help="write the report here as well")
    p.add_argument("--format", choices=("csv", "json"), default=_DEFAULTS.output_format)
    p.set_defaults(func=cmd_evaluate)

    return parser


def _load_clean(path: str, holidays_path: Optional[str]):
    with open(path, "r", encoding="utf-8") as f:
        series, holidays = load_clean_csv(f)
    if holidays_path is not None:
        with open(holidays_path, "r", encoding="utf-8") as f:
            holidays = load_holidays(f)
    return series, holidays


def cmd_synth(args) -> int:
    if args.days < MIN_SYNTHETIC_DAYS:
        raise _UsageError(f"--days must be >= {MIN_SYNTHETIC_DAYS}, got {args.days}")
    if args.stations < 1:
        raise _UsageError("--stations must be >= 1")
    if args.noise < 0:
        raise _UsageError("--noise must be >= 0")
    dataset = generate_synthetic(SyntheticSpec(
        n_stations=args.stations,
        days=args.days,
        noise_sigma=args.noise,
        seed=args.seed,
    ))
    os.makedirs(args.output, exist_ok=True)
    csv_path = os.path.join(args.output, "ridership.csv")
    holiday_path = os.path.join(args.output, "holidays.txt")
    _atomic_write(csv_path, dataset.raw_csv)
    _atomic_write(holiday_path, dataset.holiday_text)
    print(f"wrote {args.stations} stations x {args.days} days to {csv_path}",
          file=sys.stderr)
    return EXIT_OK


def cmd_clean(args) -> int:
    with open(args.input, "rb") as f:
        records = parse_ridership_csv(f)
    with open(args.holidays, "r", encoding="utf-8") as f:
        holidays = load_holidays(f)
    wanted = _station_filter(args.stations)
    if wanted is None:
        wanted = sorted({r.station for r in records})
    series_list = []
    for station in wanted:
        series, warnings = clean(records, station, holidays)
        for w in warnings:
            print(f"warning: {station}: conflicting duplicates on "
                  f"{w.date.isoformat()}, kept {w.kept}", file=sys.stderr)
        series_list.append(series)
    _atomic_write(args.output, write_clean_csv(series_list))
    total = sum(len(s) for s in series_list)
    print(f"wrote {total} rows for {len(series_list)} stations to {args.output}",
          file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    for name in ("folds", "horizon", "patience", "max_candidates", "workers"):
        if getattr(args, name) < 1:
            raise _UsageError(f"--{name.replace('_', '-')} must be >= 1")
    if args.time_budget <= 0:
        raise _UsageError("--time-budget must be positive")
    series_by_station, holidays = _load_clean(args.input, args.holidays)
    wanted = _station_filter(args.stations) or sorted(series_by_station)
    os.makedirs(args.output, exist_ok=True)
    budget = SearchBudget(
        patience=args.patience,
        max_candidates=args.max_candidates,
        wall_clock_limit=args.time_budget,
        base_seed=args.seed,
    )
    boards: dict[str, Leaderboard] = {}
    summary_lines = ["station,algorithm,cv_nrmse,cv_mape,cv_accuracy"]
    for station in wanted:
        if station not in series_by_station:
            raise EmptySeries(station)
        matrix = build_design_matrix(series_by_station[station], holidays)
        try:
            board = search(
                matrix, budget, default_grid(args.seed), station=station,
                k=args.folds, h=args.horizon, n_workers=args.workers,
            )
        except SeriesTooShort as e:
            raise SeriesTooShort(e.n, e.required, station) from e
        boards[station] = board
        winner = board.entries[0]
        model = train_final_model(winner, matrix, station)
        save_model(model, os.path.join(args.output, f"{station}.model.json"))
        _atomic_write(os.path.join(args.output, f"{station}.leaderboard.csv"),
                      leaderboard_to_csv(board))
        _atomic_write(os.path.join(args.output, f"{station}.leaderboard.json"),
                      leaderboard_to_json(board))
        summary_lines.append(
            f"{station},{winner.candidate.algorithm},{winner.mean_nrmse!r},"
            f"{winner.mean_mape!r},{winner.mean_accuracy!r}"
        )
        print(f"{station}: algorithm={winner.candidate.algorithm} "
              f"cv_nrmse={winner.mean_nrmse:.4f} "
              f"cv_accuracy={winner.mean_accuracy:.2f} "
              f"candidates={len(board.entries)}", file=sys.stderr)
    selection = select_best_per_station(boards)
    counts = selection.algorithm_counts
    summary_lines.append(
        f"# algorithm_counts: gb={counts['gb']} ert={counts['ert']} lgbm={counts['lgbm']}"
    )
    _atomic_write(os.path.join(args.output, "summary.csv"),
                  "\n".join(summary_lines) + "\n")
    print(f"wrote {len(wanted)} models to {args.output}", file=sys.stderr)
    return EXIT_OK


def _load_model_file(path: str) -> TrainedModel:
    try:
        return load_model(path)
    except OSError as e:
        print(f"error: cannot read model {path}: {e}", file=sys.stderr)
        raise SystemExit(EXIT_MODEL) from e


def _refit_factory(model: TrainedModel):
    def build(matrix: DesignMatrix) -> TrainedModel:
        X, y = matrix.to_arrays()
        payload = fit_payload(model.algorithm, X, y, model.payload.params,
                              matrix.feature_names)
        metadata = dataclasses.replace(model.metadata, train_row_count=len(matrix))
        return TrainedModel(model.algorithm, payload, metadata)
    return build


def cmd_forecast(args) -> int:
    if args.horizon < 1:
        raise _UsageError("--horizon must be >= 1")
    model = _load_model_file(args.model)
    series_by_station, _ = _load_clean(args.input, None)
    with open(args.holidays, "r", encoding="utf-8") as f:
        holidays = load_holidays(f)
    station = model.metadata.station
    if station not in series_by_station:
        raise EmptySeries(station)
    report = forecast(model, series_by_station[station], holidays, args.horizon)
    if args.format == "csv":
        lines = ["date,predicted"]
        lines += [f"{r.date.isoformat()},{r.predicted_ridership!r}" for r in report.rows]
        text = "\n".join(lines) + "\n"
    else:
        text = json.dumps({
            "station": report.station,
            "algorithm": report.model_algorithm,
            "horizon": report.horizon,
            "rows": [
                {"date": r.date.isoformat(), "predicted": r.predicted_ridership,
                 "clamped": r.clamped}
                for r in report.rows
            ],
        }) + "\n"
    _emit(text, args.output)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.holdout < 1:
        raise _UsageError("--holdout must be >= 1")
    if args.models is not None:
        paths = sorted(
            os.path.join(args.models, name)
            for name in os.listdir(args.models)
            if name.endswith(".model.json")
        )
        if not paths:
            print(f"error: no *.model.json files in {args.models}", file=sys.stderr)
            return EXIT_MODEL
    else:
        paths = [args.model]
    series_by_station, holidays = _load_clean(args.input, args.holidays)
    reports = []
    for path in paths:
        model = _load_model_file(path)
        station = model.metadata.station
        if station not in series_by_station:
            raise EmptySeries(station)
        report = evaluate_holdout(
            _refit_factory(model), series_by_station[station], holidays, args.holdout
        )
        reports.append(report)
        print(f"{report.station} algorithm={report.algorithm} "
              f"holdout={report.holdout_days} mape={report.mape:.2f} "
              f"accuracy={report.accuracy:.2f} excluded={report.excluded_zero_days}")
    if len(reports) > 1:
        mean_acc = sum(r.accuracy for r in reports) / len(reports)
        print(f"mean accuracy={mean_acc:.2f} over {len(reports)} stations")
    if args.output is not None:
        if args.format == "csv":
            lines = ["station,algorithm,holdout_days,mape,accuracy,excluded_zero_days"]
            lines += [
                f"{r.station},{r.algorithm},{r.holdout_days},{r.mape!r},"
                f"{r.accuracy!r},{r.excluded_zero_days}"
                for r in reports
            ]
            _atomic_write(args.output, "\n".join(lines) + "\n")
        else:
            _atomic_write(args.output, json.dumps([
                {"station": r.station, "algorithm": r.algorithm,
                 "holdout_days": r.holdout_days, "mape": r.mape,
                 "accuracy": r.accuracy,
                 "excluded_zero_days": r.excluded_zero_days,
                 "low_accuracy": r.low_accuracy}
                for r in reports
            ]) + "\n")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            raise _UsageError("a command is required (synth, clean, train, forecast, evaluate)")
        return args.func(args)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (IngestError, EmptySeries, DateBeforeEpoch) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except RidecastError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as e:
        if isinstance(e.code, int):
            return e.code
        raise


if __name__ == "__main__":
    raise SystemExit(main())
