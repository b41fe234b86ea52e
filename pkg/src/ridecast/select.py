"""Rolling-origin cross-validation, forecast metrics, and model search.

Folds always train on a prefix of the series and test on the block that
follows it, so no candidate ever sees a future observation. The search
consumes a candidate grid in order under a budget (patience on the CV
score, a candidate cap, and a wall clock limit) and returns a leaderboard
sorted by mean normalized RMSE.
"""

from __future__ import annotations

import datetime as dt
import itertools
import json
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .ensemble import (
    ERTParams,
    GBMParams,
    LGBMParams,
    ModelMetadata,
    TrainedModel,
    fit_ert,
    fit_gbm,
    fit_lgbm,
    predict_batch,
)
from .errors import (
    AllActualsZero,
    DegenerateTarget,
    EmptyInput,
    EmptyLeaderboard,
    FoldEvaluationError,
    LengthMismatch,
    NoCandidates,
    SeriesTooShort,
)
from .ingest import DesignMatrix
from .trees import BinnedMatrix, TreeParams, _sorted_index, bin_matrix, build_histograms

DEFAULT_FOLDS = 5
DEFAULT_HORIZON = 7
DEFAULT_MIN_TRAIN = 28


class FoldIndices(NamedTuple):
    train_end: int  # train rows are [0, train_end)
    test_start: int
    test_end: int


@dataclass(frozen=True)
class RollingCVPlan:
    n: int
    k: int
    h: int
    folds: tuple[FoldIndices, ...]


def make_rolling_splits(n: int, k: int = DEFAULT_FOLDS, h: int = DEFAULT_HORIZON,
                        min_train: int = DEFAULT_MIN_TRAIN) -> RollingCVPlan:
    """k expanding-window folds whose test blocks are the last k*h rows.

    Fold j (1-based) tests on [n - (k - j + 1) * h, n - (k - j) * h) and
    trains on everything before its test block.
    """
    if k < 1 or h < 1 or min_train < 0:
        raise ValueError("need k >= 1, h >= 1, min_train >= 0")
    required = k * h + min_train
    if n < required:
        raise SeriesTooShort(n, required)
    folds = []
    for j in range(1, k + 1):
        test_start = n - (k - j + 1) * h
        folds.append(FoldIndices(test_start, test_start, test_start + h))
    return RollingCVPlan(n=n, k=k, h=h, folds=tuple(folds))


# --- metrics -----------------------------------------------------------------


def _paired(actual, predicted) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(actual, dtype=np.float64).ravel()
    p = np.asarray(predicted, dtype=np.float64).ravel()
    if a.shape[0] != p.shape[0]:
        raise LengthMismatch(a.shape[0], p.shape[0])
    if a.shape[0] == 0:
        raise EmptyInput("metrics need at least one pair")
    return a, p


def rmse(actual, predicted) -> float:
    a, p = _paired(actual, predicted)
    return float(np.sqrt(np.mean((a - p) ** 2)))


def nrmse(actual, predicted) -> float:
    """RMSE over the actuals' range; falls back to |mean| for flat actuals."""
    a, p = _paired(actual, predicted)
    r = rmse(a, p)
    spread = float(a.max() - a.min())
    if spread > 0.0:
        return r / spread
    center = abs(float(a.mean()))
    if center == 0.0:
        raise DegenerateTarget("actuals have zero range and zero mean")
    return r / center


class MapeResult(NamedTuple):
    value: float  # percent
    excluded: int  # zero-actual pairs left out


def mape(actual, predicted) -> MapeResult:
    a, p = _paired(actual, predicted)
    nonzero = a != 0.0
    kept = int(nonzero.sum())
    if kept == 0:
        raise AllActualsZero("every actual is zero; MAPE is undefined")
    value = float(100.0 * np.mean(np.abs(a[nonzero] - p[nonzero]) / np.abs(a[nonzero])))
    return MapeResult(value, a.shape[0] - kept)


class AccuracyResult(NamedTuple):
    value: float
    low_accuracy: bool  # set when the value is negative


def accuracy(mape_value: float) -> AccuracyResult:
    """100 - MAPE, unclamped; a negative result is flagged, not hidden."""
    if mape_value < 0.0:
        raise ValueError("MAPE cannot be negative")
    value = 100.0 - mape_value
    return AccuracyResult(value, value < 0.0)


# --- candidates and search ---------------------------------------------------


@dataclass
class CandidateSpec:
    candidate_index: int
    algorithm: str  # gb | ert | lgbm
    hyperparams: dict
    seed: int


@dataclass(frozen=True)
class SearchBudget:
    patience: int = 20
    max_candidates: int = 42
    wall_clock_limit: float = 300.0  # seconds
    base_seed: int = 42

    def __post_init__(self) -> None:
        if self.patience < 1 or self.max_candidates < 1:
            raise ValueError("patience and max_candidates must be >= 1")
        if self.wall_clock_limit <= 0.0:
            raise ValueError("wall_clock_limit must be positive")


class CandidateScore(NamedTuple):
    mean_nrmse: float
    mean_mape: float
    mean_accuracy: float
    fit_seconds: float


@dataclass
class LeaderboardEntry:
    candidate: CandidateSpec
    mean_nrmse: float
    mean_mape: float
    mean_accuracy: float
    fit_seconds: float


@dataclass
class Leaderboard:
    station: str
    entries: list[LeaderboardEntry]


def _gbm_params(hp: dict, seed: int) -> GBMParams:
    return GBMParams(
        n_rounds=hp["n_rounds"],
        learning_rate=hp["learning_rate"],
        tree_params=TreeParams(
            max_depth=hp["max_depth"],
            min_samples_leaf=hp.get("min_samples_leaf", 1),
            min_gain=hp.get("min_gain", 0.0),
        ),
        seed=seed,
    )


def _ert_params(hp: dict, seed: int) -> ERTParams:
    return ERTParams(
        n_trees=hp["n_trees"],
        k_features=hp["k_features"],
        min_samples_split=hp.get("min_samples_split", 2),
        seed=seed,
    )


def _lgbm_params(hp: dict, seed: int) -> LGBMParams:
    return LGBMParams(
        n_rounds=hp["n_rounds"],
        learning_rate=hp["learning_rate"],
        max_bins=hp.get("max_bins", 64),
        max_leaves=hp["max_leaves"],
        min_child_samples=hp.get("min_child_samples", 1),
        reg_lambda=hp.get("reg_lambda", 0.0),
        seed=seed,
    )


class _FoldContext:
    """One fold's train/test arrays plus lazily shared fit scaffolding.

    The sorted index and the binned train matrix depend only on the fold's
    train rows, so every candidate evaluated on this fold can reuse them.
    """

    __slots__ = ("X_train", "y_train", "X_test", "y_test", "_sorted", "_binned")

    def __init__(self, X_train, y_train, X_test, y_test):
        self.X_train = X_train
        self.y_train = y_train
        self.X_test = X_test
        self.y_test = y_test
        self._sorted = None
        self._binned: dict[int, BinnedMatrix] = {}

    def sorted_idx(self) -> np.ndarray:
        if self._sorted is None:
            self._sorted = _sorted_index(self.X_train)
        return self._sorted

    def binned(self, max_bins: int) -> BinnedMatrix:
        if max_bins not in self._binned:
            bins = build_histograms(self.X_train, max_bins)
            self._binned[max_bins] = bin_matrix(self.X_train, bins)
        return self._binned[max_bins]


def _fold_contexts(matrix: DesignMatrix, plan: RollingCVPlan) -> list[_FoldContext]:
    X, y = matrix.to_arrays()
    if X.shape[0] != plan.n:
        raise LengthMismatch(X.shape[0], plan.n)
    return [
        _FoldContext(X[:f.train_end], y[:f.train_end],
                     X[f.test_start:f.test_end], y[f.test_start:f.test_end])
        for f in plan.folds
    ]


def _fit_and_predict(spec: CandidateSpec, ctx: _FoldContext) -> np.ndarray:
    if spec.algorithm == "gb":
        model = fit_gbm(ctx.X_train, ctx.y_train,
                        _gbm_params(spec.hyperparams, spec.seed),
                        sorted_idx=ctx.sorted_idx())
    elif spec.algorithm == "ert":
        model = fit_ert(ctx.X_train, ctx.y_train,
                        _ert_params(spec.hyperparams, spec.seed))
    elif spec.algorithm == "lgbm":
        params = _lgbm_params(spec.hyperparams, spec.seed)
        model = fit_lgbm(ctx.X_train, ctx.y_train, params,
                         binned=ctx.binned(params.max_bins))
    else:
        raise ValueError(f"unknown algorithm tag {spec.algorithm!r}")
    return predict_batch(model, ctx.X_test)


def _score_on_folds(spec: CandidateSpec, contexts: Sequence[_FoldContext],
                    clock: Callable[[], float], n_workers: int) -> CandidateScore:
    def one(numbered: tuple[int, _FoldContext]):
        fold_index, ctx = numbered
        t0 = clock()
        try:
            preds = _fit_and_predict(spec, ctx)
            fold_nrmse = nrmse(ctx.y_test, preds)
            fold_mape = mape(ctx.y_test, preds).value
        except Exception as e:
            raise FoldEvaluationError(spec.candidate_index, fold_index, e) from e
        return fold_nrmse, fold_mape, clock() - t0

    numbered = list(enumerate(contexts, start=1))
    if n_workers <= 1 or len(numbered) == 1:
        results = [one(item) for item in numbered]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(one, numbered))
    mean_nrmse = float(np.mean([r[0] for r in results]))
    mean_mape = float(np.mean([r[1] for r in results]))
    fit_seconds = float(sum(r[2] for r in results))
    return CandidateScore(mean_nrmse, mean_mape, 100.0 - mean_mape, fit_seconds)


def evaluate_candidate(spec: CandidateSpec, matrix: DesignMatrix,
                       plan: RollingCVPlan,
                       clock: Callable[[], float] = time.perf_counter,
                       n_workers: int = 1) -> CandidateScore:
    """Fit and score one candidate on every fold; means are unweighted.

    Any per-fold failure surfaces as FoldEvaluationError carrying the
    candidate and fold indices. mean_accuracy is 100 - mean_mape by
    definition, so the pair stays consistent in every report.
    """
    return _score_on_folds(spec, _fold_contexts(matrix, plan), clock, n_workers)


def search(matrix: DesignMatrix, budget: SearchBudget,
           grid: Sequence[CandidateSpec], station: str = "",
           k: int = DEFAULT_FOLDS, h: int = DEFAULT_HORIZON,
           min_train: int = DEFAULT_MIN_TRAIN, n_workers: int = 1,
           clock: Callable[[], float] = time.perf_counter,
           evaluate: Optional[Callable[[CandidateSpec], CandidateScore]] = None,
           ) -> Leaderboard:
    """Consume the grid in order under the budget; return the sorted leaderboard.

    The first candidate always runs. The wall clock is checked between
    candidates, never mid-fit. Patience counts consecutive candidates that
    fail to strictly improve the best mean NRMSE seen so far and resets on
    every improvement. Entries sort by (mean_nrmse, candidate_index).
    """
    if len(grid) == 0:
        raise NoCandidates()
    if evaluate is None:
        plan = make_rolling_splits(len(matrix), k, h, min_train)
        contexts = _fold_contexts(matrix, plan)

        def evaluate(spec: CandidateSpec) -> CandidateScore:
            return _score_on_folds(spec, contexts, clock, n_workers)

    started = clock()
    entries: list[LeaderboardEntry] = []
    best = float("inf")
    stale = 0
    for spec in grid:
        if entries and clock() - started > budget.wall_clock_limit:
            break
        score = evaluate(spec)
        entries.append(LeaderboardEntry(spec, *score))
        if score.mean_nrmse < best:
            best = score.mean_nrmse
            stale = 0
        else:
            stale += 1
        if stale >= budget.patience:
            break
        if len(entries) >= budget.max_candidates:
            break
    entries.sort(key=lambda e: (e.mean_nrmse, e.candidate.candidate_index))
    return Leaderboard(station=station, entries=entries)


def default_grid(base_seed: int) -> list[CandidateSpec]:
    """The stock 42-candidate grid, interleaved gb, ert, lgbm, gb, ...

    Interleaving keeps all three families in play early, so a tight
    patience or wall clock budget still compares unlike models instead of
    burning out inside one family's grid. Candidate i gets seed
    base_seed + i.
    """
    gb = [
        {"n_rounds": r, "learning_rate": lr, "max_depth": d,
         "min_samples_leaf": 1, "min_gain": 0.0}
        for r, lr, d in itertools.product((50, 100, 200), (0.05, 0.1, 0.3), (3, 5))
    ]
    ert = [
        {"n_trees": t, "k_features": kf, "min_samples_split": s}
        for t, kf, s in itertools.product((50, 100, 200), (3, 8), (2, 10))
    ]
    lgbm = [
        {"n_rounds": r, "learning_rate": lr, "max_leaves": leaves,
         "max_bins": 64, "min_child_samples": 5, "reg_lambda": 1.0}
        for r, lr, leaves in itertools.product((50, 100, 200), (0.05, 0.1), (7, 31))
    ]
    queues = [("gb", deque(gb)), ("ert", deque(ert)), ("lgbm", deque(lgbm))]
    specs: list[CandidateSpec] = []
    index = 0
    while queues:
        alive = []
        for name, queue in queues:
            specs.append(CandidateSpec(index, name, queue.popleft(), base_seed + index))
            index += 1
            if queue:
                alive.append((name, queue))
        queues = alive
    return specs


def fit_candidate(spec: CandidateSpec, X, y, feature_names=None):
    """Fit a candidate's payload on the full arrays (no CV)."""
    if spec.algorithm == "gb":
        return fit_gbm(X, y, _gbm_params(spec.hyperparams, spec.seed), feature_names)
    if spec.algorithm == "ert":
        return fit_ert(X, y, _ert_params(spec.hyperparams, spec.seed), feature_names)
    if spec.algorithm == "lgbm":
        return fit_lgbm(X, y, _lgbm_params(spec.hyperparams, spec.seed), feature_names)
    raise ValueError(f"unknown algorithm tag {spec.algorithm!r}")


def train_final_model(entry: LeaderboardEntry, matrix: DesignMatrix, station: str,
                      trained_at: Optional[str] = None) -> TrainedModel:
    """Refit a leaderboard winner on the whole series and stamp its metadata."""
    X, y = matrix.to_arrays()
    payload = fit_candidate(entry.candidate, X, y, matrix.feature_names)
    if trained_at is None:
        trained_at = dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")
    metadata = ModelMetadata(
        station=station,
        seed=entry.candidate.seed,
        train_row_count=len(matrix),
        cv_nrmse=entry.mean_nrmse,
        cv_mape=entry.mean_mape,
        trained_at=trained_at,
    )
    return TrainedModel(entry.candidate.algorithm, payload, metadata)


@dataclass
class SelectionResult:
    registry: dict[str, LeaderboardEntry]
    algorithm_counts: dict[str, int]  # always carries all three tags


def select_best_per_station(leaderboards: Mapping[str, Leaderboard]) -> SelectionResult:
    """Top entry per station plus how often each family won.

    The counts partition the stations: their sum always equals the number
    of leaderboards given.
    """
    registry: dict[str, LeaderboardEntry] = {}
    counts = {name: 0 for name in ("gb", "ert", "lgbm")}
    for station, board in leaderboards.items():
        if not board.entries:
            raise EmptyLeaderboard(station)
        top = board.entries[0]
        registry[station] = top
        counts[top.candidate.algorithm] += 1
    return SelectionResult(registry=registry, algorithm_counts=counts)


LEADERBOARD_CSV_HEADER = (
    "rank,candidate_index,algorithm,mean_nrmse,mean_mape,mean_accuracy,fit_seconds"
)


def leaderboard_to_csv(board: Leaderboard) -> str:
    lines = [LEADERBOARD_CSV_HEADER]
    for rank, e in enumerate(board.entries, start=1):
        lines.append(
            f"{rank},{e.candidate.candidate_index},{e.candidate.algorithm},"
            f"{e.mean_nrmse!r},{e.mean_mape!r},{e.mean_accuracy!r},{e.fit_seconds!r}"
        )
    return "\n".join(lines) + "\n"


def leaderboard_to_json(board: Leaderboard) -> str:
    entries = []
    for rank, e in enumerate(board.entries, start=1):
        entries.append({
            "rank": rank,
            "candidate_index": e.candidate.candidate_index,
            "algorithm": e.candidate.algorithm,
            "seed": e.candidate.seed,
            "hyperparams": e.candidate.hyperparams,
            "mean_nrmse": e.mean_nrmse,
            "mean_mape": e.mean_mape,
            "mean_accuracy": e.mean_accuracy,
            "fit_seconds": e.fit_seconds,
        })
    return json.dumps({"station": board.station, "entries": entries})
