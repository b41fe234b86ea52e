"""Daily station ridership forecasting with deterministic tree ensembles.

The pipeline runs raw turnstile counts through cleaning and calendar
featurization, searches three tree-ensemble families under a rolling-origin
CV budget, and ships the per-station winner as a JSON model a thin CLI can
forecast and evaluate with. Every stage is seeded and reproducible.
"""

from .errors import RidecastError
from .ingest import (
    CleanObservation,
    DesignMatrix,
    FeatureVector,
    HolidayCalendar,
    RawRidershipRecord,
    StationSeries,
    build_design_matrix,
    clean,
    featurize,
    load_clean_csv,
    load_holidays,
    parse_ridership_csv,
    write_clean_csv,
)
from .trees import (
    ExtraTreeParams,
    HistTreeParams,
    TreeParams,
    best_exact_split,
    build_histograms,
    fit_cart,
    fit_extra_tree,
    fit_hist_tree_leafwise,
    predict_tree,
)
from .ensemble import (
    ERTParams,
    GBMParams,
    LGBMParams,
    ModelMetadata,
    TrainedModel,
    feature_importance,
    fit_ert,
    fit_gbm,
    fit_lgbm,
    load_model,
    predict,
    predict_batch,
    save_model,
)
from .select import (
    CandidateSpec,
    Leaderboard,
    SearchBudget,
    accuracy,
    default_grid,
    evaluate_candidate,
    make_rolling_splits,
    mape,
    nrmse,
    rmse,
    search,
    select_best_per_station,
    train_final_model,
)
from .forecast import (
    EvaluationReport,
    ForecastReport,
    SyntheticSpec,
    evaluate_holdout,
    forecast,
    generate_synthetic,
    importance_report,
)

__version__ = "0.1.0"

__all__ = [
    "RidecastError",
    "CleanObservation",
    "DesignMatrix",
    "FeatureVector",
    "HolidayCalendar",
    "RawRidershipRecord",
    "StationSeries",
    "build_design_matrix",
    "clean",
    "featurize",
    "load_clean_csv",
    "load_holidays",
    "parse_ridership_csv",
    "write_clean_csv",
    "ExtraTreeParams",
    "HistTreeParams",
    "TreeParams",
    "best_exact_split",
    "build_histograms",
    "fit_cart",
    "fit_extra_tree",
    "fit_hist_tree_leafwise",
    "predict_tree",
    "ERTParams",
    "GBMParams",
    "LGBMParams",
    "ModelMetadata",
    "TrainedModel",
    "feature_importance",
    "fit_ert",
    "fit_gbm",
    "fit_lgbm",
    "load_model",
    "predict",
    "predict_batch",
    "save_model",
    "CandidateSpec",
    "Leaderboard",
    "SearchBudget",
    "accuracy",
    "default_grid",
    "evaluate_candidate",
    "make_rolling_splits",
    "mape",
    "nrmse",
    "rmse",
    "search",
    "select_best_per_station",
    "train_final_model",
    "EvaluationReport",
    "ForecastReport",
    "SyntheticSpec",
    "evaluate_holdout",
    "forecast",
    "generate_synthetic",
    "importance_report",
    "__version__",
]
