"""The three trained-model families, feature importance, and persistence.

Gradient boosting and the histogram booster are additive models
``f0 + learning_rate * sum(tree_m)``; the extra-trees ensemble averages
independently randomized trees fit on the full sample. A fitted model
serializes to a single JSON document whose floats use the shortest
round-trip decimal form, so save / load / save is byte-stable and reloaded
predictions are bit-identical.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from typing import IO, NamedTuple, Union

import numpy as np

from . import _kernels
from .errors import (
    EmptyInput,
    LengthMismatch,
    MalformedDocument,
    SchemaMismatch,
    SchemaVersionMismatch,
    UnknownAlgorithmTag,
)
from .ingest import FEATURE_NAMES, FeatureVector
from .trees import (
    BinnedMatrix,
    ExtraTreeParams,
    FlatTree,
    HistogramBins,
    HistTreeParams,
    RegressionTree,
    TreeParams,
    _fit_hist_with_train_values,
    _sorted_index,
    bin_matrix,
    build_histograms,
    fit_cart_with_train_values,
    fit_extra_tree,
)

SCHEMA_VERSION = 1
ALGORITHMS = ("gb", "ert", "lgbm")


@dataclass(frozen=True)
class GBMParams:
    n_rounds: int
    learning_rate: float
    tree_params: TreeParams
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")


@dataclass(frozen=True)
class ERTParams:
    n_trees: int
    k_features: int
    min_samples_split: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")


@dataclass(frozen=True)
class LGBMParams:
    n_rounds: int
    learning_rate: float
    max_bins: int
    max_leaves: int
    min_child_samples: int = 1
    reg_lambda: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.max_bins < 2:
            raise ValueError("max_bins must be >= 2")


@dataclass
class GBMModel:
    f0: float
    learning_rate: float
    trees: list[RegressionTree]
    feature_names: list[str]
    params: GBMParams


@dataclass
class ERTModel:
    trees: list[RegressionTree]
    feature_names: list[str]
    params: ERTParams


@dataclass
class LGBMModel:
    f0: float
    learning_rate: float
    bins: HistogramBins
    trees: list[RegressionTree]
    feature_names: list[str]
    params: LGBMParams


Payload = Union[GBMModel, ERTModel, LGBMModel]


@dataclass(frozen=True)
class ModelMetadata:
    station: str
    seed: int
    train_row_count: int
    cv_nrmse: float
    cv_mape: float
    trained_at: str  # ISO-8601


@dataclass
class TrainedModel:
    algorithm: str  # one of ALGORITHMS, matching the payload type
    payload: Payload
    metadata: ModelMetadata


class ImportanceResult(NamedTuple):
    shares: list[tuple[str, float]]  # in feature declaration order
    no_splits: bool


def _check_xy(X, targets) -> tuple[np.ndarray, np.ndarray]:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.ascontiguousarray(targets, dtype=np.float64)
    if X.shape[0] == 0:
        raise EmptyInput("need at least one training row")
    if X.shape[0] != y.shape[0]:
        raise LengthMismatch(X.shape[0], y.shape[0])
    return X, y


def _names_for(d: int, feature_names) -> list[str]:
    if feature_names is not None:
        if len(feature_names) != d:
            raise LengthMismatch(len(feature_names), d)
        return list(feature_names)
    if d == len(FEATURE_NAMES):
        return list(FEATURE_NAMES)
    return [f"x{i}" for i in range(d)]


def fit_gbm(X, targets, params: GBMParams, feature_names=None,
            sorted_idx=None) -> GBMModel:
    """Squared-loss gradient boosting over exact CART trees.

    f0 is the target mean; each round fits a tree to the residuals
    ``y - F`` and adds it scaled by the learning rate. A round whose tree
    is a single leaf of exactly 0.0 means the residuals carry nothing
    left to fit, so training stops there and the dead tree is dropped.
    """
    X, y = _check_xy(X, targets)
    names = _names_for(X.shape[1], feature_names)
    if sorted_idx is None:
        sorted_idx = _sorted_index(X)
    f0 = float(np.mean(y))
    current = np.full(y.shape[0], f0)
    trees: list[RegressionTree] = []
    for _ in range(params.n_rounds):
        residual = y - current
        tree, fitted = fit_cart_with_train_values(
            X, residual, params.tree_params, sorted_idx
        )
        if tree.n_leaves == 1 and tree.flat.value[0] == 0.0:
            break
        trees.append(tree)
        current += params.learning_rate * fitted
    return GBMModel(f0, params.learning_rate, trees, names, params)


def fit_ert(X, targets, params: ERTParams, feature_names=None) -> ERTModel:
    """Extra-trees ensemble on the full sample; per-tree seed = seed + tree index."""
    X, y = _check_xy(X, targets)
    names = _names_for(X.shape[1], feature_names)
    trees = [
        fit_extra_tree(
            X,
            y,
            ExtraTreeParams(
                k_features=params.k_features,
                min_samples_split=params.min_samples_split,
                rng_seed=params.seed + t,
            ),
        )
        for t in range(params.n_trees)
    ]
    return ERTModel(trees, names, params)


def fit_lgbm(X, targets, params: LGBMParams, feature_names=None,
             binned: BinnedMatrix | None = None) -> LGBMModel:
    """Histogram leaf-wise booster.

    Features are binned once; each round fits a leaf-wise tree to the
    gradients ``F - y`` and adds its outputs scaled by the learning rate.
    A tree whose every leaf outputs exactly 0.0 ends training early.
    """
    X, y = _check_xy(X, targets)
    names = _names_for(X.shape[1], feature_names)
    if binned is None:
        binned = bin_matrix(X, build_histograms(X, params.max_bins))
    hist_params = HistTreeParams(
        max_leaves=params.max_leaves,
        min_child_samples=params.min_child_samples,
        reg_lambda=params.reg_lambda,
    )
    f0 = float(np.mean(y))
    current = np.full(y.shape[0], f0)
    trees: list[RegressionTree] = []
    for _ in range(params.n_rounds):
        grad = current - y
        tree, fitted = _fit_hist_with_train_values(binned, grad, hist_params)
        flat = tree.flat
        leaf_values = flat.value[flat.feature == _kernels.LEAF]
        if np.all(leaf_values == 0.0):
            break
        trees.append(tree)
        current += params.learning_rate * fitted
    return LGBMModel(f0, params.learning_rate, binned.bins, trees, names, params)


def fit_payload(algorithm: str, X, targets, params, feature_names=None) -> Payload:
    """Dispatch a fit by algorithm tag; the single entry point for refits."""
    if algorithm == "gb":
        return fit_gbm(X, targets, params, feature_names)
    if algorithm == "ert":
        return fit_ert(X, targets, params, feature_names)
    if algorithm == "lgbm":
        return fit_lgbm(X, targets, params, feature_names)
    raise UnknownAlgorithmTag(algorithm)


def _payload_of(model: Union[TrainedModel, Payload]) -> Payload:
    return model.payload if isinstance(model, TrainedModel) else model


def predict_batch(model: Union[TrainedModel, Payload], X) -> np.ndarray:
    """Model predictions for a feature matrix, unclamped."""
    payload = _payload_of(model)
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != len(payload.feature_names):
        raise SchemaMismatch(
            f"model expects {len(payload.feature_names)} features, got {X.shape[1]}"
        )
    n = X.shape[0]
    if isinstance(payload, ERTModel):
        out = np.zeros(n)
        for tree in payload.trees:
            flat = tree.flat
            _kernels.accumulate_predict_flat(
                flat.feature, flat.threshold, flat.left, flat.right, flat.value,
                X, out, 1.0,
            )
        out /= len(payload.trees)
        return out
    out = np.full(n, payload.f0)
    for tree in payload.trees:
        flat = tree.flat
        _kernels.accumulate_predict_flat(
            flat.feature, flat.threshold, flat.left, flat.right, flat.value,
            X, out, payload.learning_rate,
        )
    return out


def predict(model: TrainedModel, x) -> float:
    """Predict one input; raises SchemaMismatch when the feature layout disagrees."""
    if isinstance(x, FeatureVector):
        if model.payload.feature_names != FEATURE_NAMES:
            raise SchemaMismatch(
                "model was not trained on the standard calendar features"
            )
        x = x.as_array()
    arr = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return float(predict_batch(model, arr)[0])


def feature_importance(model: Union[TrainedModel, Payload]) -> ImportanceResult:
    """Gain-based importance: per-feature sums of split gains, normalized to 1.

    A model with no splits at all yields all-zero shares and no_splits=True.
    """
    payload = _payload_of(model)
    totals = np.zeros(len(payload.feature_names))
    for tree in payload.trees:
        flat = tree.flat
        internal = flat.feature != _kernels.LEAF
        np.add.at(totals, flat.feature[internal], flat.gain[internal])
    grand = float(totals.sum())
    names = payload.feature_names
    if grand <= 0.0:
        return ImportanceResult([(name, 0.0) for name in names], no_splits=True)
    shares = totals / grand
    return ImportanceResult(
        [(name, float(s)) for name, s in zip(names, shares)], no_splits=False
    )


# --- persistence -------------------------------------------------------------


def _tree_to_doc(tree: RegressionTree) -> dict:
    flat = tree.flat
    built: list[dict | None] = [None] * flat.feature.shape[0]
    stack: list[tuple[int, bool]] = [(0, False)]
    while stack:
        node, expanded = stack.pop()
        if flat.feature[node] == _kernels.LEAF:
            built[node] = {"value": float(flat.value[node])}
        elif expanded:
            built[node] = {
                "feature": int(flat.feature[node]),
                "threshold": float(flat.threshold[node]),
                "gain": float(flat.gain[node]),
                "left": built[int(flat.left[node])],
                "right": built[int(flat.right[node])],
            }
        else:
            stack.append((node, True))
            stack.append((int(flat.left[node]), False))
            stack.append((int(flat.right[node]), False))
    assert built[0] is not None
    return built[0]


def _tree_from_doc(doc) -> RegressionTree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []
    gain: list[float] = []

    def alloc(node) -> int:
        if not isinstance(node, dict):
            raise MalformedDocument(f"tree node must be an object, got {type(node).__name__}")
        idx = len(feature)
        if "value" in node:
            feature.append(_kernels.LEAF)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(float(node["value"]))
            gain.append(0.0)
        elif "feature" in node and "threshold" in node:
            feature.append(int(node["feature"]))
            threshold.append(float(node["threshold"]))
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            gain.append(float(node.get("gain", 0.0)))
        else:
            raise MalformedDocument("tree node lacks both 'value' and 'feature'")
        return idx

    max_depth = 0
    alloc(doc)
    work: list[tuple[dict, int, int]] = [(doc, 0, 0)]
    while work:
        node, idx, depth = work.pop()
        if "value" in node:
            max_depth = max(max_depth, depth)
            continue
        if "left" not in node or "right" not in node:
            raise MalformedDocument("internal tree node lacks children")
        lid = alloc(node["left"])
        rid = alloc(node["right"])
        left[idx] = lid
        right[idx] = rid
        work.append((node["left"], lid, depth + 1))
        work.append((node["right"], rid, depth + 1))

    flat = FlatTree(
        np.array(feature, np.int64),
        np.array(threshold, np.float64),
        np.array(left, np.int64),
        np.array(right, np.int64),
        np.array(value, np.float64),
        np.array(gain, np.float64),
    )
    return RegressionTree.from_flat(flat, max_depth_reached=max_depth)


def _params_to_doc(model: TrainedModel) -> dict:
    p = model.payload.params
    if model.algorithm == "gb":
        return {
            "n_rounds": p.n_rounds,
            "learning_rate": p.learning_rate,
            "max_depth": p.tree_params.max_depth,
            "min_samples_leaf": p.tree_params.min_samples_leaf,
            "min_gain": p.tree_params.min_gain,
            "seed": p.seed,
        }
    if model.algorithm == "ert":
        return {
            "n_trees": p.n_trees,
            "k_features": p.k_features,
            "min_samples_split": p.min_samples_split,
            "seed": p.seed,
        }
    return {
        "n_rounds": p.n_rounds,
        "learning_rate": p.learning_rate,
        "max_bins": p.max_bins,
        "max_leaves": p.max_leaves,
        "min_child_samples": p.min_child_samples,
        "reg_lambda": p.reg_lambda,
        "seed": p.seed,
    }


def model_to_doc(model: TrainedModel) -> dict:
    doc: dict = {
        "schema_version": SCHEMA_VERSION,
        "algorithm": model.algorithm,
        "feature_names": list(model.payload.feature_names),
        "params": _params_to_doc(model),
    }
    payload = model.payload
    if isinstance(payload, (GBMModel, LGBMModel)):
        doc["f0"] = payload.f0
        doc["learning_rate"] = payload.learning_rate
    if isinstance(payload, LGBMModel):
        doc["bins"] = {
            "max_bins": payload.bins.max_bins,
            "edges": [list(e) for e in payload.bins.edges],
        }
    doc["trees"] = [_tree_to_doc(t) for t in payload.trees]
    m = model.metadata
    doc["metadata"] = {
        "station": m.station,
        "seed": m.seed,
        "train_row_count": m.train_row_count,
        "cv_nrmse": m.cv_nrmse,
        "cv_mape": m.cv_mape,
        "trained_at": m.trained_at,
    }
    return doc


def model_to_json(model: TrainedModel) -> str:
    return json.dumps(model_to_doc(model))


def model_from_doc(doc) -> TrainedModel:
    if not isinstance(doc, dict):
        raise MalformedDocument("model document must be a JSON object")
    if "schema_version" not in doc:
        raise MalformedDocument("model document lacks schema_version")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise SchemaVersionMismatch(doc["schema_version"], SCHEMA_VERSION)
    algorithm = doc.get("algorithm")
    if algorithm not in ALGORITHMS:
        raise UnknownAlgorithmTag(algorithm)
    try:
        names = [str(s) for s in doc["feature_names"]]
        params_doc = doc["params"]
        trees = [_tree_from_doc(t) for t in doc["trees"]]
        meta_doc = doc["metadata"]
        metadata = ModelMetadata(
            station=str(meta_doc["station"]),
            seed=int(meta_doc["seed"]),
            train_row_count=int(meta_doc["train_row_count"]),
            cv_nrmse=float(meta_doc["cv_nrmse"]),
            cv_mape=float(meta_doc["cv_mape"]),
            trained_at=str(meta_doc["trained_at"]),
        )
        if algorithm == "gb":
            params = GBMParams(
                n_rounds=int(params_doc["n_rounds"]),
                learning_rate=float(params_doc["learning_rate"]),
                tree_params=TreeParams(
                    max_depth=int(params_doc["max_depth"]),
                    min_samples_leaf=int(params_doc["min_samples_leaf"]),
                    min_gain=float(params_doc["min_gain"]),
                ),
                seed=int(params_doc["seed"]),
            )
            payload: Payload = GBMModel(
                f0=float(doc["f0"]),
                learning_rate=float(doc["learning_rate"]),
                trees=trees,
                feature_names=names,
                params=params,
            )
        elif algorithm == "ert":
            params = ERTParams(
                n_trees=int(params_doc["n_trees"]),
                k_features=int(params_doc["k_features"]),
                min_samples_split=int(params_doc["min_samples_split"]),
                seed=int(params_doc["seed"]),
            )
            payload = ERTModel(trees=trees, feature_names=names, params=params)
        else:
            params = LGBMParams(
                n_rounds=int(params_doc["n_rounds"]),
                learning_rate=float(params_doc["learning_rate"]),
                max_bins=int(params_doc["max_bins"]),
                max_leaves=int(params_doc["max_leaves"]),
                min_child_samples=int(params_doc["min_child_samples"]),
                reg_lambda=float(params_doc["reg_lambda"]),
                seed=int(params_doc["seed"]),
            )
            bins_doc = doc["bins"]
            bins = HistogramBins(
                edges=tuple(tuple(float(v) for v in e) for e in bins_doc["edges"]),
                max_bins=int(bins_doc["max_bins"]),
            )
            payload = LGBMModel(
                f0=float(doc["f0"]),
                learning_rate=float(doc["learning_rate"]),
                bins=bins,
                trees=trees,
                feature_names=names,
                params=params,
            )
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedDocument(f"model document is incomplete or ill-typed: {e}") from e
    return TrainedModel(algorithm=algorithm, payload=payload, metadata=metadata)


def model_from_json(text: str) -> TrainedModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedDocument(f"not valid JSON: {e}") from e
    return model_from_doc(doc)


def save_model(model: TrainedModel, sink: Union[str, os.PathLike, IO[str]]) -> None:
    """Write the model document; path targets are written atomically."""
    text = model_to_json(model)
    if hasattr(sink, "write"):
        sink.write(text)
        return
    path = os.fspath(sink)
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


def load_model(source: Union[str, os.PathLike, IO[str]]) -> TrainedModel:
    if hasattr(source, "read"):
        return model_from_json(source.read())
    with open(os.fspath(source), "r", encoding="utf-8") as f:
        return model_from_json(f.read())
