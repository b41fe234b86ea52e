import json

import numpy as np
import pytest

from ridecast.ensemble import (
    ERTParams,
    GBMParams,
    LGBMParams,
    ModelMetadata,
    TrainedModel,
    feature_importance,
    fit_ert,
    fit_gbm,
    fit_lgbm,
    fit_payload,
    load_model,
    model_from_json,
    model_to_json,
    predict,
    predict_batch,
    save_model,
)
from ridecast.errors import (
    MalformedDocument,
    SchemaMismatch,
    SchemaVersionMismatch,
    UnknownAlgorithmTag,
)
from ridecast.ingest import FEATURE_NAMES, FeatureVector
from ridecast.trees import TreeParams, fit_extra_tree, ExtraTreeParams


def make_metadata(station="st01"):
    return ModelMetadata(station, 7, 42, 0.1234, 3.5, "2025-11-03T10:00:00+00:00")


def random_dyadic_instance(rng, max_features=6):
    """Power-of-two row counts make the target mean exactly representable,
    so residuals and gradients stay exactly summable in any order."""
    n = int(rng.choice([4, 8, 16, 32, 64]))
    d = int(rng.integers(1, max_features + 1))
    X = rng.integers(0, 41, size=(n, d)).astype(np.float64)
    y = rng.integers(-100, 101, size=n).astype(np.float64)
    return X, y


# --- gradient boosting -------------------------------------------------------


def test_gbm_one_round_full_rate_worked_example():
    model = fit_gbm(
        [[1.0], [2.0], [3.0], [4.0]],
        [1.0, 2.0, 3.0, 4.0],
        GBMParams(n_rounds=1, learning_rate=1.0, tree_params=TreeParams(max_depth=1)),
    )
    assert model.f0 == 2.5
    assert len(model.trees) == 1
    out = predict_batch(model, [[1.0], [2.0], [3.0], [4.0]])
    assert list(out) == [1.5, 1.5, 3.5, 3.5]


@pytest.mark.parametrize("rate", [0.1, 0.5, 1.0])
def test_gbm_training_mse_is_monotone_in_rounds(rate):
    rng = np.random.default_rng(round(rate * 1000))
    for _ in range(20):
        X, y = random_dyadic_instance(rng)
        model = fit_gbm(X, y, GBMParams(
            n_rounds=12, learning_rate=rate, tree_params=TreeParams(max_depth=3),
        ))
        current = np.full(X.shape[0], model.f0)
        previous = float(np.mean((y - current) ** 2))
        for tree in model.trees:
            current = current + rate * tree.flat.predict(X)
            mse = float(np.mean((y - current) ** 2))
            assert mse <= previous * (1.0 + 1e-12) + 1e-12
            previous = mse


def test_gbm_stops_when_residuals_are_exhausted():
    X = [[1.0], [2.0], [3.0], [4.0]]
    y = [5.0, 5.0, 5.0, 5.0]
    model = fit_gbm(X, y, GBMParams(
        n_rounds=10, learning_rate=1.0, tree_params=TreeParams(max_depth=2),
    ))
    assert model.trees == []  # f0 already fits a constant target exactly
    assert list(predict_batch(model, X)) == [5.0] * 4

    # distinct rows, full rate, enough depth: one round zeroes the residuals
    model = fit_gbm(X, [1.0, 2.0, 3.0, 4.0], GBMParams(
        n_rounds=10, learning_rate=1.0, tree_params=TreeParams(max_depth=3),
    ))
    assert len(model.trees) == 1


# --- extra trees -------------------------------------------------------------


def test_ert_is_the_mean_of_its_member_trees():
    rng = np.random.default_rng(5150)
    X, y = random_dyadic_instance(rng)
    params = ERTParams(n_trees=7, k_features=3, seed=20)
    model = fit_ert(X, y, params)
    assert len(model.trees) == 7
    out = predict_batch(model, X)
    per_tree = np.stack([t.flat.predict(X) for t in model.trees])
    assert np.allclose(out, per_tree.mean(axis=0), rtol=1e-12, atol=0)


def test_ert_member_seeds_are_seed_plus_tree_index():
    rng = np.random.default_rng(5151)
    X, y = random_dyadic_instance(rng)
    model = fit_ert(X, y, ERTParams(n_trees=4, k_features=2, seed=100))
    for t, tree in enumerate(model.trees):
        expected = fit_extra_tree(X, y, ExtraTreeParams(
            k_features=2, min_samples_split=2, rng_seed=100 + t,
        ))
        assert tree == expected


# --- histogram boosting ------------------------------------------------------


def test_lgbm_stump_equals_exact_gradient_boosting_stump():
    """With every distinct value given its own bin, one leaf-wise tree with a
    two-leaf budget must reproduce the exact depth-one CART round bit for bit:
    same partition, same leaf means, same predictions."""
    rng = np.random.default_rng(2600)
    for _ in range(25):
        X, y = random_dyadic_instance(rng)
        gb = fit_gbm(X, y, GBMParams(
            n_rounds=1, learning_rate=1.0, tree_params=TreeParams(max_depth=1),
        ))
        lgbm = fit_lgbm(X, y, LGBMParams(
            n_rounds=1, learning_rate=1.0, max_bins=256, max_leaves=2,
            min_child_samples=1, reg_lambda=0.0,
        ))
        assert np.array_equal(predict_batch(gb, X), predict_batch(lgbm, X))


def test_lgbm_stops_on_zero_output_trees():
    X = [[1.0], [2.0], [3.0], [4.0]]
    model = fit_lgbm(X, [3.0, 3.0, 3.0, 3.0], LGBMParams(
        n_rounds=10, learning_rate=1.0, max_bins=8, max_leaves=4,
    ))
    assert model.trees == []
    assert list(predict_batch(model, X)) == [3.0] * 4


def test_lgbm_learning_rate_scales_the_update():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    y = np.array([-1.0, -1.0, 1.0, 1.0])
    model = fit_lgbm(X, y, LGBMParams(
        n_rounds=1, learning_rate=0.1, max_bins=8, max_leaves=2,
    ))
    out = predict_batch(model, X)
    # f0 = 0; the stump outputs +-1 scaled by the rate
    assert np.allclose(out, [-0.1, -0.1, 0.1, 0.1], rtol=0, atol=1e-15)


# --- prediction interface ----------------------------------------------------


def make_calendar_model():
    rng = np.random.default_rng(321)
    X = rng.integers(0, 30, size=(32, len(FEATURE_NAMES))).astype(np.float64)
    y = rng.integers(0, 50, size=32).astype(np.float64)
    payload = fit_gbm(X, y, GBMParams(
        n_rounds=3, learning_rate=0.5, tree_params=TreeParams(max_depth=3),
    ))
    return TrainedModel("gb", payload, make_metadata()), X, y


def test_predict_accepts_feature_vectors_and_arrays():
    model, X, _ = make_calendar_model()
    fv = FeatureVector(*(int(v) for v in X[0]))
    assert predict(model, fv) == predict(model, X[0])


def test_predict_rejects_wrong_width():
    model, X, _ = make_calendar_model()
    with pytest.raises(SchemaMismatch):
        predict(model, X[0][:5])
    with pytest.raises(SchemaMismatch):
        predict_batch(model, X[:, :5])


def test_predict_is_unclamped():
    X = [[1.0], [2.0]]
    payload = fit_gbm(X, [-10.0, -20.0], GBMParams(
        n_rounds=2, learning_rate=1.0, tree_params=TreeParams(max_depth=1),
    ))
    model = TrainedModel("gb", payload, make_metadata())
    assert predict(model, [1.0]) < 0.0


def test_fit_payload_rejects_unknown_tags():
    with pytest.raises(UnknownAlgorithmTag):
        fit_payload("svm", [[1.0]], [1.0], None)


# --- feature importance ------------------------------------------------------


def test_importance_shares_are_normalized_and_nonnegative():
    model, _, _ = make_calendar_model()
    result = feature_importance(model)
    assert not result.no_splits
    names = [name for name, _ in result.shares]
    assert names == FEATURE_NAMES
    shares = [s for _, s in result.shares]
    assert all(s >= 0.0 for s in shares)
    assert abs(sum(shares) - 1.0) <= 1e-9


def test_importance_concentrates_on_the_only_informative_feature():
    rng = np.random.default_rng(31)
    n = 64
    X = np.zeros((n, 3))
    X[:, 1] = rng.permutation(n)  # features 0 and 2 are constant
    y = X[:, 1] * 2.0 + 1.0
    payload = fit_gbm(X, y, GBMParams(
        n_rounds=4, learning_rate=1.0, tree_params=TreeParams(max_depth=4),
    ))
    result = feature_importance(TrainedModel("gb", payload, make_metadata()))
    assert result.shares[1][1] == 1.0
    assert result.shares[0][1] == 0.0 and result.shares[2][1] == 0.0


def test_importance_flags_models_with_no_splits():
    payload = fit_gbm([[1.0], [2.0]], [5.0, 5.0], GBMParams(
        n_rounds=3, learning_rate=0.5, tree_params=TreeParams(max_depth=2),
    ))
    result = feature_importance(TrainedModel("gb", payload, make_metadata()))
    assert result.no_splits
    assert all(s == 0.0 for _, s in result.shares)


# --- persistence -------------------------------------------------------------


def models_of_every_family():
    rng = np.random.default_rng(47)
    X = rng.integers(0, 25, size=(48, 4)).astype(np.float64)
    y = rng.integers(0, 200, size=48).astype(np.float64)
    names = [f"x{i}" for i in range(4)]
    return [
        TrainedModel("gb", fit_gbm(X, y, GBMParams(
            n_rounds=4, learning_rate=0.3,
            tree_params=TreeParams(max_depth=3), seed=1,
        ), names), make_metadata("a")),
        TrainedModel("ert", fit_ert(X, y, ERTParams(
            n_trees=5, k_features=2, min_samples_split=4, seed=2,
        ), names), make_metadata("b")),
        TrainedModel("lgbm", fit_lgbm(X, y, LGBMParams(
            n_rounds=4, learning_rate=0.2, max_bins=16, max_leaves=5,
            min_child_samples=2, reg_lambda=0.5, seed=3,
        ), names), make_metadata("c")),
    ], X


def test_save_load_save_is_byte_identical_for_all_families():
    models, _ = models_of_every_family()
    for model in models:
        first = model_to_json(model)
        second = model_to_json(model_from_json(first))
        assert first == second


def test_reloaded_models_predict_bit_identically():
    models, X = models_of_every_family()
    rng = np.random.default_rng(48)
    probes = rng.uniform(-10.0, 35.0, size=(64, 4))
    for model in models:
        reloaded = model_from_json(model_to_json(model))
        assert np.array_equal(predict_batch(model, probes),
                              predict_batch(reloaded, probes))
        assert np.array_equal(predict_batch(model, X), predict_batch(reloaded, X))


def test_round_trip_preserves_params_and_metadata():
    models, _ = models_of_every_family()
    for model in models:
        reloaded = model_from_json(model_to_json(model))
        assert reloaded.algorithm == model.algorithm
        assert reloaded.metadata == model.metadata
        assert reloaded.payload.params == model.payload.params
        assert reloaded.payload.feature_names == model.payload.feature_names


def test_save_model_writes_path_atomically(tmp_path):
    models, _ = models_of_every_family()
    target = tmp_path / "m.model.json"
    save_model(models[0], target)
    assert [p.name for p in tmp_path.iterdir()] == ["m.model.json"]
    assert model_to_json(load_model(target)) == model_to_json(models[0])


def test_load_rejects_malformed_documents():
    models, _ = models_of_every_family()
    text = model_to_json(models[0])
    with pytest.raises(MalformedDocument):
        model_from_json(text[: len(text) // 2])  # truncated JSON
    with pytest.raises(MalformedDocument):
        model_from_json(json.dumps([1, 2, 3]))  # not an object
    doc = json.loads(text)
    del doc["trees"]
    with pytest.raises(MalformedDocument):
        model_from_json(json.dumps(doc))  # required field missing


def test_load_rejects_wrong_schema_version_and_unknown_algorithm():
    models, _ = models_of_every_family()
    doc = json.loads(model_to_json(models[0]))
    doc["schema_version"] = 2
    with pytest.raises(SchemaVersionMismatch):
        model_from_json(json.dumps(doc))
    doc["schema_version"] = 1
    doc["algorithm"] = "svm"
    with pytest.raises(UnknownAlgorithmTag) as err:
        model_from_json(json.dumps(doc))
    assert err.value.tag == "svm"
