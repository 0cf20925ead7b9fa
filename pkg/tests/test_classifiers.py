import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from credfair.classifiers import (DEFAULTS, PERMITTED, Hyperparameters, ImportanceVector, ModelKind,
                                  TrainedModel, TrainingError, UnsupportedOperation, WidthMismatch,
                                  feature_importance, load_model, predict, predict_labels, predict_proba,
                                  save_model, train)
from credfair.classifiers.ensemble import AdaBoost, GradientBoosting, RandomForest
from credfair.classifiers.knn import KNN, KDTree, brute_neighbors
from credfair.classifiers.linear import LogisticRegression
from credfair.classifiers.linear import loss_and_grad as lr_loss_and_grad
from credfair.classifiers.mlp import ACTIVATIONS, layer_shapes
from credfair.classifiers.mlp import loss_and_grad as mlp_loss_and_grad
from credfair.classifiers.tree import Tree

from helpers import central_difference, matrix, max_relative_error

FAST = {
    ModelKind.RandomForest: {"n-estimators": 15},
    ModelKind.GradientBoosting: {"n-estimators": 20},
    ModelKind.AdaBoost: {"n-estimators": 20},
    ModelKind.MLP: {"max-iter": 30},
    ModelKind.LogisticRegression: {},
    ModelKind.KNN: {"algorithm": "kd-tree"},
    ModelKind.RandomBaseline: {},
}

# Hand trace of discrete AdaBoost on ten points x = 0..9 with labels + + + - - - + + + -.
# Round 1: best stump x <= 2.5 -> +1 misclassifies x = 6, 7, 8 at weight 0.1 each.
# Update: the 7 correct points end at 1/14 each, the 3 mistakes at 1/6 each.
# Round 2: best stump x <= 8.5 -> +1 misclassifies x = 3, 4, 5, i.e. 3/14.
ADA_TRACE = {
    "eps": [0.3, 3 / 14],
    "alpha": [0.5 * math.log(7 / 3), 0.5 * math.log(11 / 3)],
    "threshold": [2.5, 8.5],
    "weights_after_round1": [1 / 14] * 6 + [1 / 6] * 3 + [1 / 14],
}


def ada_fixture():
    x = np.arange(10, dtype=float)
    # second column splits 0..4 / 5..9; its best round-1 error is 0.4, so it never wins
    noise = (x >= 5).astype(float)
    y = np.array([1, 1, 1, 0, 0, 0, 1, 1, 1, 0])
    return np.column_stack([x, noise]), y


def toy_classification(rng, n=120, d=4):
    X = rng.normal(size=(n, d))
    y = (X[:, 0] + 0.5 * X[:, 1] + 0.3 * rng.normal(size=n) > 0).astype(int)
    return X, y


def test_permitted_names_count_and_rejection():
    assert sum(len(v) for v in PERMITTED.values()) == 25
    with pytest.raises(ValueError, match="unknown hyperparameter"):
        Hyperparameters(ModelKind.LogisticRegression, {"max-depth": 3})
    hp = Hyperparameters(ModelKind.RandomForest, {"n-estimators": 7})
    assert hp["n-estimators"] == 7 and hp["bootstrap"] == DEFAULTS[ModelKind.RandomForest]["bootstrap"]
    assert Hyperparameters.from_json(hp.to_json()) == hp


def test_lr_separable_weight_positive():
    X = np.array([[0.0], [1.0]] * 50)
    y = np.array([0, 1] * 50)
    model = train(Hyperparameters(ModelKind.LogisticRegression), matrix(X, y), seed=0)
    assert model.estimator.coef_[0] > 0
    assert predict(model, [1.0])[0] == 1 and predict(model, [0.0])[0] == 0


def test_lr_zero_weights_scores_half():
    est = LogisticRegression().load_state({"coef": [0.0, 0.0], "intercept": 0.0, "converged": True, "n_iter": 0})
    model = TrainedModel(ModelKind.LogisticRegression, Hyperparameters(ModelKind.LogisticRegression), est, 0,
                         ("a", "b"), {"a": (0, 1), "b": (1, 2)})
    assert predict(model, [3.0, -2.0]) == (1, 0.5)


def test_rf_three_tree_vote():
    def leaf(v):
        return Tree([-1], [0.0], [-1], [-1], [v], [0.0])

    rf = RandomForest(n_estimators=3)
    rf.trees, rf.n_features = [leaf(1.0), leaf(1.0), leaf(0.0)], 1
    model = TrainedModel(ModelKind.RandomForest, Hyperparameters(ModelKind.RandomForest), rf, 0, ("a",), {"a": (0, 1)})
    label, score = predict(model, [0.3])
    assert label == 1 and score == pytest.approx(2 / 3)


def test_knn_k1_query_on_training_point(rng):
    X, y = toy_classification(rng, 40)
    m = train(Hyperparameters(ModelKind.KNN, {"n-neighbors": 1}), matrix(X, y))
    i = int(np.flatnonzero(y == 1)[0])
    assert predict(m, X[i]) == (1, 1.0)


def test_random_baseline_is_seeded_coin(rng):
    X = rng.normal(size=(2000, 3))
    y = rng.integers(0, 2, 2000)
    a = train(Hyperparameters(ModelKind.RandomBaseline), matrix(X, y), seed=5)
    b = train(Hyperparameters(ModelKind.RandomBaseline), matrix(X, y), seed=5)
    c = train(Hyperparameters(ModelKind.RandomBaseline), matrix(X, y), seed=6)
    la, lb, lc = (predict_labels(m, X) for m in (a, b, c))
    assert np.array_equal(la, lb) and not np.array_equal(la, lc)
    assert abs(la.mean() - 0.5) < 0.05
    # ignores data: single-class input is fine
    train(Hyperparameters(ModelKind.RandomBaseline), matrix(X[:3], [1, 1, 1]))


@pytest.mark.parametrize("kind", [k for k in ModelKind if k is not ModelKind.RandomBaseline])
def test_single_class_rejected(kind):
    X = np.random.default_rng(0).normal(size=(10, 2))
    with pytest.raises(TrainingError, match="single class"):
        train(Hyperparameters(kind, FAST[kind]), matrix(X, [1] * 10))


def test_width_mismatch_names_widths(rng):
    X, y = toy_classification(rng)
    m = train(Hyperparameters(ModelKind.LogisticRegression), matrix(X, y))
    with pytest.raises(WidthMismatch, match="4.*3"):
        predict(m, [0.0, 1.0, 2.0])


@pytest.mark.parametrize("kind", list(ModelKind))
def test_seed_determinism_bounds_and_persistence(kind, rng, tmp_path):
    X, y = toy_classification(rng)
    data = matrix(X, y)
    hp = Hyperparameters(kind, FAST[kind])
    a, b = train(hp, data, seed=11), train(hp, data, seed=11)
    probe = rng.normal(size=(50, X.shape[1])) * 3
    pa, pb = predict_proba(a, probe), predict_proba(b, probe)
    assert np.array_equal(pa, pb)
    assert np.all((pa >= 0) & (pa <= 1))
    loaded = load_model(save_model(a, tmp_path / "m.json"))
    assert np.array_equal(predict_proba(loaded, probe), pa)
    assert loaded.hyperparameters == a.hyperparameters and loaded.column_names == a.column_names


def test_lr_l1_newton_rejected():
    with pytest.raises(TrainingError):
        LogisticRegression(penalty="l1", solver="newton")


def test_lr_l1_gradient_descent_sparsifies(rng):
    X, y = toy_classification(rng, 200, 6)
    est = LogisticRegression(C=0.1, penalty="l1", solver="gradient-descent").fit(X, y)
    assert np.sum(est.coef_ == 0.0) >= 3 and est.coef_[0] > 0


def test_lr_solvers_agree_on_l2(rng):
    X, y = toy_classification(rng, 150, 3)
    a = LogisticRegression(C=1.0, solver="newton").fit(X, y)
    b = LogisticRegression(C=1.0, solver="gradient-descent").fit(X, y)
    assert a.converged and b.converged
    assert np.allclose(a.coef_, b.coef_, atol=1e-3)


def test_mlp_nonconvergence_is_flagged(rng):
    X, y = toy_classification(rng)
    m = train(Hyperparameters(ModelKind.MLP, {"max-iter": 1}), matrix(X, y))
    assert not m.converged and m.warnings


def _lr_config(seed):
    r = np.random.default_rng(seed)
    n, d = int(r.integers(5, 30)), int(r.integers(1, 6))
    X = r.normal(size=(n, d))
    y = r.integers(0, 2, n).astype(float)
    params = r.normal(size=d + 1)
    C = float(10 ** r.uniform(-2, 2))
    return X, y, params, C


def _mlp_config(seed):
    r = np.random.default_rng(1000 + seed)
    n, d = int(r.integers(4, 20)), int(r.integers(1, 5))
    hidden = tuple(int(h) for h in r.integers(2, 6, size=int(r.integers(1, 3))))
    activation = sorted(ACTIVATIONS)[seed % len(ACTIVATIONS)]
    X = r.normal(size=(n, d))
    y = r.integers(0, 2, n).astype(float)
    size = sum(i * o + o for i, o in layer_shapes(d, hidden))
    return X, y, hidden, activation, float(10 ** r.uniform(-4, 0)), r.normal(size=size) * 0.7


@pytest.mark.parametrize("seed", range(25))
def test_lr_gradient_matches_finite_differences(seed):
    X, y, params, C = _lr_config(seed)
    _, grad = lr_loss_and_grad(params, X, y, C)
    numeric = central_difference(lambda p: lr_loss_and_grad(p, X, y, C)[0], params)
    assert max_relative_error(grad, numeric) < 1e-4


@pytest.mark.parametrize("seed", range(25))
def test_mlp_gradient_matches_finite_differences(seed):
    X, y, hidden, activation, alpha, flat = _mlp_config(seed)
    _, grad = mlp_loss_and_grad(flat, X, y, hidden, activation, alpha)
    numeric = central_difference(lambda p: mlp_loss_and_grad(p, X, y, hidden, activation, alpha)[0], flat)
    assert max_relative_error(grad, numeric) < 1e-4


def test_adaboost_hand_trace():
    X, y = ada_fixture()
    ada = AdaBoost(n_estimators=2).fit(X, y)
    for r in range(2):
        assert abs(ada.errors[r] - ADA_TRACE["eps"][r]) < 1e-9
        assert abs(ada.alphas[r] - ADA_TRACE["alpha"][r]) < 1e-9
        assert ada.stumps[r][0] == 0
        assert ada.stumps[r][1] == ADA_TRACE["threshold"][r]
    assert np.allclose(ada.weight_history[0], ADA_TRACE["weights_after_round1"], atol=1e-12)
    assert ADA_TRACE["alpha"][0] == pytest.approx(0.4236, abs=1e-4)


def test_adaboost_weights_normalized_each_round(rng):
    X, y = toy_classification(rng)
    ada = AdaBoost(n_estimators=30).fit(X, y)
    for w in ada.weight_history:
        assert abs(w.sum() - 1.0) < 1e-9


@pytest.mark.parametrize("p", [1, 2, 3])
@pytest.mark.parametrize("k", [1, 5, 12])
def test_kdtree_matches_brute_force(p, k):
    r = np.random.default_rng(p * 100 + k)
    X = r.normal(size=(300, 4))
    # duplicates and a coarse grid create distance ties
    X[:60] = np.round(X[:60])
    X[60:80] = X[:20]
    tree = KDTree(X, leaf_size=7)
    for q in np.vstack([r.normal(size=(90, 4)), np.round(r.normal(size=(10, 4)))]):
        idx_t, d_t = tree.query(q, k, p)
        idx_b, d_b = brute_neighbors(X, q, k, p)
        assert np.array_equal(idx_t, idx_b)
        assert np.allclose(d_t, d_b)


@pytest.mark.parametrize("weights", ["uniform", "distance"])
def test_knn_kdtree_predictions_equal_brute(weights):
    r = np.random.default_rng(3)
    X = (r.random(size=(250, 6)) > 0.5).astype(float)  # one-hot-like data, many ties
    y = r.integers(0, 2, 250)
    q = (r.random(size=(100, 6)) > 0.5).astype(float)
    brute = KNN(7, weights, "brute").fit(X, y)
    kd = KNN(7, weights, "kd-tree", leaf_size=5).fit(X, y)
    assert np.array_equal(brute.predict_proba(q), kd.predict_proba(q))


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("lr", [0.05, 0.1])
def test_gradient_boosting_loss_non_increasing(seed, lr):
    r = np.random.default_rng(seed)
    X, y = toy_classification(r, 80, 3)
    gb = GradientBoosting(n_estimators=40, l_rate=lr, max_depth=2).fit(X, y, seed=seed)
    curve = np.array(gb.loss_curve)
    assert len(curve) == 41
    assert np.all(np.diff(curve) <= 1e-12)


def test_importance_single_determining_feature():
    r = np.random.default_rng(0)
    a = r.random(200)
    y = (a > 0.5).astype(int)
    X = np.column_stack([a, np.full(200, 0.25)])
    m = train(Hyperparameters(ModelKind.RandomForest, {"n-estimators": 10}), matrix(X, y, ["a", "b"]))
    imp = feature_importance(m)
    assert imp.scores["a"] == pytest.approx(1.0) and imp.scores["b"] == 0.0


def test_importance_lr_coefficient_magnitudes():
    est = LogisticRegression().load_state({"coef": [2.0, -1.0], "intercept": 0.3, "converged": True, "n_iter": 1})
    m = TrainedModel(ModelKind.LogisticRegression, Hyperparameters(ModelKind.LogisticRegression), est, 0,
                     ("a", "b"), {"a": (0, 1), "b": (1, 2)})
    imp = feature_importance(m)
    assert imp.scores == pytest.approx({"a": 2 / 3, "b": 1 / 3})


@pytest.mark.parametrize("kind", [ModelKind.KNN, ModelKind.MLP, ModelKind.RandomBaseline])
def test_importance_unsupported(kind, rng):
    X, y = toy_classification(rng)
    with pytest.raises(UnsupportedOperation):
        feature_importance(train(Hyperparameters(kind, FAST[kind]), matrix(X, y)))


@pytest.mark.parametrize("kind", [ModelKind.RandomForest, ModelKind.GradientBoosting,
                                  ModelKind.AdaBoost, ModelKind.LogisticRegression])
def test_canonical_importance_vector_shape(kind, encoded):
    train_m, _ = encoded
    imp = feature_importance(train(Hyperparameters(kind, FAST[kind]), train_m, seed=0))
    assert len(imp.scores) == 20
    assert all(v >= 0 for v in imp.scores.values())
    assert abs(sum(imp.scores.values()) - 1.0) < 1e-9


def test_importance_vector_validation():
    with pytest.raises(ValueError):
        ImportanceVector({"a": 0.7, "b": 0.7})
    with pytest.raises(ValueError):
        ImportanceVector({"a": 1.2, "b": -0.2})


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4))
def test_scores_bounded_for_extreme_inputs(row):
    r = np.random.default_rng(1)
    X, y = toy_classification(r, 60, 4)
    for kind in (ModelKind.LogisticRegression, ModelKind.GradientBoosting, ModelKind.AdaBoost, ModelKind.MLP):
        m = _cached_model(kind, X, y)
        s = predict(m, row)[1]
        assert 0.0 <= s <= 1.0


_MODELS = {}


def _cached_model(kind, X, y):
    if kind not in _MODELS:
        _MODELS[kind] = train(Hyperparameters(kind, FAST[kind]), matrix(X, y), seed=0)
    return _MODELS[kind]
