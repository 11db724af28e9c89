import math

import numpy as np
import pytest

from conftest import diagonal_data, xor_corners
from rofigs.errors import ConfigError, SchemaError, TaskError
from rofigs.model import (
    FIGS,
    IMPURITY_FLOOR,
    MAX_SPLITS,
    NO_VALID_SPLIT,
    FitConfig,
    Internal,
    Leaf,
    TreeSumModel,
    fit,
    internal_nodes,
    leaves,
    predict_class,
    predict_proba,
    predict_raw,
    predict_tree,
    residuals,
)
from rofigs.split import ObliqueSplit


def stump(feature, threshold, left, right, weights=None):
    weights = weights or (1.0,)
    features = (feature,) if isinstance(feature, int) else tuple(feature)
    return Internal(ObliqueSplit(features, weights, threshold), Leaf(left), Leaf(right))


def two_tree_model():
    a = stump(0, 0.5, -0.2, 0.3)
    b = Internal(
        ObliqueSplit((0, 1), (1.0, 1.0), 1.0),
        stump(1, 0.25, 0.1, -0.1),
        Leaf(0.4),
    )
    return TreeSumModel([a, b], n_features=2), a, b


def greedy_cart_oracle(X, y, max_splits):
    """Best-first CART regression tree grown by exhaustive search.

    Returns the sequence of committed (feature, threshold) pairs.
    """

    def sse(v):
        return float(np.sum((v - v.mean()) ** 2))

    def best_split(rows):
        best = None
        for f in range(X.shape[1]):
            vals = np.unique(X[rows, f])
            for lo, hi in zip(vals[:-1], vals[1:]):
                t = (lo + hi) / 2.0
                left = X[rows, f] <= t
                dec = sse(y[rows]) - sse(y[rows][left]) - sse(y[rows][~left])
                key = (-dec, f, t)
                if best is None or key < best[0]:
                    best = (key, f, t, rows[left], rows[~left], dec)
        return best

    frontier = [np.arange(len(y))]
    sequence = []
    while len(sequence) < max_splits:
        options = []
        for i, rows in enumerate(frontier):
            if rows.size >= 2:
                b = best_split(rows)
                if b is not None and b[5] > 0:
                    options.append(((b[0][0], i), i, b))
        if not options:
            break
        _, i, b = min(options, key=lambda o: o[0])
        _, f, t, left, right, _ = b
        frontier[i : i + 1] = [left, right]
        sequence.append((f, t))
    return sequence


class TestPrediction:
    def test_single_leaf(self):
        model = TreeSumModel([Leaf(0.3)], n_features=2)
        np.testing.assert_array_equal(predict_raw(model, np.zeros((4, 2))), 0.3)

    def test_hand_built_sum(self):
        model, _, _ = two_tree_model()
        X = np.array([[0.2, 0.1], [0.9, 0.6], [0.4, 0.9]])
        # tree a: left, right, left; tree b: (0.3 <= 1 -> left, 0.1 <= .25 -> 0.1),
        # (1.5 > 1 -> 0.4), (1.3 > 1 -> 0.4)
        expected = [-0.2 + 0.1, 0.3 + 0.4, -0.2 + 0.4]
        np.testing.assert_allclose(predict_raw(model, X), expected, rtol=0, atol=1e-15)

    def test_shape_mismatch(self):
        model, _, _ = two_tree_model()
        with pytest.raises(SchemaError):
            predict_raw(model, np.zeros((2, 3)))

    def test_proba_and_class(self):
        model = TreeSumModel([Leaf(0.0)], n_features=1)
        assert predict_proba(model, np.zeros((1, 1)))[0] == 0.5
        assert predict_class(model, np.zeros((1, 1)))[0] == 0
        model = TreeSumModel([Leaf(0.5)], n_features=1)
        assert predict_proba(model, np.zeros((1, 1)))[0] == pytest.approx(1 / (1 + math.exp(-0.5)))
        assert predict_class(model, np.zeros((1, 1)))[0] == 1

    def test_negated_scores_flip_classes(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(size=(50, 2))
        model, a, b = two_tree_model()
        neg = TreeSumModel([_negate(a), _negate(b)], n_features=2)
        raw = predict_raw(model, X)
        flipped = predict_class(neg, X)
        nonzero = raw != 0
        np.testing.assert_array_equal(flipped[nonzero], 1 - predict_class(model, X)[nonzero])

    def test_regression_model_has_no_probabilities(self):
        model = TreeSumModel([Leaf(1.0)], task="regression", label_offset=0.0, n_features=1)
        with pytest.raises(TaskError):
            predict_proba(model, np.zeros((1, 1)))
        with pytest.raises(TaskError):
            predict_class(model, np.zeros((1, 1)))


def _negate(node):
    if isinstance(node, Leaf):
        return Leaf(-node.value)
    return Internal(node.split, _negate(node.left), _negate(node.right))


class TestResiduals:
    def test_empty_model(self):
        model = TreeSumModel([], n_features=1)
        v = np.array([0.5, -0.5, 0.25])
        np.testing.assert_array_equal(residuals(model, None, np.zeros((3, 1)), v), v)

    def test_leaf_means_center_residuals(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(size=(30, 1))
        yc = rng.normal(size=30)
        left = X[:, 0] <= 0.5
        model = TreeSumModel([stump(0, 0.5, yc[left].mean(), yc[~left].mean())], n_features=1)
        r = residuals(model, None, X, yc)
        assert abs(r[left].mean()) < 1e-12 and abs(r[~left].mean()) < 1e-12

    def test_exclude_one_tree(self):
        model, a, b = two_tree_model()
        X = np.random.default_rng(2).uniform(size=(20, 2))
        yc = np.linspace(-0.5, 0.5, 20)
        np.testing.assert_allclose(residuals(model, 0, X, yc), yc - predict_tree(b, X))
        np.testing.assert_allclose(residuals(model, 1, X, yc), yc - predict_tree(a, X))

    def test_exclude_out_of_range(self):
        model, _, _ = two_tree_model()
        with pytest.raises(IndexError):
            residuals(model, 5, np.zeros((1, 2)), np.zeros(1))


class TestFit:
    def test_constant_labels(self):
        X = np.random.default_rng(0).uniform(size=(20, 2))
        model, report = fit(X, FitConfig(min_imp_dec=0.01), y=np.zeros(20))
        assert len(model.trees) == 1 and model.n_splits == 0
        assert report.stop_reason == IMPURITY_FLOOR
        assert model.trees[0].value == -0.5
        model, _ = fit(X, FitConfig(min_imp_dec=0.01), y=np.zeros(20), task="regression")
        assert model.trees[0].value == 0.0

    def test_single_sample(self):
        model, report = fit(np.zeros((1, 2)), FitConfig(), y=np.array([1.0]))
        assert report.stop_reason == NO_VALID_SPLIT
        assert model.n_splits == 0 and model.trees[0].value == 0.5

    def test_beam_larger_than_d(self):
        with pytest.raises(ConfigError):
            fit(np.zeros((4, 2)), FitConfig(beam_size=3), y=np.array([0, 1, 0, 1.0]))

    @pytest.mark.parametrize("seed", range(3))
    def test_diagonal_one_split(self, seed):
        X, y = diagonal_data(seed)
        model, report = fit(X, FitConfig(beam_size=2, min_imp_dec=0.1, seed=seed), y=y)
        assert model.n_splits == 1
        np.testing.assert_array_equal(predict_class(model, X), y)

    def test_xor_axis_vs_oblique_root(self):
        X, y = xor_corners(0)
        axis, _ = fit(X, FitConfig(mode=FIGS, max_splits=1), y=y)
        assert axis.n_splits == 0
        _, report = fit(X, FitConfig(beam_size=2, max_splits=1, seed=0), y=y)
        assert report.iterations[0].impurity_decrease >= 5

    def test_max_splits(self):
        X, y = diagonal_data(1)
        model, report = fit(X, FitConfig(mode=FIGS, min_imp_dec=0.0, max_splits=3), y=y)
        assert report.stop_reason == MAX_SPLITS
        assert model.n_splits == 3

    def test_figs_default_budget(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(size=(200, 3))
        y = (rng.uniform(size=200) < 0.5).astype(float)
        model, report = fit(X, FitConfig(mode=FIGS, min_imp_dec=0.0), y=y)
        assert model.n_splits == 20 and report.stop_reason == MAX_SPLITS

    def test_report_records(self):
        X, y = xor_corners(2)
        model, report = fit(X, FitConfig(beam_size=2, seed=4), y=y)
        first = report.iterations[0]
        assert first.tree is None and first.n_candidates == 1
        # at iteration i with j trees there are at most i + j candidates per beam draw
        assert report.n_splits == model.n_splits


def test_serialization_round_trip():
    X, y = xor_corners(3)
    model, _ = fit(X, FitConfig(beam_size=2, seed=3), y=y)
    text = model.to_json()
    again = TreeSumModel.from_json(text)
    assert again.to_json() == text
    np.testing.assert_array_equal(predict_raw(again, X), predict_raw(model, X))
    assert list(model.to_dict()) == [
        "format_version",
        "task",
        "label_offset",
        "encoder",
        "scaler",
        "trees",
        "n_features",
        "fit_config",
        "seed",
    ]


def test_malformed_model_document():
    with pytest.raises(SchemaError):
        TreeSumModel.from_json("{not json")
    with pytest.raises(SchemaError):
        TreeSumModel.from_json('{"format_version": 1, "trees": []}')


def test_leaf_order_is_left_to_right():
    tree = Internal(ObliqueSplit((0,), (1.0,), 0.5), stump(0, 0.2, 1.0, 2.0), Leaf(3.0))
    assert [leaf.value for leaf in leaves(tree)] == [1.0, 2.0, 3.0]
    assert len(internal_nodes(tree)) == 2


def fitted_single_tree_splits(X, y, max_splits):
    cfg = FitConfig(mode=FIGS, min_imp_dec=0.0, max_splits=max_splits, max_trees=1)
    model, report = fit(X, cfg, y=y, task="regression")
    return model, report


def test_single_tree_matches_greedy_cart():
    rng = np.random.default_rng(9)
    for _ in range(25):
        n, d = int(rng.integers(2, 41)), int(rng.integers(1, 5))
        X = rng.uniform(size=(n, d))
        y = rng.normal(size=n)
        model, report = fitted_single_tree_splits(X, y, 6)
        expected = greedy_cart_oracle(X, y, 6)
        assert len(model.trees) == 1
        got = [(rec.split.features[0], rec.split.threshold) for rec in report.iterations]
        assert got == expected
