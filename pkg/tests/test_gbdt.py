import json
import zlib

import numpy as np
import pytest

from teachrec.gbdt import (
    GbdtModel,
    ModelFormatError,
    SchemaMismatchError,
    TrainParams,
    train,
)


def brute_force_best_stump(x, y, min_leaf=1):
    """Enumerate every midpoint threshold and minimize total SSE."""
    order = np.argsort(x)
    xs, ys = x[order], y[order]
    best = (np.inf, None)
    for i in range(len(xs) - 1):
        if xs[i] == xs[i + 1]:
            continue
        if i + 1 < min_leaf or len(xs) - i - 1 < min_leaf:
            continue
        thr = (xs[i] + xs[i + 1]) / 2
        left, right = ys[: i + 1], ys[i + 1 :]
        sse = ((left - left.mean()) ** 2).sum() + ((right - right.mean()) ** 2).sum()
        if sse < best[0]:
            best = (sse, thr)
    return best[1]


class TestTraining:
    def test_depth_zero_predicts_mean(self):
        model = train(
            np.array([[0.0], [1.0]]),
            [1.0, 3.0],
            TrainParams(n_trees=1, max_depth=0, min_samples_leaf=1, learning_rate=1.0),
        )
        for x in ([0.0], [100.0], [-5.0]):
            assert model.predict(x) == pytest.approx(2.0, abs=1e-12)

    def test_stump_recovers_brute_force_split(self):
        x = np.array([0.0, 1.0, 2.0, 3.0])
        y = np.array([-1.0, -1.0, 1.0, 1.0])
        expected_thr = brute_force_best_stump(x, y)
        model = train(
            x.reshape(-1, 1),
            y,
            TrainParams(n_trees=1, max_depth=1, min_samples_leaf=1, learning_rate=1.0),
        )
        tree = model.trees[0]
        assert tree.threshold[0] == pytest.approx(expected_thr)
        leaves = sorted(tree.value[tree.feature == -1])
        assert leaves == [-1.0, 1.0]
        assert model.training_mse[-1] == 0.0

    def test_stump_matches_oracle_on_random_data(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            x = rng.normal(size=30)
            y = rng.normal(size=30)
            expected = brute_force_best_stump(x, y)
            model = train(
                x.reshape(-1, 1),
                y,
                TrainParams(n_trees=1, max_depth=1, min_samples_leaf=1, learning_rate=1.0),
            )
            assert model.trees[0].threshold[0] == pytest.approx(expected)

    def test_exact_interpolation_with_enough_depth(self):
        rng = np.random.default_rng(0)
        x = np.arange(16.0).reshape(-1, 1)
        y = rng.normal(size=16)
        model = train(x, y, TrainParams(n_trees=1, max_depth=16, min_samples_leaf=1, learning_rate=1.0))
        assert model.training_mse[-1] == pytest.approx(0.0, abs=1e-24)

    def test_monotone_training_loss(self):
        rng = np.random.default_rng(42)
        X = rng.normal(size=(400, 6))
        y = X[:, 0] - 2 * X[:, 1] ** 2 + rng.normal(scale=0.2, size=400)
        model = train(X, y, TrainParams(n_trees=60, max_depth=3, min_samples_leaf=5))
        mse = np.array(model.training_mse)
        assert np.all(np.diff(mse) <= 0)

    def test_single_appended_tree_never_increases_sse(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(200, 4))
        y = rng.normal(size=200)
        for n in (1, 2, 5, 10):
            model = train(X, y, TrainParams(n_trees=n, max_depth=3, min_samples_leaf=4, learning_rate=1.0))
            mse = model.training_mse
            assert all(b <= a for a, b in zip(mse, mse[1:]))
            assert mse[0] <= np.mean((y - y.mean()) ** 2)

    def test_leaf_values_are_mean_routed_residuals(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(150, 3))
        y = rng.normal(size=150)
        model = train(X, y, TrainParams(n_trees=1, max_depth=2, min_samples_leaf=5, learning_rate=1.0))
        tree = model.trees[0]
        residual = y - y.mean()

        def route(x):
            i = 0
            while tree.feature[i] >= 0:
                i = tree.left[i] if x[tree.feature[i]] < tree.threshold[i] else tree.right[i]
            return i

        routed = {}
        for row, r in zip(X, residual):
            routed.setdefault(route(row), []).append(r)
        for leaf, values in routed.items():
            assert tree.value[leaf] == pytest.approx(np.mean(values), abs=1e-12)

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(300, 5))
        y = rng.normal(size=300)
        params = TrainParams(n_trees=10, max_depth=3, min_samples_leaf=5, subsample=0.7, rng_seed=11)
        a = train(X, y, params).to_bytes()
        b = train(X, y, params).to_bytes()
        assert a == b

    def test_tie_break_prefers_lowest_feature(self):
        # identical duplicated feature: split must use feature 0
        x = np.array([0.0, 1.0, 2.0, 3.0])
        X = np.column_stack([x, x])
        y = np.array([-1.0, -1.0, 1.0, 1.0])
        model = train(X, y, TrainParams(n_trees=1, max_depth=1, min_samples_leaf=1, learning_rate=1.0))
        assert model.trees[0].feature[0] == 0

    def test_batch_predict_matches_single(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(100, 4))
        y = rng.normal(size=100)
        model = train(X, y, TrainParams(n_trees=5, max_depth=3, min_samples_leaf=3))
        Xt = rng.normal(size=(50, 4))
        batch = model.predict_batch(Xt)
        singles = np.array([model.predict(row) for row in Xt])
        assert np.array_equal(batch, singles)

    def test_validation_errors(self):
        with pytest.raises(ValueError, match="empty"):
            train(np.zeros((0, 2)), [], TrainParams())
        with pytest.raises(ValueError, match="rows"):
            train(np.zeros((3, 2)), [1.0, 2.0], TrainParams())
        with pytest.raises(ValueError, match="finite"):
            train(np.zeros((2, 1)), [1.0, np.nan], TrainParams())
        with pytest.raises(ValueError):
            TrainParams(n_trees=0)
        with pytest.raises(ValueError):
            TrainParams(learning_rate=0.0)

    def test_min_samples_leaf_respected(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(60, 2))
        y = rng.normal(size=60)
        model = train(X, y, TrainParams(n_trees=3, max_depth=4, min_samples_leaf=25, learning_rate=1.0))
        for tree in model.trees:
            counts = _leaf_counts(tree, X)
            assert all(c >= 25 for c in counts.values())


def _leaf_counts(tree, X):
    counts = {}
    for row in X:
        i = 0
        while tree.feature[i] >= 0:
            i = tree.left[i] if row[tree.feature[i]] < tree.threshold[i] else tree.right[i]
        counts[i] = counts.get(i, 0) + 1
    return counts


class TestSerialization:
    def _model(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(200, 6))
        y = rng.normal(size=200)
        return train(X, y, TrainParams(n_trees=8, max_depth=3, min_samples_leaf=4), schema_fingerprint="fp123")

    def test_roundtrip_bit_exact_predictions(self):
        model = self._model()
        clone = GbdtModel.from_bytes(model.to_bytes())
        rng = np.random.default_rng(99)
        Xt = rng.normal(size=(1000, 6))
        assert np.array_equal(model.predict_batch(Xt), clone.predict_batch(Xt))

    def test_truncated_payload_fails_checksum(self):
        blob = self._model().to_bytes()
        with pytest.raises(ModelFormatError):
            GbdtModel.from_bytes(blob[: len(blob) // 2])

    def test_tampered_payload_fails_checksum(self):
        doc = json.loads(self._model().to_bytes())
        doc["payload"]["base_score"] += 0.25
        with pytest.raises(ModelFormatError, match="checksum"):
            GbdtModel.from_bytes(json.dumps(doc).encode())

    def test_version_mismatch_rejected(self):
        doc = json.loads(self._model().to_bytes())
        doc["payload"]["format_version"] = 99
        body = json.dumps(doc["payload"], separators=(",", ":"), sort_keys=True).encode()
        doc["crc32"] = zlib.crc32(body)
        with pytest.raises(ModelFormatError, match="version"):
            GbdtModel.from_bytes(json.dumps(doc).encode())

    def test_schema_fingerprint_checked_at_predict(self):
        model = self._model()
        x = np.zeros(6)
        assert model.predict(x, schema_fingerprint="fp123") == model.predict(x)
        with pytest.raises(SchemaMismatchError):
            model.predict(x, schema_fingerprint="other")
        with pytest.raises(SchemaMismatchError):
            model.predict_batch(np.zeros((1, 6)), schema_fingerprint="other")

    def test_fingerprint_survives_roundtrip(self):
        model = self._model()
        clone = GbdtModel.from_bytes(model.to_bytes())
        assert clone.schema_fingerprint == "fp123"


class TestPredictComposition:
    def test_additive_evaluation(self):
        # base 0.5, two stumps emitting +0.1 then -0.2, learning rate 0.5
        def stump(value):
            from teachrec.gbdt import RegressionTree

            return RegressionTree([-1], [0.0], [-1], [-1], [value])

        model = GbdtModel(base_score=0.5, learning_rate=0.5, trees=[stump(0.1), stump(-0.2)])
        assert model.predict([0.0]) == pytest.approx(0.45, abs=1e-15)

    def test_empty_model_predicts_base(self):
        model = GbdtModel(base_score=0.7, learning_rate=0.1)
        assert model.predict([1.0, 2.0]) == 0.7
