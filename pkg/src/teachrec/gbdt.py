"""Gradient-boosted regression trees with squared-error loss, from scratch.

The ensemble starts from the target mean and stage-wise fits greedy
variance-reducing trees to the current residuals; each leaf emits the mean
residual routed to it, scaled by the learning rate. Split search is exact:
candidate thresholds are midpoints between consecutive distinct sorted
feature values, and ties in gain break deterministically by lowest feature
index, then lowest threshold.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MODEL_FORMAT = "gbdt-regressor"
MODEL_FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Corrupted, truncated, or wrong-version model payload."""


class SchemaMismatchError(ValueError):
    """Model was trained against a different feature schema."""


@dataclass
class TrainParams:
    n_trees: int = 200
    max_depth: int = 4
    min_samples_leaf: int = 20
    learning_rate: float = 0.1
    rng_seed: int = 0
    subsample: float = 1.0  # < 1.0 enables per-tree row subsampling

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must be in (0, 1]")


class RegressionTree:
    """A binary regression tree stored as flat pre-order node arrays.

    ``feature[i] == -1`` marks node ``i`` as a leaf emitting ``value[i]``;
    otherwise rows with ``x[feature[i]] < threshold[i]`` descend to
    ``left[i]`` and the rest to ``right[i]``.
    """

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        idx = np.zeros(len(X), dtype=np.int64)
        while True:
            feat = self.feature[idx]
            live = feat >= 0
            if not live.any():
                break
            rows = np.flatnonzero(live)
            node = idx[rows]
            go_left = X[rows, self.feature[node]] < self.threshold[node]
            idx[rows] = np.where(go_left, self.left[node], self.right[node])
        return self.value[idx]

    def predict(self, x: np.ndarray) -> float:
        i = 0
        while self.feature[i] >= 0:
            i = self.left[i] if x[self.feature[i]] < self.threshold[i] else self.right[i]
        return float(self.value[i])


class _TreeBuilder:
    """Greedy SSE-minimizing splitter over a fixed presorted design matrix."""

    def __init__(self, X, residual, sorted_idx, max_depth, min_samples_leaf):
        self.X = X
        self.residual = residual
        self.sorted_idx = sorted_idx
        self.max_depth = max_depth
        self.min_leaf = min_samples_leaf
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def build(self, row_mask: np.ndarray) -> RegressionTree:
        self._grow(row_mask, depth=0)
        return RegressionTree(self.feature, self.threshold, self.left, self.right, self.value)

    def _add_leaf(self, mean: float) -> int:
        node = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(mean)
        return node

    def _grow(self, mask: np.ndarray, depth: int) -> int:
        res = self.residual[mask]
        n = len(res)
        mean = float(res.mean())
        if depth >= self.max_depth or n < 2 * self.min_leaf:
            return self._add_leaf(mean)

        best_gain = 0.0
        best: tuple[int, float, np.ndarray] | None = None
        total_sq = res.sum() ** 2 / n
        for f in range(self.X.shape[1]):
            order = self.sorted_idx[f][mask[self.sorted_idx[f]]]
            xs = self.X[order, f]
            csum = np.cumsum(self.residual[order])
            counts_left = np.arange(1, n, dtype=np.float64)
            sum_left = csum[:-1]
            sum_right = csum[-1] - sum_left
            valid = (
                (xs[1:] != xs[:-1])
                & (counts_left >= self.min_leaf)
                & (n - counts_left >= self.min_leaf)
            )
            if not valid.any():
                continue
            score = sum_left**2 / counts_left + sum_right**2 / (n - counts_left)
            score[~valid] = -np.inf
            i = int(np.argmax(score))  # first max = lowest threshold
            gain = float(score[i]) - total_sq
            if gain > best_gain:
                threshold = (xs[i] + xs[i + 1]) / 2.0
                if threshold <= xs[i]:  # midpoint rounded onto the left value
                    threshold = float(xs[i + 1])
                best_gain = gain
                best = (f, float(threshold), order[: i + 1])

        if best is None:
            return self._add_leaf(mean)

        f, threshold, left_rows = best
        left_mask = np.zeros_like(mask)
        left_mask[left_rows] = True
        right_mask = mask & ~left_mask

        node = len(self.feature)
        self.feature.append(f)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(mean)
        self.left[node] = self._grow(left_mask, depth + 1)
        self.right[node] = self._grow(right_mask, depth + 1)
        return node


@dataclass
class GbdtModel:
    base_score: float
    learning_rate: float
    trees: list[RegressionTree] = field(default_factory=list)
    schema_fingerprint: str = ""
    training_mse: list[float] = field(default_factory=list, repr=False)

    def _check_schema(self, schema_fingerprint: str | None):
        if schema_fingerprint is not None and schema_fingerprint != self.schema_fingerprint:
            raise SchemaMismatchError(
                f"model was trained for schema {self.schema_fingerprint!r}, "
                f"got {schema_fingerprint!r}"
            )

    def predict_batch(
        self, X: np.ndarray, schema_fingerprint: str | None = None
    ) -> np.ndarray:
        self._check_schema(schema_fingerprint)
        X = np.asarray(X, dtype=np.float64)
        out = np.full(len(X), self.base_score, dtype=np.float64)
        for tree in self.trees:
            out += self.learning_rate * tree.predict_batch(X)
        return out

    def predict(self, x: Sequence[float], schema_fingerprint: str | None = None) -> float:
        self._check_schema(schema_fingerprint)
        x = np.asarray(x, dtype=np.float64)
        out = self.base_score
        for tree in self.trees:
            out += self.learning_rate * tree.predict(x)
        return float(out)

    # -- persistence ---------------------------------------------------

    def to_bytes(self) -> bytes:
        payload = {
            "format": MODEL_FORMAT,
            "format_version": MODEL_FORMAT_VERSION,
            "schema_fingerprint": self.schema_fingerprint,
            "n_trees": len(self.trees),
            "learning_rate": self.learning_rate,
            "base_score": self.base_score,
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "value": t.value.tolist(),
                }
                for t in self.trees
            ],
        }
        body = _canonical(payload)
        doc = {"crc32": zlib.crc32(body), "payload": payload}
        return json.dumps(doc, separators=(",", ":"), sort_keys=True).encode("utf-8")

    @classmethod
    def from_bytes(cls, blob: bytes) -> "GbdtModel":
        try:
            doc = json.loads(blob.decode("utf-8"))
            crc = doc["crc32"]
            payload = doc["payload"]
        except (ValueError, KeyError, UnicodeDecodeError) as exc:
            raise ModelFormatError(f"unreadable model payload: {exc}") from exc
        if zlib.crc32(_canonical(payload)) != crc:
            raise ModelFormatError("model payload failed checksum verification")
        if payload.get("format") != MODEL_FORMAT:
            raise ModelFormatError(f"unknown model format {payload.get('format')!r}")
        if payload.get("format_version") != MODEL_FORMAT_VERSION:
            raise ModelFormatError(
                f"unsupported model format version {payload.get('format_version')!r}"
            )
        trees = [
            RegressionTree(t["feature"], t["threshold"], t["left"], t["right"], t["value"])
            for t in payload["trees"]
        ]
        if len(trees) != payload["n_trees"]:
            raise ModelFormatError("tree count does not match header")
        return cls(
            base_score=payload["base_score"],
            learning_rate=payload["learning_rate"],
            trees=trees,
            schema_fingerprint=payload["schema_fingerprint"],
        )


def _canonical(payload: dict) -> bytes:
    return json.dumps(payload, separators=(",", ":"), sort_keys=True).encode("utf-8")


def train(
    X: np.ndarray,
    y: Sequence[float],
    params: TrainParams | None = None,
    schema_fingerprint: str = "",
) -> GbdtModel:
    """Fit the boosted ensemble; deterministic given data, params, and seed.

    With ``subsample == 1.0`` every tree sees the full dataset, which makes
    the per-stage training MSE (recorded on the model) non-increasing.
    """
    params = params or TrainParams()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D matrix")
    y = np.asarray(y, dtype=np.float64)
    if len(X) != len(y):
        raise ValueError(f"X has {len(X)} rows but y has {len(y)} values")
    if len(y) == 0:
        raise ValueError("cannot train on an empty dataset")
    if not np.isfinite(y).all():
        raise ValueError("targets must be finite")
    if not np.isfinite(X).all():
        raise ValueError("features must be finite")

    n, n_features = X.shape
    sorted_idx = np.empty((n_features, n), dtype=np.int64)
    for f in range(n_features):
        sorted_idx[f] = np.argsort(X[:, f], kind="stable")

    rng = np.random.default_rng(params.rng_seed)
    model = GbdtModel(
        base_score=float(y.mean()),
        learning_rate=params.learning_rate,
        schema_fingerprint=schema_fingerprint,
    )
    predictions = np.full(n, model.base_score, dtype=np.float64)
    for _ in range(params.n_trees):
        residual = y - predictions
        if params.subsample < 1.0:
            k = max(1, int(round(params.subsample * n)))
            mask = np.zeros(n, dtype=bool)
            mask[rng.choice(n, size=k, replace=False)] = True
        else:
            mask = np.ones(n, dtype=bool)
        builder = _TreeBuilder(
            X, residual, sorted_idx, params.max_depth, params.min_samples_leaf
        )
        tree = builder.build(mask)
        predictions += params.learning_rate * tree.predict_batch(X)
        model.trees.append(tree)
        model.training_mse.append(float(np.mean((y - predictions) ** 2)))
    return model
