"""Gradient-boosted regression trees for conditional quantiles and propensity scores.

Both estimators follow the scikit-learn estimator protocol, so any
sklearn-compatible regressor/classifier can be swapped in wherever these
defaults are used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

PROPENSITY_CLIP = (0.01, 0.99)


def pinball_loss(y, pred, beta: float) -> float:
    """Mean check loss ``rho_beta(y - pred)``."""
    r = np.asarray(y, dtype=float) - np.asarray(pred, dtype=float)
    return float(np.mean(np.maximum(beta * r, (beta - 1) * r)))


@dataclass(frozen=True)
class _Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.intp)
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                return node
            rows = np.nonzero(inner)[0]
            f = feat[rows]
            go_left = X[rows, f] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


def _best_split(X: np.ndarray, g: np.ndarray, min_leaf: int):
    """Exact least-squares split over all features; returns (feature, threshold) or None."""
    m, d = X.shape
    if m < 2 * min_leaf:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    cs = np.cumsum(g[order], axis=0)
    total = cs[-1]
    k = np.arange(1, m)[:, None]  # rows in the left child
    left = cs[:-1]
    gain = left**2 / k + (total - left) ** 2 / (m - k) - total**2 / m
    valid = (k >= min_leaf) & (m - k >= min_leaf) & (xs[:-1] < xs[1:])
    gain = np.where(valid, gain, -np.inf)
    flat = int(np.argmax(gain))
    i, f = divmod(flat, d)
    if not gain[i, f] > 1e-12 * max(1.0, float(np.sum(g**2))):
        return None
    a, b = xs[i, f], xs[i + 1, f]
    thr = a + (b - a) / 2
    if not a <= thr < b:
        thr = a
    return f, thr


def _grow_tree(X, g, rows, max_depth, min_leaf, leaf_value) -> _Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    stack = [(new_node(), rows, 0)]
    while stack:
        node, idx, depth = stack.pop()
        found = None
        if depth < max_depth:
            found = _best_split(X[idx], g[idx], min_leaf)
        if found is None:
            value[node] = leaf_value(idx)
            continue
        f, thr = found
        mask = X[idx, f] <= thr
        ln, rn = new_node(), new_node()
        feature[node], threshold[node] = f, thr
        left[node], right[node] = ln, rn
        stack.append((rn, idx[~mask], depth + 1))
        stack.append((ln, idx[mask], depth + 1))
    return _Tree(
        np.array(feature, dtype=np.intp),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.intp),
        np.array(right, dtype=np.intp),
        np.array(value, dtype=float),
    )


class _BaseBoosting(BaseEstimator):
    def _check_params(self):
        if self.n_estimators < 0:
            raise ValueError("n_estimators must be >= 0")
        if self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("max_depth and min_samples_leaf must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must lie in (0, 1]")

    def _check_X(self, X):
        check_is_fitted(self, "estimators_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but {type(self).__name__} "
                f"was fitted with {self.n_features_in_}"
            )
        return X

    def _raw_predict(self, X):
        raw = np.full(len(X), self.init_)
        for tree in self.estimators_:
            raw += self.learning_rate * tree.predict(X)
        return raw

    def _boost(self, X, y, init, neg_gradient, leaf_value):
        rng = np.random.default_rng(self.random_state)
        n = len(y)
        raw = np.full(n, init)
        trees = []
        n_sub = max(1, int(round(self.subsample * n)))
        for _ in range(self.n_estimators):
            rows = np.arange(n) if n_sub == n else np.sort(rng.choice(n, n_sub, replace=False))
            g = neg_gradient(y, raw)
            tree = _grow_tree(
                X, g, rows, self.max_depth, self.min_samples_leaf,
                lambda idx: leaf_value(y[idx], raw[idx]),
            )
            raw += self.learning_rate * tree.predict(X)
            trees.append(tree)
            self._after_stage(y, raw)
        return trees


class QuantileGradientBoosting(RegressorMixin, _BaseBoosting):
    """Boosted regression trees minimizing the pinball loss at level ``quantile``.

    The ensemble starts from the unconditional ``quantile``-level of ``y``.
    Each stage fits a least-squares tree to the negative pinball gradient
    and then replaces every leaf value with the ``quantile``-level of the
    current residuals in that leaf.

    Parameters
    ----------
    quantile : float
        Target level in (0, 1).
    n_estimators, max_depth, learning_rate, min_samples_leaf, subsample
        Usual boosting hyperparameters.
    random_state : int, Generator or None
        Seeds row subsampling; irrelevant when ``subsample == 1``.
    """

    def __init__(self, quantile=0.5, n_estimators=200, max_depth=3, learning_rate=0.1,
                 min_samples_leaf=10, subsample=1.0, random_state=None):
        self.quantile = quantile
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_leaf = min_samples_leaf
        self.subsample = subsample
        self.random_state = random_state

    def fit(self, X, y):
        self._check_params()
        if not 0 < self.quantile < 1:
            raise ValueError(f"quantile must lie in (0, 1), got {self.quantile}")
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        beta = self.quantile
        self.n_features_in_ = X.shape[1]
        self.init_ = float(np.quantile(y, beta, method="inverted_cdf"))
        self.train_loss_ = [pinball_loss(y, np.full(len(y), self.init_), beta)]

        def neg_gradient(y, raw):
            return np.where(y > raw, beta, beta - 1.0)

        def leaf_value(y_leaf, raw_leaf):
            return float(np.quantile(y_leaf - raw_leaf, beta, method="inverted_cdf"))

        self.estimators_ = self._boost(X, y, self.init_, neg_gradient, leaf_value)
        return self

    def _after_stage(self, y, raw):
        self.train_loss_.append(pinball_loss(y, raw, self.quantile))

    def predict(self, X):
        return self._raw_predict(self._check_X(X))


class GradientBoostingPropensity(ClassifierMixin, _BaseBoosting):
    """Logistic-loss boosted trees estimating ``P(T = 1 | X)``.

    ``predict_proba`` clips the treated-class probability to ``clip``
    (default ``[0.01, 0.99]``) so that every inverse-propensity weight
    stays finite. Defaults are shallow, bagged stumps: deeper ensembles
    overfit treatment assignment and produce extreme inverse weights.
    """

    def __init__(self, n_estimators=100, max_depth=1, learning_rate=0.1,
                 min_samples_leaf=10, subsample=0.5, clip=PROPENSITY_CLIP,
                 random_state=None):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_leaf = min_samples_leaf
        self.subsample = subsample
        self.clip = clip
        self.random_state = random_state

    def fit(self, X, t):
        self._check_params()
        X, t = check_X_y(X, t, dtype=float)
        if not np.isin(t, (0, 1)).all():
            raise ValueError("treatment labels must be 0/1")
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        p0 = float(np.clip(t.mean(), 1e-6, 1 - 1e-6))
        self.init_ = float(np.log(p0 / (1 - p0)))

        def neg_gradient(t, raw):
            return t - _sigmoid(raw)

        def leaf_value(t_leaf, raw_leaf):
            p = _sigmoid(raw_leaf)
            num = np.sum(t_leaf - p)
            den = np.sum(p * (1 - p))
            return float(num / max(den, 1e-150))

        self.estimators_ = self._boost(X, t, self.init_, neg_gradient, leaf_value)
        return self

    def _after_stage(self, y, raw):
        pass

    def predict_proba(self, X):
        p = _sigmoid(self._raw_predict(self._check_X(X)))
        lo, hi = self.clip
        p = np.clip(p, lo, hi)
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] > 0.5).astype(int)


def _sigmoid(z):
    return 0.5 * (1 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def fit_quantile(X, y, quantile, random_state=None, **params) -> QuantileGradientBoosting:
    """Fit and return a :class:`QuantileGradientBoosting` model."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("empty data")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite values")
    return QuantileGradientBoosting(quantile=quantile, random_state=random_state, **params).fit(X, y)


def fit_propensity(X, t, random_state=None, **params) -> GradientBoostingPropensity:
    if len(t) == 0:
        raise ValueError("empty data")
    return GradientBoostingPropensity(random_state=random_state, **params).fit(X, t)


def propensity_function(propensity):
    """Normalize a propensity specification to a callable ``X -> e(X)``.

    Accepts a fitted classifier with ``predict_proba``, a callable, or a
    constant in (0, 1).
    """
    if hasattr(propensity, "predict_proba"):
        return lambda X: propensity.predict_proba(X)[:, 1]
    if callable(propensity):
        return lambda X: np.asarray(propensity(X), dtype=float)
    c = float(propensity)
    if not 0 < c < 1:
        raise ValueError(f"constant propensity must lie in (0, 1), got {c}")
    return lambda X: np.full(len(X), c)
