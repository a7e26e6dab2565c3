"""Split conformal calibration: weighted CQR and conformal inference for
interval-valued outcomes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .core import Interval, QuantilePair, SplitIndices, quantile_with_inf_atom, split
from .learners import QuantileGradientBoosting


@dataclass(frozen=True)
class ConformalResult:
    interval: Interval
    eta: float
    p_inf: float


def cqr_score(y, q_lo, q_hi):
    """Non-conformity ``max(q_lo - y, y - q_hi)``; vectorized."""
    y, q_lo, q_hi = (np.asarray(a, dtype=float) for a in (y, q_lo, q_hi))
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(q_lo)) and np.all(np.isfinite(q_hi))):
        raise ValueError("cqr_score requires finite inputs")
    out = np.maximum(q_lo - y, y - q_hi)
    return float(out) if out.ndim == 0 else out


def _check_level(name, value):
    if not 0 < value < 1:
        raise ValueError(f"{name} must lie in (0, 1), got {value}")


def _resolve_split(split_, n, train_frac, random_state):
    if split_ is None:
        return split(n, train_frac, random_state)
    if split_.n != n or (len(split_.train) and split_.train.max() >= n) or (
        len(split_.calib) and split_.calib.max() >= n
    ):
        raise ValueError("split indices do not match the data")
    return split_


def _eval_weights(weight_fn, X):
    if weight_fn is None:
        return np.ones(len(X))
    w = np.asarray(weight_fn(X), dtype=float).reshape(-1)
    if w.shape != (len(X),):
        raise ValueError("weight function must return one weight per row")
    if np.any(np.isnan(w)) or np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    return w


class WeightedSplitCQR(BaseEstimator):
    """Weighted split conformalized quantile regression.

    Quantile models are fit on the training fold; scores and likelihood
    ratio weights are computed on the calibration fold. For a test point
    ``x`` the correction ``eta(x)`` is the ``1 - alpha`` quantile of the
    calibration scores weighted by ``weight_fn`` together with an atom at
    ``+inf`` carrying mass ``weight_fn(x)``.

    Parameters
    ----------
    alpha : float
        Target miscoverage.
    weight_fn : callable or None
        ``X -> w(X)`` likelihood ratio of target vs sampling covariates.
        ``None`` means unweighted (``w == 1``).
    quantiles : QuantilePair or None
        Levels for the lower/upper quantile models; defaults to
        ``(alpha / 2, 1 - alpha / 2)``.
    learners : (estimator, estimator) or None
        Unfitted regressors for the lower and upper quantile. They are
        cloned before fitting. ``None`` uses :class:`QuantileGradientBoosting`
        at the two levels.
    train_frac : float
        Fraction of rows in the training fold.
    random_state : int, Generator or None
    """

    def __init__(self, alpha=0.1, weight_fn=None, quantiles=None, learners=None,
                 train_frac=0.75, random_state=None):
        self.alpha = alpha
        self.weight_fn = weight_fn
        self.quantiles = quantiles
        self.learners = learners
        self.train_frac = train_frac
        self.random_state = random_state

    def _make_learners(self, seed):
        if self.learners is not None:
            return clone(self.learners[0]), clone(self.learners[1])
        q = self.quantiles or QuantilePair.symmetric(self.alpha)
        return (
            QuantileGradientBoosting(quantile=q.alpha_lo, random_state=seed),
            QuantileGradientBoosting(quantile=q.alpha_hi, random_state=seed),
        )

    def fit(self, X, y, split=None):
        _check_level("alpha", self.alpha)
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        rng = np.random.default_rng(self.random_state)
        self.split_ = _resolve_split(split, len(y), self.train_frac, rng)
        tr, ca = self.split_.train, self.split_.calib
        if len(ca) == 0:
            raise ValueError("empty calibration fold")
        if len(tr) == 0:
            raise ValueError("empty training fold")
        self.n_features_in_ = X.shape[1]
        lo, hi = self._make_learners(int(rng.integers(2**31)))
        self.learner_lo_ = lo.fit(X[tr], y[tr])
        self.learner_hi_ = hi.fit(X[tr], y[tr])
        self.calibrate(X[ca], y[ca])
        return self

    def calibrate(self, X_calib, y_calib):
        """(Re)compute calibration scores and weights using the fitted quantile models."""
        X_calib = check_array(X_calib, dtype=float)
        y_calib = np.asarray(y_calib, dtype=float)
        if len(y_calib) == 0:
            raise ValueError("empty calibration fold")
        self.scores_ = cqr_score(
            y_calib, self.learner_lo_.predict(X_calib), self.learner_hi_.predict(X_calib)
        )
        w = _eval_weights(self.weight_fn, X_calib)
        if not np.all(np.isfinite(w)):
            raise ValueError("calibration weights must be finite")
        self.calib_weights_ = w
        return self

    def _check_X(self, X):
        check_is_fitted(self, "scores_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def eta(self, X):
        """Per-point correction ``eta(x)`` and infinite-atom mass ``p_inf(x)``."""
        X = self._check_X(X)
        w_test = _eval_weights(self.weight_fn, X)
        eta = quantile_with_inf_atom(self.scores_, self.calib_weights_, w_test, 1 - self.alpha)
        total = self.calib_weights_.sum() + w_test
        with np.errstate(invalid="ignore", divide="ignore"):
            p_inf = np.where(np.isinf(w_test), 1.0, w_test / total)
        return eta, p_inf

    def predict(self, X):
        """Intervals as an ``(n, 2)`` array of ``[lo, hi]``; unbounded rows are ``(-inf, inf)``."""
        X = self._check_X(X)
        eta, _ = self.eta(X)
        lo = self.learner_lo_.predict(X) - eta
        hi = self.learner_hi_.predict(X) + eta
        inf = np.isinf(eta)
        lo[inf], hi[inf] = -math.inf, math.inf
        # crossing quantile fits with a negative correction can invert the band
        bad = lo > hi
        if bad.any():
            mid = (lo[bad] + hi[bad]) / 2
            lo[bad], hi[bad] = mid, mid
        return np.column_stack([lo, hi])

    def predict_results(self, X):
        bands = self.predict(X)
        eta, p_inf = self.eta(X)
        return [
            ConformalResult(Interval(lo, hi), float(e), float(p))
            for (lo, hi), e, p in zip(bands, eta, p_inf)
        ]


def weighted_split_cqr(X, y, test_points, alpha, weight_fn=None, learners=None,
                       quantiles=None, split=None, random_state=None):
    """Functional form of :class:`WeightedSplitCQR`; returns one :class:`ConformalResult` per test point."""
    model = WeightedSplitCQR(alpha=alpha, weight_fn=weight_fn, quantiles=quantiles,
                             learners=learners, random_state=random_state)
    return model.fit(X, y, split=split).predict_results(test_points)


def empirical_quantile_level(scores, level: float) -> float:
    """``inf{z : Fhat(z) >= level}`` of the empirical scores; ``+inf`` when ``level > 1``."""
    scores = np.sort(np.asarray(scores, dtype=float))
    n = len(scores)
    if n == 0:
        raise ValueError("no calibration scores")
    if level > 1 + 1e-12:
        return math.inf
    k = max(int(math.ceil(level * n * (1 - 1e-12))), 1)
    return float(scores[min(k, n) - 1])


class IntervalConformal(BaseEstimator):
    """Unweighted split conformal inference for interval-valued outcomes.

    Fits models of the left and right endpoints on the training fold and
    widens both by a single calibrated ``eta`` so that a new interval
    outcome is contained in the prediction with probability at least
    ``1 - gamma``.

    With ``allow_unbounded=True`` interval outcomes may have infinite
    endpoints: such rows are left out when fitting the endpoint models and
    score ``+inf`` in calibration, which keeps the containment guarantee.
    """

    def __init__(self, gamma=0.1, learners=None, train_frac=0.75, allow_unbounded=False,
                 random_state=None):
        self.gamma = gamma
        self.learners = learners
        self.train_frac = train_frac
        self.allow_unbounded = allow_unbounded
        self.random_state = random_state

    def fit(self, X, c_lo, c_hi, split=None):
        _check_level("gamma", self.gamma)
        X = check_array(X, dtype=float)
        c_lo = np.asarray(c_lo, dtype=float)
        c_hi = np.asarray(c_hi, dtype=float)
        if not (len(X) == len(c_lo) == len(c_hi)):
            raise ValueError("X and interval endpoints must have equal length")
        if np.isnan(c_lo).any() or np.isnan(c_hi).any():
            raise ValueError("interval outcomes contain NaN")
        bounded = np.isfinite(c_lo) & np.isfinite(c_hi)
        if not self.allow_unbounded and not bounded.all():
            raise ValueError("interval outcomes must have finite endpoints")
        rng = np.random.default_rng(self.random_state)
        self.split_ = _resolve_split(split, len(X), self.train_frac, rng)
        tr, ca = self.split_.train, self.split_.calib
        if len(ca) == 0:
            raise ValueError("empty calibration fold")
        self.n_features_in_ = X.shape[1]
        seed = int(rng.integers(2**31))
        if self.learners is None:
            m_l = QuantileGradientBoosting(quantile=0.5, random_state=seed)
            m_r = QuantileGradientBoosting(quantile=0.5, random_state=seed)
        else:
            m_l, m_r = clone(self.learners[0]), clone(self.learners[1])
        fit_rows = tr[bounded[tr]]
        if len(fit_rows) == 0:
            raise ValueError("no bounded interval outcomes in the training fold")
        self.learner_lo_ = m_l.fit(X[fit_rows], c_lo[fit_rows])
        self.learner_hi_ = m_r.fit(X[fit_rows], c_hi[fit_rows])
        self.scores_ = np.maximum(
            self.learner_lo_.predict(X[ca]) - c_lo[ca], c_hi[ca] - self.learner_hi_.predict(X[ca])
        )
        n_ca = len(ca)
        self.level_ = (1 - self.gamma) * (1 + 1 / n_ca)
        self.eta_ = empirical_quantile_level(self.scores_, self.level_)
        return self

    def predict(self, X):
        check_is_fitted(self, "eta_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        if math.isinf(self.eta_):
            return np.column_stack([np.full(len(X), -math.inf), np.full(len(X), math.inf)])
        lo = self.learner_lo_.predict(X) - self.eta_
        hi = self.learner_hi_.predict(X) + self.eta_
        bad = lo > hi
        if bad.any():
            mid = (lo[bad] + hi[bad]) / 2
            lo[bad], hi[bad] = mid, mid
        return np.column_stack([lo, hi])


def interval_conformal(X, c_lo, c_hi, test_points, gamma, learners=None, split=None,
                       random_state=None):
    """Functional form of :class:`IntervalConformal`; returns a list of :class:`Interval`."""
    model = IntervalConformal(gamma=gamma, learners=learners, random_state=random_state)
    bands = model.fit(X, c_lo, c_hi, split=split).predict(test_points)
    return [Interval(lo, hi) for lo, hi in bands]
