"""Counterfactual and individual-treatment-effect intervals built on weighted
split-CQR."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_array, check_is_fitted

from .conformal import IntervalConformal, WeightedSplitCQR
from .core import Interval, SplitIndices, split
from .learners import GradientBoostingPropensity, QuantileGradientBoosting, propensity_function


class TargetKind(str, enum.Enum):
    ATE = "ATE"
    ATT = "ATT"
    ATC = "ATC"
    GENERAL = "General"


@dataclass(frozen=True)
class WeightTarget:
    """Which covariate population the counterfactual intervals should cover.

    ``ratio`` is the density ratio ``dQ/dP`` of the target covariate law
    to the study population and is required for ``General`` only.
    """

    kind: TargetKind = TargetKind.ATE
    ratio: Optional[Callable] = None

    def __post_init__(self):
        kind = TargetKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is TargetKind.GENERAL and self.ratio is None:
            raise ValueError("General target requires a ratio function")
        if kind is not TargetKind.GENERAL and self.ratio is not None:
            raise ValueError(f"{kind.value} target takes no ratio function")


def as_target(target) -> WeightTarget:
    if isinstance(target, WeightTarget):
        return target
    return WeightTarget(TargetKind(target))


def weight_pair(target, propensity):
    """Return ``(w1, w0)``, the weight functions for inference on ``Y(1)`` and ``Y(0)``.

    ``propensity`` may be a fitted classifier, a callable ``X -> e(X)`` or a
    constant.
    """
    target = as_target(target)
    e = propensity_function(propensity)
    kind = target.kind

    if kind is TargetKind.ATE:
        return (lambda X: 1 / e(X)), (lambda X: 1 / (1 - e(X)))
    if kind is TargetKind.ATT:
        def w0(X):
            p = e(X)
            return p / (1 - p)
        return (lambda X: np.ones(len(X))), w0
    if kind is TargetKind.ATC:
        def w1(X):
            p = e(X)
            return (1 - p) / p
        return w1, (lambda X: np.ones(len(X)))
    ratio = target.ratio

    def _ratio(X):
        return np.asarray(ratio(X), dtype=float)

    return (lambda X: _ratio(X) / e(X)), (lambda X: _ratio(X) / (1 - e(X)))


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def _check_arm(arm):
    if arm not in (0, 1):
        raise ValueError(f"arm must be 0 or 1, got {arm}")


def _arm_split(sp: SplitIndices, t, arm) -> SplitIndices:
    """Restrict a split of all rows to the rows of one arm, re-indexed within the arm."""
    rows = np.flatnonzero(t == arm)
    pos = np.full(len(t), -1)
    pos[rows] = np.arange(len(rows))
    tr = pos[sp.train][t[sp.train] == arm]
    ca = pos[sp.calib][t[sp.calib] == arm]
    if len(tr) == 0 or len(ca) == 0:
        raise ValueError(f"arm {arm} has an empty training or calibration fold")
    return SplitIndices(tr, ca)


def _arm_learners(learners, alpha, seed):
    if learners is not None:
        return learners
    return (
        QuantileGradientBoosting(quantile=alpha / 2, random_state=seed),
        QuantileGradientBoosting(quantile=1 - alpha / 2, random_state=seed),
    )


def _check_Xt(X, t, y):
    X = check_array(X, dtype=float)
    t = np.asarray(t)
    y = np.asarray(y, dtype=float)
    if not (len(X) == len(t) == len(y)):
        raise ValueError("X, t and y must have the same length")
    if not np.isin(t, (0, 1)).all():
        raise ValueError("treatment must be binary 0/1")
    if not np.all(np.isfinite(y)):
        raise ValueError("outcomes must be finite")
    return X, t.astype(np.int64), y


def _fit_arm(X, t, y, arm, sp, weight_fn, alpha, learners, seed):
    rows = np.flatnonzero(t == arm)
    if len(rows) == 0:
        raise ValueError(f"arm {arm} is empty")
    model = WeightedSplitCQR(alpha=alpha, weight_fn=weight_fn,
                             learners=_arm_learners(learners, alpha, seed))
    return model.fit(X[rows], y[rows], split=_arm_split(sp, t, arm))


class CounterfactualConformal(BaseEstimator):
    """Conformal intervals for the potential outcome ``Y(arm)``.

    All rows are split once into train/calibration folds. The propensity
    model (when estimated) is fit on the training fold; the quantile models
    on the training rows of the requested arm; scores on its calibration
    rows, weighted by the arm's weight for ``target``.

    Parameters
    ----------
    arm : {0, 1}
    alpha : float
    target : WeightTarget or str
    propensity : None, fitted classifier, callable or float
        ``None`` fits :class:`GradientBoostingPropensity` on the training
        fold; an unfitted classifier is cloned and fit there; anything else
        is used as a known propensity.
    learners : (estimator, estimator) or None
        Lower/upper quantile regressors.
    train_frac : float
    random_state : int, Generator or None
    """

    def __init__(self, arm=1, alpha=0.1, target="ATE", propensity=None, learners=None,
                 train_frac=0.75, random_state=None):
        self.arm = arm
        self.alpha = alpha
        self.target = target
        self.propensity = propensity
        self.learners = learners
        self.train_frac = train_frac
        self.random_state = random_state

    def fit(self, X, t, y):
        _check_arm(self.arm)
        _check_alpha(self.alpha)
        X, t, y = _check_Xt(X, t, y)
        rng = np.random.default_rng(self.random_state)
        self.split_ = split(len(y), self.train_frac, rng)
        seed = int(rng.integers(2**31))
        self.propensity_ = _resolve_propensity(self.propensity, X[self.split_.train],
                                               t[self.split_.train], seed)
        w1, w0 = weight_pair(self.target, self.propensity_)
        self.model_ = _fit_arm(X, t, y, self.arm, self.split_, w1 if self.arm == 1 else w0,
                               self.alpha, self.learners, seed)
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(X)


def _resolve_propensity(propensity, X, t, seed):
    if propensity is None:
        return GradientBoostingPropensity(random_state=seed).fit(X, t)
    if hasattr(propensity, "predict_proba"):
        try:
            check_is_fitted(propensity)
            return propensity
        except Exception:
            return clone(propensity).fit(X, t)
    return propensity


def counterfactual_interval(X, t, y, arm, test_points, alpha=0.1, target="ATE",
                            propensity=None, learners=None, random_state=None):
    """Intervals for ``Y(arm)`` at ``test_points``; a list of :class:`Interval`."""
    model = CounterfactualConformal(arm=arm, alpha=alpha, target=target, propensity=propensity,
                                    learners=learners, random_state=random_state)
    return [Interval(lo, hi) for lo, hi in model.fit(X, t, y).predict(test_points)]


def minkowski_diff(a, b):
    """Row-wise ``[a_lo - b_hi, a_hi - b_lo]`` for ``(n, 2)`` interval arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(invalid="ignore"):
        out = np.column_stack([a[:, 0] - b[:, 1], a[:, 1] - b[:, 0]])
    if np.isnan(out).any():
        raise ValueError("undefined interval difference")
    return out


class NaiveITE(BaseEstimator):
    """ITE intervals from the contrast of two counterfactual intervals.

    ``Y(1)`` and ``Y(0)`` intervals are each built at level
    ``1 - alpha / 2`` and combined as ``C1 - C0`` so that the ITE is
    covered at level ``1 - alpha``.
    """

    def __init__(self, alpha=0.1, target="ATE", propensity=None, learners=None,
                 train_frac=0.75, random_state=None):
        self.alpha = alpha
        self.target = target
        self.propensity = propensity
        self.learners = learners
        self.train_frac = train_frac
        self.random_state = random_state

    def fit(self, X, t, y):
        _check_alpha(self.alpha)
        X, t, y = _check_Xt(X, t, y)
        rng = np.random.default_rng(self.random_state)
        self.split_ = split(len(y), self.train_frac, rng)
        seed = int(rng.integers(2**31))
        tr = self.split_.train
        self.propensity_ = _resolve_propensity(self.propensity, X[tr], t[tr], seed)
        w1, w0 = weight_pair(self.target, self.propensity_)
        a = self.alpha / 2
        self.model1_ = _fit_arm(X, t, y, 1, self.split_, w1, a, self.learners, seed)
        self.model0_ = _fit_arm(X, t, y, 0, self.split_, w0, a, self.learners, seed)
        return self

    def predict_counterfactuals(self, X):
        check_is_fitted(self, "model0_")
        return self.model1_.predict(X), self.model0_.predict(X)

    def predict(self, X):
        c1, c0 = self.predict_counterfactuals(X)
        return minkowski_diff(c1, c0)


def naive_ite(X, t, y, test_points, alpha=0.1, target="ATE", propensity=None, learners=None,
              random_state=None):
    model = NaiveITE(alpha=alpha, target=target, propensity=propensity, learners=learners,
                     random_state=random_state)
    return [Interval(lo, hi) for lo, hi in model.fit(X, t, y).predict(test_points)]


def surrogate_interval(t, y_obs, c_opposite: Interval) -> Interval:
    """Observed-unit ITE interval: ``y_obs - C0(x)`` if treated, ``C1(x) - y_obs`` if control."""
    if t == 1:
        return float(y_obs) - c_opposite
    if t == 0:
        return c_opposite - float(y_obs)
    raise ValueError(f"t must be 0 or 1, got {t}")


def surrogate_intervals(t, y_obs, c_opposite):
    """Vectorized :func:`surrogate_interval` over ``(n, 2)`` interval arrays."""
    t = np.asarray(t)
    y_obs = np.asarray(y_obs, dtype=float)
    c = np.asarray(c_opposite, dtype=float)
    treated = t == 1
    lo = np.where(treated, y_obs - c[:, 1], c[:, 0] - y_obs)
    hi = np.where(treated, y_obs - c[:, 0], c[:, 1] - y_obs)
    return np.column_stack([lo, hi])


class IteMethodKind(str, enum.Enum):
    NAIVE = "naive"
    NESTED_EXACT = "nested-exact"
    NESTED_INEXACT = "nested-inexact"


@dataclass(frozen=True)
class IteMethod:
    kind: IteMethodKind = IteMethodKind.NESTED_EXACT
    alpha: float = 0.05
    gamma: Optional[float] = None
    endpoint_quantiles: tuple = (0.40, 0.60)

    def __post_init__(self):
        kind = IteMethodKind(self.kind)
        object.__setattr__(self, "kind", kind)
        _check_alpha(self.alpha)
        if kind is IteMethodKind.NESTED_EXACT:
            if self.gamma is None:
                raise ValueError("nested-exact requires gamma")
            if not 0 < self.gamma < 1:
                raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        q_lo, q_hi = self.endpoint_quantiles
        if not (0 < q_lo < 1 and 0 < q_hi < 1):
            raise ValueError("endpoint quantiles must lie in (0, 1)")


class NestedITE(BaseEstimator):
    """Nested ITE intervals.

    Step I splits the data into two folds and fits the propensity on the
    first. Step II builds cross-arm counterfactual intervals on the first
    fold (weights ``e/(1-e)`` for ``Y(0)`` and ``(1-e)/e`` for ``Y(1)``,
    both at level ``alpha``) and turns every second-fold unit into a
    surrogate ITE interval. Step III either conformalizes the surrogates
    with :class:`IntervalConformal` at level ``gamma`` (``exact=True``) or
    fits endpoint quantile regressions (``exact=False``).

    Parameters
    ----------
    alpha, gamma : float
        ``gamma`` is used by the exact variant only.
    exact : bool
    endpoint_quantiles : (float, float)
        Levels for the left/right endpoint fits in the inexact variant.
    propensity, learners : see :class:`CounterfactualConformal`
    endpoint_learners : (estimator, estimator) or None
        Step III regressors; defaults to boosted medians (exact) or the
        ``endpoint_quantiles`` levels (inexact).
    fold_frac : float
        Share of rows in the first fold.
    train_frac : float
        Train share of the inner splits.
    """

    def __init__(self, alpha=0.05, gamma=0.05, exact=True, endpoint_quantiles=(0.40, 0.60),
                 propensity=None, learners=None, endpoint_learners=None, fold_frac=0.5,
                 train_frac=0.75, random_state=None):
        self.alpha = alpha
        self.gamma = gamma
        self.exact = exact
        self.endpoint_quantiles = endpoint_quantiles
        self.propensity = propensity
        self.learners = learners
        self.endpoint_learners = endpoint_learners
        self.fold_frac = fold_frac
        self.train_frac = train_frac
        self.random_state = random_state

    @classmethod
    def from_method(cls, method: IteMethod, **kwargs) -> "NestedITE":
        if method.kind is IteMethodKind.NAIVE:
            raise ValueError("naive method is handled by NaiveITE")
        return cls(alpha=method.alpha, gamma=method.gamma,
                   exact=method.kind is IteMethodKind.NESTED_EXACT,
                   endpoint_quantiles=method.endpoint_quantiles, **kwargs)

    def fit(self, X, t, y):
        _check_alpha(self.alpha)
        if self.exact and (self.gamma is None or not 0 < self.gamma < 1):
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        X, t, y = _check_Xt(X, t, y)
        rng = np.random.default_rng(self.random_state)
        folds = split(len(y), self.fold_frac, rng)
        z1, z2 = folds.train, folds.calib
        for name, idx in (("first", z1), ("second", z2)):
            if not (np.any(t[idx] == 1) and np.any(t[idx] == 0)):
                raise ValueError(f"both arms must be present in the {name} fold")
        self.folds_ = folds
        seed = int(rng.integers(2**31))
        X1, t1, y1 = X[z1], t[z1], y[z1]
        self.propensity_ = _resolve_propensity(self.propensity, X1, t1, seed)
        e = propensity_function(self.propensity_)

        def w0(Xq):
            p = e(Xq)
            return p / (1 - p)

        def w1(Xq):
            p = e(Xq)
            return (1 - p) / p

        inner = split(len(z1), self.train_frac, rng)
        self.model1_ = _fit_arm(X1, t1, y1, 1, inner, w1, self.alpha, self.learners, seed)
        self.model0_ = _fit_arm(X1, t1, y1, 0, inner, w0, self.alpha, self.learners, seed)

        X2, t2, y2 = X[z2], t[z2], y[z2]
        opposite = np.empty((len(z2), 2))
        treated = t2 == 1
        if treated.any():
            opposite[treated] = self.model0_.predict(X2[treated])
        if (~treated).any():
            opposite[~treated] = self.model1_.predict(X2[~treated])
        self.surrogates_ = surrogate_intervals(t2, y2, opposite)
        self.surrogate_X_ = X2

        c_lo, c_hi = self.surrogates_[:, 0], self.surrogates_[:, 1]
        if self.exact:
            self.stage3_ = IntervalConformal(gamma=self.gamma, learners=self.endpoint_learners,
                                             train_frac=self.train_frac, allow_unbounded=True,
                                             random_state=seed)
            self.stage3_.fit(X2, c_lo, c_hi, split=split(len(z2), self.train_frac, rng))
        else:
            keep = np.isfinite(c_lo) & np.isfinite(c_hi)
            if not keep.any():
                raise ValueError("no finite surrogate intervals to fit")
            if self.endpoint_learners is None:
                q_lo, q_hi = self.endpoint_quantiles
                m_l = QuantileGradientBoosting(quantile=q_lo, random_state=seed)
                m_r = QuantileGradientBoosting(quantile=q_hi, random_state=seed)
            else:
                m_l, m_r = (clone(m) for m in self.endpoint_learners)
            self.endpoint_models_ = (m_l.fit(X2[keep], c_lo[keep]),
                                     m_r.fit(X2[keep], c_hi[keep]))
        return self

    def predict(self, X):
        check_is_fitted(self, "surrogates_")
        if self.exact:
            return self.stage3_.predict(X)
        X = check_array(X, dtype=float)
        lo = self.endpoint_models_[0].predict(X)
        hi = self.endpoint_models_[1].predict(X)
        return order_endpoints(lo, hi)


def order_endpoints(lo, hi):
    """Collapse crossing endpoint estimates to their midpoint."""
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    bad = lo > hi
    mid = (lo[bad] + hi[bad]) / 2
    lo[bad], hi[bad] = mid, mid
    return np.column_stack([lo, hi])


def nested_ite(X, t, y, test_points, method: IteMethod, propensity=None, learners=None,
               random_state=None):
    model = NestedITE.from_method(method, propensity=propensity, learners=learners,
                                  random_state=random_state)
    return [Interval(lo, hi) for lo, hi in model.fit(X, t, y).predict(test_points)]


def ite_estimator(method: IteMethod, target="ATE", **kwargs):
    """Build the estimator for an :class:`IteMethod`."""
    if method.kind is IteMethodKind.NAIVE:
        return NaiveITE(alpha=method.alpha, target=target, **kwargs)
    return NestedITE.from_method(method, **kwargs)
