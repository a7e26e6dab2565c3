from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from scipy.stats import norm
from sklearn.base import clone

from confcausal.learners import (
    GradientBoostingPropensity,
    QuantileGradientBoosting,
    fit_propensity,
    fit_quantile,
    pinball_loss,
)


@pytest.fixture(scope="module")
def rng():
    return np.random.default_rng(2024)


def test_constant_target_is_a_fixed_point(rng):
    X = rng.uniform(size=(200, 3))
    model = QuantileGradientBoosting(quantile=0.3, n_estimators=20).fit(X, np.full(200, 5.0))
    np.testing.assert_array_equal(model.predict(rng.uniform(size=(10, 3))), 5.0)


def test_zero_trees_predict_unconditional_quantile(rng):
    X = rng.uniform(size=(101, 2))
    y = rng.normal(size=101)
    model = QuantileGradientBoosting(quantile=0.8, n_estimators=0).fit(X, y)
    expected = np.sort(y)[int(np.ceil(0.8 * 101)) - 1]
    np.testing.assert_array_equal(model.predict(X[:5]), expected)


def test_upper_decile_of_independent_noise(rng):
    X = rng.uniform(size=(2000, 3))
    y = rng.normal(size=2000)
    pred = fit_quantile(X, y, 0.9, random_state=0).predict(rng.uniform(size=(2000, 3)))
    assert abs(pred.mean() - norm.ppf(0.9)) <= 0.2


def test_training_loss_never_increases(rng):
    X = rng.uniform(size=(500, 4))
    y = np.sin(6 * X[:, 0]) + rng.standard_t(3, size=500)
    for beta in (0.05, 0.5, 0.95):
        model = QuantileGradientBoosting(quantile=beta, n_estimators=60).fit(X, y)
        diffs = np.diff(model.train_loss_)
        assert np.all(diffs <= 1e-9)
        assert model.train_loss_[-1] <= model.train_loss_[0]
        assert model.train_loss_[-1] == pytest.approx(pinball_loss(y, model.predict(X), beta))


def test_held_out_quantile_calibration(rng):
    def draw(n):
        X = rng.uniform(size=(n, 2))
        y = 2 * X[:, 0] + (0.5 + X[:, 1]) * rng.normal(size=n)
        return X, y

    X, y = draw(3000)
    Xt, yt = draw(5000)
    for beta in (0.1, 0.9):
        model = QuantileGradientBoosting(quantile=beta, random_state=1).fit(X, y)
        rate = np.mean(yt <= model.predict(Xt))
        assert abs(rate - beta) <= 0.05


def test_prediction_is_deterministic_and_checks_dimension(rng):
    X = rng.uniform(size=(100, 3))
    model = QuantileGradientBoosting(n_estimators=10).fit(X, rng.normal(size=100))
    x = rng.uniform(size=(1, 3))
    assert model.predict(x)[0] == model.predict(x)[0]
    with pytest.raises(ValueError):
        model.predict(rng.uniform(size=(1, 4)))


def test_same_seed_same_model_with_subsampling(rng):
    X = rng.uniform(size=(300, 3))
    y = rng.normal(size=300)
    a = QuantileGradientBoosting(subsample=0.5, n_estimators=30, random_state=3).fit(X, y)
    b = clone(a).fit(X, y)
    np.testing.assert_array_equal(a.predict(X), b.predict(X))


def test_rejects_bad_input(rng):
    X = rng.uniform(size=(10, 2))
    with pytest.raises(ValueError):
        fit_quantile(X, np.r_[np.ones(9), np.inf], 0.5)
    with pytest.raises(ValueError):
        fit_quantile(np.empty((0, 2)), np.empty(0), 0.5)
    with pytest.raises(ValueError):
        QuantileGradientBoosting(quantile=1.0).fit(X, np.ones(10))


def test_degenerate_arm_is_clipped(rng):
    X = rng.uniform(size=(100, 2))
    p = GradientBoostingPropensity().fit(X, np.ones(100, dtype=int)).predict_proba(X)[:, 1]
    np.testing.assert_array_equal(p, 0.99)


def test_constant_propensity_is_recovered(rng):
    X = rng.uniform(size=(5000, 3))
    t = rng.binomial(1, 0.3, size=5000)
    p = fit_propensity(X, t, random_state=0).predict_proba(rng.uniform(size=(2000, 3)))[:, 1]
    assert abs(p.mean() - 0.3) <= 0.05


def test_separating_feature_hits_clip_bounds(rng):
    X = rng.uniform(size=(300, 2))
    t = (X[:, 0] > 0.5).astype(int)
    model = GradientBoostingPropensity(n_estimators=200, max_depth=3, subsample=1.0).fit(X, t)
    assert set(np.unique(model.predict_proba(X)[:, 1])) <= {0.01, 0.99}


def test_propensity_always_inside_clip(rng):
    X = rng.normal(size=(400, 3))
    t = (X[:, 0] + 0.3 * rng.normal(size=400) > 0).astype(int)
    p = GradientBoostingPropensity(n_estimators=300, max_depth=3).fit(X, t).predict_proba(
        rng.normal(size=(1000, 3)) * 5)[:, 1]
    assert p.min() >= 0.01 and p.max() <= 0.99
    with pytest.raises(ValueError):
        fit_propensity(np.empty((0, 3)), np.empty(0))


def test_concurrent_predictions_are_identical(rng):
    X = rng.uniform(size=(300, 3))
    model = QuantileGradientBoosting(n_estimators=30).fit(X, rng.normal(size=300))
    Xq = rng.uniform(size=(500, 3))
    ref = model.predict(Xq)
    with ThreadPoolExecutor(max_workers=8) as pool:
        outs = list(pool.map(lambda _: model.predict(Xq), range(16)))
    for out in outs:
        np.testing.assert_array_equal(out, ref)
