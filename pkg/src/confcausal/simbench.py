"""Synthetic benchmark: equicorrelated uniform covariates, a sigmoid-product
treated response, zero baseline, and the coverage/length metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.special import ndtr

from .core import Dataset

#: Reference oracle length quoted for both noise settings (2 x 1.96 x 1).
PUBLISHED_ORACLE_LENGTH = 3.92


def std_normal_cdf(z):
    """Standard normal CDF ``Phi(z)``; scalar or array."""
    out = ndtr(np.asarray(z, dtype=float))
    return float(out) if out.ndim == 0 else out


def beta24_cdf(x):
    """CDF of Beta(2, 4): ``10x^2 - 20x^3 + 15x^4 - 4x^5`` on [0, 1]."""
    x = np.asarray(x, dtype=float)
    return x**2 * (10 + x * (-20 + x * (15 - 4 * x)))


def propensity_true(x1):
    """True treatment probability ``(1 + Beta24CDF(x1)) / 4``, in [0.25, 0.5]."""
    x1 = np.asarray(x1, dtype=float)
    if np.any((x1 < 0) | (x1 > 1)) or np.any(np.isnan(x1)):
        raise ValueError("x1 must lie in [0, 1]")
    out = 0.25 * (1 + beta24_cdf(x1))
    return float(out) if out.ndim == 0 else out


def sigmoid_bump(x):
    """``2 / (1 + exp(-12 (x - 0.5)))``."""
    return 2.0 / (1.0 + np.exp(-12.0 * (np.asarray(x, dtype=float) - 0.5)))


def treated_mean(X):
    X = np.asarray(X, dtype=float)
    return sigmoid_bump(X[:, 0]) * sigmoid_bump(X[:, 1])


def noise_variance(X, heteroscedastic: bool):
    X = np.asarray(X, dtype=float)
    if not heteroscedastic:
        return np.ones(len(X))
    # -log(1) is -0.0; keep the variance nonnegative
    return np.abs(-np.log(X[:, 0]))


@dataclass(frozen=True)
class ScenarioConfig:
    d: int = 10
    rho: float = 0.0
    heteroscedastic: bool = False
    n: int = 1000
    n_test: int = 10000
    seed: int = 0

    def __post_init__(self):
        if int(self.d) < 2:
            raise ValueError(f"d must be >= 2, got {self.d}")
        if not 0 <= self.rho < 1:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        if int(self.n) < 1 or int(self.n_test) < 1:
            raise ValueError("n and n_test must be positive")


@dataclass(frozen=True)
class GroundTruthSample:
    x: np.ndarray
    t: int
    y1: float
    y0: float
    tau: float
    e_true: float
    sigma2: float
    cate: float


@dataclass(frozen=True)
class GroundTruth:
    """Test rows with both potential outcomes, stored column-wise."""

    X: np.ndarray
    t: np.ndarray
    y1: np.ndarray
    y0: np.ndarray
    e_true: np.ndarray
    sigma2: np.ndarray
    cate: np.ndarray

    @property
    def tau(self) -> np.ndarray:
        return self.y1 - self.y0

    def __len__(self) -> int:
        return len(self.y1)

    def __iter__(self) -> Iterator[GroundTruthSample]:
        for i in range(len(self)):
            yield GroundTruthSample(self.X[i], int(self.t[i]), float(self.y1[i]),
                                    float(self.y0[i]), float(self.y1[i] - self.y0[i]),
                                    float(self.e_true[i]), float(self.sigma2[i]),
                                    float(self.cate[i]))


def sample_covariates(n, d, rho, rng):
    """``Phi`` of an equicorrelated standard Gaussian vector (one shared factor)."""
    z0 = rng.standard_normal((n, 1))
    z = rng.standard_normal((n, d))
    return std_normal_cdf(math.sqrt(rho) * z0 + math.sqrt(1 - rho) * z)


def _draw(n, config: ScenarioConfig, rng) -> GroundTruth:
    X = sample_covariates(n, config.d, config.rho, rng)
    e = propensity_true(X[:, 0])
    t = (rng.uniform(size=n) < e).astype(np.int64)
    mu = treated_mean(X)
    s2 = noise_variance(X, config.heteroscedastic)
    y1 = mu + np.sqrt(s2) * rng.standard_normal(n)
    y0 = np.zeros(n)
    return GroundTruth(X, t, y1, y0, e, s2, mu)


def generate(config: ScenarioConfig):
    """Return ``(train, test)``: an observed :class:`Dataset` and a :class:`GroundTruth` test set."""
    rng = np.random.default_rng(config.seed)
    train = _draw(config.n, config, rng)
    test = _draw(config.n_test, config, rng)
    y_obs = np.where(train.t == 1, train.y1, train.y0)
    return Dataset(train.X, train.t, y_obs), test


def _as_bands(intervals):
    arr = np.asarray([(iv.lo, iv.hi) if hasattr(iv, "lo") else iv for iv in intervals],
                     dtype=float)
    return arr.reshape(-1, 2)


def covered(intervals, truths):
    bands = _as_bands(intervals)
    truths = np.asarray(truths, dtype=float)
    if len(bands) != len(truths):
        raise ValueError(f"length mismatch: {len(bands)} intervals vs {len(truths)} truths")
    return (bands[:, 0] <= truths) & (truths <= bands[:, 1])


def marginal_coverage(intervals, truths) -> float:
    c = covered(intervals, truths)
    if len(c) == 0:
        raise ValueError("no intervals")
    return float(c.mean())


def average_length(intervals) -> float:
    bands = _as_bands(intervals)
    if len(bands) == 0:
        raise ValueError("no intervals")
    if not np.all(np.isfinite(bands)):
        return math.inf
    return float(np.mean(bands[:, 1] - bands[:, 0]))


def decile_bins(stratifier, n_bins: int = 10) -> np.ndarray:
    """Bin index of each value by the empirical 1/n_bins, ..., (n_bins-1)/n_bins percentiles."""
    s = np.asarray(stratifier, dtype=float)
    edges = np.percentile(s, 100 * np.arange(1, n_bins) / n_bins)
    return np.searchsorted(edges, s, side="right")


def conditional_coverage(intervals, truths, stratifier, n_bins: int = 10):
    """Coverage within percentile bins of ``stratifier``; list of ``(bin, coverage)`` for non-empty bins."""
    c = covered(intervals, truths)
    s = np.asarray(stratifier, dtype=float)
    if len(s) != len(c):
        raise ValueError(f"length mismatch: {len(c)} intervals vs {len(s)} stratifier values")
    bins = decile_bins(s, n_bins)
    return [(b, float(c[bins == b].mean())) for b in range(n_bins) if np.any(bins == b)]


def oracle_length(config: ScenarioConfig, n_mc: int = 10**6, seed: int = 0) -> float:
    """Expected length of the true 2.5%/97.5% conditional-quantile band.

    Homoscedastic: 3.92. Heteroscedastic: ``3.92 * E[sqrt(-log U)]`` by
    Monte Carlo, about 3.474. :data:`PUBLISHED_ORACLE_LENGTH` is the figure
    obtained by substituting ``E[sigma^2] = 1`` for ``E[sigma]``.
    """
    if not config.heteroscedastic:
        return PUBLISHED_ORACLE_LENGTH
    u = np.random.default_rng(seed).uniform(size=n_mc)
    return PUBLISHED_ORACLE_LENGTH * float(np.mean(np.sqrt(-np.log1p(-u))))


@dataclass(frozen=True)
class RunReport:
    marginal_coverage: float
    avg_length: float
    conditional_coverage: tuple
    oracle_length: float
    published_oracle_length: float = PUBLISHED_ORACLE_LENGTH


def evaluate(intervals, test: GroundTruth, config: ScenarioConfig, stratify="sigma2",
             n_bins=10) -> RunReport:
    strat = test.sigma2 if stratify == "sigma2" else test.cate
    return RunReport(
        marginal_coverage(intervals, test.tau),
        average_length(intervals),
        tuple(conditional_coverage(intervals, test.tau, strat, n_bins)),
        oracle_length(config),
    )
