"""Shared primitives: extended-real intervals, the weighted quantile and
seeded data splitting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

# Relative slack used when comparing cumulative mass against a level.
# Absorbs float rounding in sums so that equal-mass ties and rescaled
# weights resolve to the same order statistic.
_MASS_RTOL = 1e-12


@dataclass(frozen=True)
class Interval:
    """Closed interval on the extended real line."""

    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if math.isnan(lo) or math.isnan(hi):
            raise ValueError("interval endpoints must not be NaN")
        if lo > hi:
            raise ValueError(f"invalid interval: lo={lo} > hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def real_line(cls) -> "Interval":
        return cls(-math.inf, math.inf)

    def contains(self, y: float) -> bool:
        return self.lo <= y <= self.hi

    def is_finite(self) -> bool:
        return math.isfinite(self.lo) and math.isfinite(self.hi)

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def __neg__(self) -> "Interval":
        return Interval(-self.hi, -self.lo)

    def shift(self, c: float) -> "Interval":
        return Interval(self.lo + c, self.hi + c)

    def minkowski_diff(self, other: "Interval") -> "Interval":
        """``{a - b : a in self, b in other}``."""
        return Interval(_sub(self.lo, other.hi), _sub(self.hi, other.lo))

    def __sub__(self, other):
        if isinstance(other, Interval):
            return self.minkowski_diff(other)
        return self.shift(-float(other))

    def __rsub__(self, other):
        # scalar - interval
        return (-self).shift(float(other))

    def __add__(self, other):
        return self.shift(float(other))

    __radd__ = __add__


def _sub(a: float, b: float) -> float:
    # inf - inf only arises for a lower endpoint of +inf or an upper of -inf,
    # which valid intervals exclude except at the degenerate points.
    r = a - b
    if math.isnan(r):
        raise ValueError(f"undefined interval arithmetic: {a} - {b}")
    return r


def interval_arith(a: Interval, op: str, b=None) -> Interval:
    """Dispatch for the three interval operations used by the ITE procedures."""
    if op == "negate":
        return -a
    if op == "shift_by_scalar":
        return a.shift(float(b))
    if op == "minkowski_diff":
        return a.minkowski_diff(b)
    raise ValueError(f"unknown interval op {op!r}")


@dataclass(frozen=True)
class WeightedAtom:
    value: float
    mass: float

    def __post_init__(self):
        if not self.mass >= 0 or math.isinf(self.mass):
            raise ValueError(f"atom mass must be finite and nonnegative, got {self.mass}")
        if math.isnan(self.value) or self.value == -math.inf:
            raise ValueError(f"atom value must be real or +inf, got {self.value}")


def weighted_quantile(atoms: Sequence[WeightedAtom], beta: float) -> float:
    """Return ``inf{z : F(z) >= beta}`` for the discrete law ``sum mass * delta_value``.

    Masses are normalized internally. Values are scanned in ascending
    order with ``+inf`` last; if the finite mass never reaches ``beta`` the
    result is ``+inf``.
    """
    if len(atoms) == 0:
        raise ValueError("weighted_quantile needs at least one atom")
    if not 0 < beta <= 1:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    n_inf = sum(1 for a in atoms if a.value == math.inf)
    if n_inf > 1:
        raise ValueError("at most one atom may sit at +inf")
    values = np.array([a.value for a in atoms], dtype=float)
    masses = np.array([a.mass for a in atoms], dtype=float)
    total = masses.sum()
    if not total > 0:
        raise ValueError("total atom mass must be positive")
    finite = np.isfinite(values)
    v, m = values[finite], masses[finite]
    order = np.argsort(v, kind="stable")
    v, m = v[order], m[order]
    # merge tied values
    uniq, start = np.unique(v, return_index=True)
    merged = np.add.reduceat(m, start) if len(v) else m
    cum = np.cumsum(merged) / total
    k = np.searchsorted(cum, beta * (1 - _MASS_RTOL), side="left")
    if k >= len(uniq):
        return math.inf
    return float(uniq[k])


def quantile_with_inf_atom(scores, weights, test_weights, beta: float) -> np.ndarray:
    """Vectorized ``weighted_quantile`` over many test points.

    For each test weight ``w`` this evaluates the quantile of
    ``sum_i weights_i delta_{scores_i} + w delta_{+inf}`` (normalized).
    A test weight of ``+inf`` yields ``+inf``.
    """
    scores = np.asarray(scores, dtype=float)
    weights = np.asarray(weights, dtype=float)
    test_weights = np.atleast_1d(np.asarray(test_weights, dtype=float))
    if scores.ndim != 1 or scores.shape != weights.shape or len(scores) == 0:
        raise ValueError("scores and weights must be non-empty 1-D arrays of equal length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("calibration scores must be finite")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("calibration weights must be finite and nonnegative")
    if np.any(test_weights < 0) or np.any(np.isnan(test_weights)):
        raise ValueError("test weights must be nonnegative")
    if not 0 < beta <= 1:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    order = np.argsort(scores, kind="stable")
    s, w = scores[order], weights[order]
    cum = np.cumsum(w)
    total = cum[-1] + test_weights
    out = np.full(test_weights.shape, math.inf)
    ok = np.isfinite(test_weights) & (total > 0)
    # cum / total >= beta  <=>  cum >= beta * total (total > 0)
    k = np.searchsorted(cum, beta * total[ok] * (1 - _MASS_RTOL), side="left")
    res = np.full(k.shape, math.inf)
    hit = k < len(s)
    res[hit] = s[k[hit]]
    out[ok] = res
    return out


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    calib: np.ndarray

    def __post_init__(self):
        tr = np.asarray(self.train, dtype=np.intp)
        ca = np.asarray(self.calib, dtype=np.intp)
        if np.intersect1d(tr, ca).size:
            raise ValueError("train and calibration indices overlap")
        object.__setattr__(self, "train", tr)
        object.__setattr__(self, "calib", ca)

    @property
    def n(self) -> int:
        return len(self.train) + len(self.calib)


def split(n: int, train_frac: float = 0.75, rng=None) -> SplitIndices:
    """Uniformly random partition of ``range(n)`` into train/calibration folds.

    The train fold has ``floor(train_frac * n)`` rows (at least one) and
    the calibration fold the remainder (at least one).
    """
    n = int(n)
    if n < 2:
        raise ValueError(f"need at least 2 rows to split, got {n}")
    if not 0 < train_frac < 1:
        raise ValueError(f"train_frac must lie in (0, 1), got {train_frac}")
    rng = np.random.default_rng(rng)
    n_train = min(max(int(math.floor(train_frac * n)), 1), n - 1)
    perm = rng.permutation(n)
    return SplitIndices(np.sort(perm[:n_train]), np.sort(perm[n_train:]))


@dataclass(frozen=True)
class QuantilePair:
    alpha_lo: float
    alpha_hi: float

    def __post_init__(self):
        if not (0 < self.alpha_lo < self.alpha_hi < 1):
            raise ValueError(
                f"need 0 < alpha_lo < alpha_hi < 1, got ({self.alpha_lo}, {self.alpha_hi})"
            )

    @classmethod
    def symmetric(cls, alpha: float) -> "QuantilePair":
        return cls(alpha / 2, 1 - alpha / 2)


@dataclass(frozen=True)
class ObservedSample:
    x: np.ndarray
    t: int
    y_obs: float


@dataclass(frozen=True)
class Dataset:
    """Observed study rows ``(x, t, y_obs)`` stored column-wise."""

    X: np.ndarray
    t: np.ndarray
    y: np.ndarray
    feature_names: tuple = field(default=(), compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be 2-D")
        t = np.asarray(self.t)
        y = np.asarray(self.y, dtype=float)
        if not (len(X) == len(t) == len(y)):
            raise ValueError("X, t and y must have the same number of rows")
        if np.isnan(X).any():
            raise ValueError("covariates contain NaN")
        if not np.isin(t, (0, 1)).all():
            raise ValueError("treatment must be binary 0/1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "t", t.astype(np.int64))
        object.__setattr__(self, "y", y)

    @classmethod
    def from_samples(cls, samples: Iterable[ObservedSample]) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise ValueError("empty dataset")
        dims = {len(np.atleast_1d(s.x)) for s in samples}
        if len(dims) != 1:
            raise ValueError("samples have inconsistent covariate dimension")
        return cls(
            np.array([np.atleast_1d(s.x) for s in samples], dtype=float),
            np.array([s.t for s in samples]),
            np.array([s.y_obs for s in samples], dtype=float),
        )

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return len(self.y)

    def __iter__(self) -> Iterator[ObservedSample]:
        for x, t, y in zip(self.X, self.t, self.y):
            yield ObservedSample(x, int(t), float(y))

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.t[idx], self.y[idx], self.feature_names)
