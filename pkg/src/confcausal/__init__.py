"""Conformal inference for counterfactuals and individual treatment effects."""

from .causal import (
    CounterfactualConformal,
    IteMethod,
    IteMethodKind,
    NaiveITE,
    NestedITE,
    TargetKind,
    WeightTarget,
    counterfactual_interval,
    naive_ite,
    nested_ite,
    surrogate_interval,
    weight_pair,
)
from .conformal import (
    ConformalResult,
    IntervalConformal,
    WeightedSplitCQR,
    cqr_score,
    interval_conformal,
    weighted_split_cqr,
)
from .core import (
    Dataset,
    Interval,
    ObservedSample,
    QuantilePair,
    SplitIndices,
    WeightedAtom,
    interval_arith,
    split,
    weighted_quantile,
)
from .learners import GradientBoostingPropensity, QuantileGradientBoosting

__version__ = "0.1.0"
