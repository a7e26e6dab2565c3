"""Batch front-end: ``confcausal run <config>`` and ``confcausal summarize <report...>``."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .causal import CounterfactualConformal, IteMethod, IteMethodKind, NaiveITE, NestedITE
from .core import Dataset
from .learners import GradientBoostingPropensity, QuantileGradientBoosting
from .simbench import (ScenarioConfig, average_length, conditional_coverage, generate,
                       marginal_coverage, propensity_true)

log = logging.getLogger("confcausal")

METHODS = ("counterfactual", "naive", "nested-exact", "nested-inexact")
N_BINS = 10


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mode: str = "synthetic"
    method: str = "naive"
    target: str = "ATE"
    arm: int = 1
    alpha: float = 0.05
    gamma: Optional[float] = None
    replicates: int = 1
    seed: int = 0
    output_dir: str = "results"
    train_frac: float = 0.75
    fold_frac: float = 0.5
    inexact_lo: float = 0.40
    inexact_hi: float = 0.60
    propensity: str = "boosted"
    # synthetic scenario
    d: int = 10
    rho: float = 0.0
    heteroscedastic: bool = False
    n: int = 1000
    n_test: int = 10000
    stratify: str = "sigma2"
    # csv ingestion
    data_path: Optional[str] = None
    test_path: Optional[str] = None
    treatment: str = "t"
    outcome: str = "y"
    covariates: str = "rest"
    # quantile learner
    n_trees: int = 200
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 10
    subsample: float = 1.0
    # propensity learner
    prop_n_trees: int = 100
    prop_max_depth: int = 1
    prop_learning_rate: float = 0.1
    prop_min_leaf: int = 10
    prop_subsample: float = 0.5

    def validate(self) -> "ExperimentConfig":
        def bad(key, msg):
            raise ConfigError(f"{key}: {msg}")

        if self.mode not in ("synthetic", "csv"):
            bad("mode", f"expected synthetic or csv, got {self.mode!r}")
        if self.method not in METHODS:
            bad("method", f"expected one of {', '.join(METHODS)}, got {self.method!r}")
        if self.target not in ("ATE", "ATT", "ATC"):
            bad("target", f"expected ATE, ATT or ATC, got {self.target!r}")
        if self.arm not in (0, 1):
            bad("arm", "must be 0 or 1")
        if not 0 < self.alpha < 1:
            bad("alpha", "must lie in (0, 1)")
        if self.method == "nested-exact" and self.gamma is None:
            bad("gamma", "required when method = nested-exact")
        if self.gamma is not None and not 0 < self.gamma < 1:
            bad("gamma", "must lie in (0, 1)")
        if self.replicates < 1:
            bad("replicates", "must be >= 1")
        for key in ("train_frac", "fold_frac", "inexact_lo", "inexact_hi"):
            if not 0 < getattr(self, key) < 1:
                bad(key, "must lie in (0, 1)")
        if self.propensity not in ("boosted", "true"):
            bad("propensity", "expected boosted or true")
        if self.propensity == "true" and self.mode != "synthetic":
            bad("propensity", "true propensity is only known in synthetic mode")
        if self.stratify not in ("sigma2", "cate"):
            bad("stratify", "expected sigma2 or cate")
        if self.mode == "synthetic":
            try:
                self.scenario(0)
            except ValueError as exc:
                bad("scenario", str(exc))
        elif not self.data_path:
            bad("data_path", "required when mode = csv")
        return self

    def scenario(self, seed: int) -> ScenarioConfig:
        return ScenarioConfig(d=self.d, rho=self.rho, heteroscedastic=self.heteroscedastic,
                              n=self.n, n_test=self.n_test, seed=seed)

    def quantile_params(self) -> dict:
        return dict(n_estimators=self.n_trees, max_depth=self.max_depth,
                    learning_rate=self.learning_rate, min_samples_leaf=self.min_leaf,
                    subsample=self.subsample)

    def propensity_params(self) -> dict:
        return dict(n_estimators=self.prop_n_trees, max_depth=self.prop_max_depth,
                    learning_rate=self.prop_learning_rate, min_samples_leaf=self.prop_min_leaf,
                    subsample=self.prop_subsample)


def _field_types():
    hints = {"Optional[float]": float, "Optional[str]": str, "float": float, "int": int,
             "bool": bool, "str": str}
    return {f.name: hints[f.type] for f in fields(ExperimentConfig)}


def _parse_value(key, raw, typ):
    if raw.lower() in ("", "none"):
        return None
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None


def parse_config(text: str) -> ExperimentConfig:
    types = _field_types()
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{key}: unknown key (line {lineno})")
        values[key] = _parse_value(key, raw, types[key])
    for key, val in values.items():
        if val is None and ExperimentConfig.__dataclass_fields__[key].default is not None:
            raise ConfigError(f"{key}: a value is required")
    return ExperimentConfig(**values).validate()


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def dump_config(config: ExperimentConfig) -> str:
    lines = []
    for f in fields(config):
        val = getattr(config, f.name)
        if val is None:
            continue
        if isinstance(val, float):
            val = format(val, ".17g")
        elif isinstance(val, bool):
            val = "true" if val else "false"
        lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


class CsvError(ValueError):
    pass


def ingest_csv(path, treatment="t", outcome="y", covariates="rest") -> Dataset:
    """Read an observational study with a header row into a :class:`Dataset`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvError(f"{path}: empty file, header row required") from None
        cov_names = _covariate_names(header, treatment, outcome, covariates)
        missing = [c for c in (treatment, outcome, *cov_names) if c not in header]
        if missing:
            raise CsvError(f"{path}: missing column(s): {', '.join(missing)}")
        ti, yi = header.index(treatment), header.index(outcome)
        xi = [header.index(c) for c in cov_names]
        X, t, y = [], [], []
        for row_no, row in enumerate(reader, 1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CsvError(f"{path}: row {row_no}: expected {len(header)} cells, got {len(row)}")
            tv = row[ti].strip()
            if tv not in ("0", "1", "0.0", "1.0"):
                raise CsvError(f"{path}: row {row_no}: treatment value {tv!r} is not 0/1")
            t.append(int(float(tv)))
            y.append(_finite(row[yi], path, row_no, outcome))
            X.append([_finite(row[j], path, row_no, header[j]) for j in xi])
    if not y:
        raise CsvError(f"{path}: no data rows")
    return Dataset(np.array(X, dtype=float).reshape(len(y), len(xi)), np.array(t),
                   np.array(y), tuple(cov_names))


def read_covariates(path, names) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        missing = [c for c in names if c not in header]
        if missing:
            raise CsvError(f"{path}: missing column(s): {', '.join(missing)}")
        idx = [header.index(c) for c in names]
        rows = [[_finite(r[j], path, k, header[j]) for j in idx]
                for k, r in enumerate(reader, 1) if r]
    return np.array(rows, dtype=float).reshape(len(rows), len(names))


def _covariate_names(header, treatment, outcome, covariates):
    if isinstance(covariates, str):
        if covariates.strip() == "rest":
            return [h for h in header if h not in (treatment, outcome)]
        covariates = [c.strip() for c in covariates.split(",") if c.strip()]
    return list(covariates)


def _finite(cell, path, row_no, col):
    try:
        v = float(cell)
    except ValueError:
        raise CsvError(f"{path}: row {row_no}: column {col!r}: non-numeric value {cell!r}") from None
    if not math.isfinite(v):
        raise CsvError(f"{path}: row {row_no}: column {col!r}: non-finite value {cell!r}")
    return v


def fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return ""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def build_estimator(config: ExperimentConfig, seed: int, propensity=None):
    qp = dict(config.quantile_params(), random_state=seed)
    if propensity is None:
        propensity = GradientBoostingPropensity(**config.propensity_params(), random_state=seed)
    if config.method == "counterfactual":
        a = config.alpha
        learners = (QuantileGradientBoosting(quantile=a / 2, **qp),
                    QuantileGradientBoosting(quantile=1 - a / 2, **qp))
        return CounterfactualConformal(arm=config.arm, alpha=a, target=config.target,
                                       propensity=propensity, learners=learners,
                                       train_frac=config.train_frac, random_state=seed)
    if config.method == "naive":
        a = config.alpha / 2
        learners = (QuantileGradientBoosting(quantile=a / 2, **qp),
                    QuantileGradientBoosting(quantile=1 - a / 2, **qp))
        return NaiveITE(alpha=config.alpha, target=config.target, propensity=propensity,
                        learners=learners, train_frac=config.train_frac, random_state=seed)
    exact = config.method == "nested-exact"
    a = config.alpha
    learners = (QuantileGradientBoosting(quantile=a / 2, **qp),
                QuantileGradientBoosting(quantile=1 - a / 2, **qp))
    if exact:
        endpoint = (QuantileGradientBoosting(quantile=0.5, **qp),
                    QuantileGradientBoosting(quantile=0.5, **qp))
    else:
        endpoint = (QuantileGradientBoosting(quantile=config.inexact_lo, **qp),
                    QuantileGradientBoosting(quantile=config.inexact_hi, **qp))
    method = IteMethod(IteMethodKind(config.method), config.alpha, config.gamma,
                       (config.inexact_lo, config.inexact_hi))
    return NestedITE.from_method(method, propensity=propensity, learners=learners,
                                 endpoint_learners=endpoint, fold_frac=config.fold_frac,
                                 train_frac=config.train_frac, random_state=seed)


def report_columns():
    return (["replicate", "method", "alpha", "coverage", "avg_length"]
            + [f"cc_{b + 1}" for b in range(N_BINS)]
            + ["share_positive_lower", "share_negative_upper"])


def _true_propensity(X):
    return propensity_true(X[:, 0])


def run_replicate(config: ExperimentConfig, r: int, data=None):
    """Run one replicate; returns ``(report_row, bands)``."""
    seed = config.seed + r
    truth = None
    if config.mode == "synthetic":
        train, test = generate(config.scenario(seed))
        X_test, truth = test.X, test
        prop = _true_propensity if config.propensity == "true" else None
    else:
        train, X_test = data
        prop = None
    model = build_estimator(config, seed, prop).fit(train.X, train.t, train.y)
    bands = model.predict(X_test)
    row = {"replicate": r, "method": config.method, "alpha": config.alpha}
    row["avg_length"] = average_length(bands)
    with np.errstate(invalid="ignore"):
        row["share_positive_lower"] = float(np.mean(bands[:, 0] > 0))
        row["share_negative_upper"] = float(np.mean(bands[:, 1] < 0))
    if truth is not None:
        target = truth.y1 if config.method == "counterfactual" and config.arm == 1 else (
            truth.y0 if config.method == "counterfactual" else truth.tau)
        row["coverage"] = marginal_coverage(bands, target)
        strat = truth.sigma2 if config.stratify == "sigma2" else truth.cate
        for b, c in conditional_coverage(bands, target, strat, N_BINS):
            row[f"cc_{b + 1}"] = c
    return row, bands


def _safe_replicate(args):
    config, r, data = args
    try:
        return r, run_replicate(config, r, data), None
    except Exception as exc:  # a failed replicate is logged, not fatal
        return r, None, f"{type(exc).__name__}: {exc}"


def write_intervals(path, bands):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "lo", "hi"])
        for i, (lo, hi) in enumerate(bands):
            w.writerow([i, fmt(lo), fmt(hi)])


def read_intervals(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([[float(r["lo"]), float(r["hi"])] for r in rows], dtype=float).reshape(-1, 2)


def aggregate_row(rows, method, alpha):
    out = {"replicate": "mean", "method": method, "alpha": alpha}
    for col in report_columns()[3:]:
        vals = [r[col] for r in rows if r.get(col) is not None]
        out[col] = math.fsum(vals) / len(vals) if vals else None
    return out


def run(config: ExperimentConfig, jobs: int = 1, output_dir=None) -> int:
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = None
    if config.mode == "csv":
        train = ingest_csv(config.data_path, config.treatment, config.outcome, config.covariates)
        X_test = (read_covariates(config.test_path, list(train.feature_names))
                  if config.test_path else train.X)
        data = (train, X_test)
    tasks = [(config, r, data) for r in range(config.replicates)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_safe_replicate, tasks))
    else:
        results = [_safe_replicate(t) for t in tasks]
    results.sort(key=lambda res: res[0])

    rows, failed = [], 0
    for r, res, err in results:
        if err is not None:
            failed += 1
            log.error("replicate %d failed: %s", r, err)
            continue
        row, bands = res
        rows.append(row)
        write_intervals(out / f"intervals_{r}.csv", bands)

    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = report_columns()
        w.writerow(cols)
        all_rows = rows + ([aggregate_row(rows, config.method, config.alpha)] if rows else [])
        for row in all_rows:
            w.writerow([row["replicate"], row["method"], fmt(row["alpha"])]
                       + [fmt(row.get(c)) for c in cols[3:]])
    log.info("wrote %s (%d replicates, %d failed)", out / "report.csv", len(rows), failed)
    return 1 if failed * 2 > config.replicates else 0


def read_report(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise CsvError(f"{path}: unreadable report ({exc})") from None
    if not rows or "coverage" not in rows[0]:
        raise CsvError(f"{path}: not a report.csv")
    return rows


def _num(s):
    return float(s) if s not in ("", None) else None


def summarize(paths, stream=None) -> list:
    """Print one line per (report, method): coverage mean and 5%/95% quantiles, mean length."""
    stream = stream or sys.stdout
    table = []
    for path in paths:
        rows = [r for r in read_report(path) if r["replicate"] != "mean"]
        for method in dict.fromkeys(r["method"] for r in rows):
            sub = [r for r in rows if r["method"] == method]
            cov = np.array([_num(r["coverage"]) for r in sub if _num(r["coverage"]) is not None])
            lens = np.array([_num(r["avg_length"]) for r in sub], dtype=float)
            table.append({
                "report": str(path), "method": method, "replicates": len(sub),
                "coverage_mean": float(cov.mean()) if cov.size else None,
                "coverage_q05": float(np.quantile(cov, 0.05)) if cov.size else None,
                "coverage_q95": float(np.quantile(cov, 0.95)) if cov.size else None,
                "length_mean": float(lens.mean()),
            })
    headers = ["report", "method", "replicates", "coverage_mean", "coverage_q05",
               "coverage_q95", "length_mean"]

    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    cells = [[cell(row[h]) for h in headers] for row in table]
    widths = [max(len(h), *(len(c[i]) for c in cells)) if cells else len(h)
              for i, h in enumerate(headers)]
    print("  ".join(h.ljust(w) for h, w in zip(headers, widths)), file=stream)
    for c in cells:
        print("  ".join(v.ljust(w) for v, w in zip(c, widths)), file=stream)
    return table


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="confcausal",
                                     description="Conformal counterfactual and ITE intervals.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment described by a config file")
    p_run.add_argument("config")
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--output", default=None, help="output directory (overrides config)")
    p_sum = sub.add_parser("summarize", help="tabulate one or more report.csv files")
    p_sum.add_argument("reports", nargs="+")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            return run(load_config(args.config), jobs=max(1, args.jobs), output_dir=args.output)
        summarize(args.reports)
        return 0
    except (ConfigError, CsvError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
