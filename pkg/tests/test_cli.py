import csv
import io
import math

import numpy as np
import pytest

from confcausal.cli import (
    ConfigError,
    CsvError,
    ExperimentConfig,
    aggregate_row,
    dump_config,
    ingest_csv,
    main,
    parse_config,
    read_intervals,
    read_report,
    report_columns,
    run,
    summarize,
    write_intervals,
)

SMALL = """
method = counterfactual
alpha = 0.1
replicates = 3
n = 300
n_test = 200
d = 4
n_trees = 15
prop_n_trees = 10
"""


def write(path, text):
    path.write_text(text)
    return path


class TestConfig:
    def test_defaults(self):
        cfg = parse_config("method = naive\n")
        assert cfg.alpha == 0.05 and cfg.n == 1000 and cfg.replicates == 1
        assert cfg.d == 10 and cfg.target == "ATE" and cfg.gamma is None

    def test_nested_exact_requires_gamma(self):
        with pytest.raises(ConfigError, match="gamma"):
            parse_config("method = nested-exact\nalpha = 0.025\n")

    def test_unknown_key_and_bad_value(self):
        with pytest.raises(ConfigError, match="colour"):
            parse_config("colour = red\n")
        with pytest.raises(ConfigError, match="alpha"):
            parse_config("alpha = lots\n")
        with pytest.raises(ConfigError, match="alpha"):
            parse_config("alpha = 1.5\n")
        with pytest.raises(ConfigError, match="data_path"):
            parse_config("mode = csv\n")

    def test_round_trip(self):
        cfg = parse_config("method = nested-exact\nalpha = 0.025\ngamma = 0.025\n"
                           "heteroscedastic = true\nrho = 0.9\nseed = 7\n")
        assert parse_config(dump_config(cfg)) == cfg

    def test_large_scale_study_is_expressible(self):
        cfg = parse_config("method = nested-exact\nalpha = 0.025\ngamma = 0.025\n"
                           "replicates = 100\nn = 5000\nn_test = 10000\nd = 10\n"
                           "heteroscedastic = true\nrho = 0.9\n")
        assert cfg.replicates == 100 and cfg.n == 5000

    def test_comments_are_ignored(self):
        assert parse_config("# study\nalpha = 0.2  # level\n").alpha == 0.2


class TestIngest:
    def test_example(self, tmp_path):
        p = write(tmp_path / "d.csv", "x1,t,x2,y\n0.1,1,5,2.5\n0.2,0,6,-1\n0.3,1,7,0\n")
        ds = ingest_csv(p)
        assert ds.feature_names == ("x1", "x2")
        np.testing.assert_array_equal(ds.X, [[0.1, 5], [0.2, 6], [0.3, 7]])
        np.testing.assert_array_equal(ds.t, [1, 0, 1])
        np.testing.assert_array_equal(ds.y, [2.5, -1, 0])

    def test_explicit_covariate_order(self, tmp_path):
        p = write(tmp_path / "d.csv", "a,b,t,y\n1,2,0,0\n3,4,1,1\n")
        ds = ingest_csv(p, covariates="b,a")
        np.testing.assert_array_equal(ds.X, [[2, 1], [4, 3]])

    def test_non_binary_treatment_names_row(self, tmp_path):
        rows = "".join(f"{i},{i % 2},0\n" for i in range(4)) + "9,2,0\n"
        p = write(tmp_path / "d.csv", "x,t,y\n" + rows)
        with pytest.raises(CsvError, match="row 5"):
            ingest_csv(p)

    def test_missing_column_and_non_numeric(self, tmp_path):
        with pytest.raises(CsvError, match="missing column"):
            ingest_csv(write(tmp_path / "a.csv", "x,y\n1,2\n"))
        with pytest.raises(CsvError, match="row 2"):
            ingest_csv(write(tmp_path / "b.csv", "x,t,y\n1,0,2\nabc,1,3\n"))


class TestOutputs:
    def test_interval_round_trip_with_infinities(self, tmp_path):
        bands = np.array([[-math.inf, math.inf], [0.1, 1 / 3], [-2.5, -2.5]])
        write_intervals(tmp_path / "i.csv", bands)
        np.testing.assert_array_equal(read_intervals(tmp_path / "i.csv"), bands)

    def test_aggregate_is_replicate_mean(self):
        rows = [{c: float(i + k) for k, c in enumerate(report_columns()[3:])} for i in range(4)]
        agg = aggregate_row(rows, "naive", 0.05)
        for c in report_columns()[3:]:
            assert abs(agg[c] - np.mean([r[c] for r in rows])) <= 1e-12


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg_path = write(root / "small.cfg", SMALL)
    assert main(["run", str(cfg_path), "--output", str(root / "a")]) == 0
    return root, cfg_path


class TestRun:
    def test_report_layout(self, small_run):
        root, _ = small_run
        rows = read_report(root / "a" / "report.csv")
        assert [r["replicate"] for r in rows] == ["0", "1", "2", "mean"]
        assert list(rows[0]) == report_columns()
        for r in rows:
            assert 0 <= float(r["coverage"]) <= 1
        covs = [float(r["coverage"]) for r in rows[:3]]
        assert float(rows[3]["coverage"]) == pytest.approx(np.mean(covs), abs=1e-12)
        assert len(read_intervals(root / "a" / "intervals_0.csv")) == 200

    def test_byte_identical_rerun_and_parallel(self, small_run):
        root, cfg_path = small_run
        assert main(["run", str(cfg_path), "--output", str(root / "b"), "--jobs", "2"]) == 0
        for name in ("report.csv", "intervals_2.csv"):
            assert (root / "a" / name).read_bytes() == (root / "b" / name).read_bytes()

    def test_csv_mode_has_no_coverage(self, tmp_path):
        rng = np.random.default_rng(0)
        n = 200
        X = rng.uniform(size=(n, 2))
        t = rng.integers(0, 2, size=n)
        y = t * X[:, 0] + rng.normal(size=n)
        with open(tmp_path / "obs.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "t", "y"])
            w.writerows(zip(X[:, 0], X[:, 1], t, y))
        cfg = parse_config(f"mode = csv\ndata_path = {tmp_path / 'obs.csv'}\nmethod = naive\n"
                           "alpha = 0.2\nn_trees = 10\nprop_n_trees = 10\n")
        assert run(cfg, output_dir=tmp_path / "out") == 0
        rows = read_report(tmp_path / "out" / "report.csv")
        assert rows[0]["coverage"] == "" and rows[0]["cc_1"] == ""
        assert float(rows[0]["share_positive_lower"]) >= 0

    def test_majority_failure_exits_nonzero(self, tmp_path):
        # every row treated: the control arm is empty so each replicate fails
        with open(tmp_path / "obs.csv", "w") as fh:
            fh.write("x,t,y\n" + "".join(f"{i / 50},1,{i % 7}\n" for i in range(50)))
        cfg = write(tmp_path / "c.cfg", f"mode = csv\ndata_path = {tmp_path / 'obs.csv'}\n"
                                        "replicates = 2\nn_trees = 5\n")
        assert main(["run", str(cfg), "--output", str(tmp_path / "out")]) == 1

    def test_config_errors_exit_2(self, tmp_path):
        cfg = write(tmp_path / "c.cfg", "method = nested-exact\n")
        assert main(["run", str(cfg)]) == 2
        assert main(["run", str(tmp_path / "missing.cfg")]) == 2


class TestSummarize:
    def _report(self, path, covs, lens, method="naive"):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(report_columns())
            for i, (c, L) in enumerate(zip(covs, lens)):
                w.writerow([i, method, 0.05, c, L] + [""] * 12)
            w.writerow(["mean", method, 0.05, np.mean(covs), np.mean(lens)] + [""] * 12)
        return path

    def test_table(self, tmp_path):
        p = self._report(tmp_path / "r.csv", [0.9, 0.95, 1.0], [3.0, 4.0, 5.0])
        q = self._report(tmp_path / "s.csv", [0.5], [1.0], method="nested-exact")
        buf = io.StringIO()
        table = summarize([p, q], buf)
        assert table[0]["replicates"] == 3
        assert table[0]["coverage_mean"] == pytest.approx(0.95)
        assert table[0]["coverage_q05"] == pytest.approx(np.quantile([0.9, 0.95, 1.0], 0.05))
        assert table[0]["length_mean"] == 4.0
        assert table[1]["method"] == "nested-exact"
        lines = buf.getvalue().splitlines()
        assert len(lines) == 3 and lines[0].startswith("report")

    def test_rejects_non_report(self, tmp_path):
        bad = write(tmp_path / "x.csv", "a,b\n1,2\n")
        assert main(["summarize", str(bad)]) == 2

    def test_config_object_defaults(self):
        assert ExperimentConfig().validate().method == "naive"
