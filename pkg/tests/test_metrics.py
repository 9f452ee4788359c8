import math

import numpy as np
import pytest

from shortcutiw.metrics import (EvalResult, ObResult, accuracy, aggregate_runs,
                                iw_distribution_report, logit, overall_benefit,
                                write_aggregate_csv, write_iw_report_csv)
from shortcutiw.weighting import IwTable


class _StubClassifier:
    """Predicts a fixed label sequence regardless of input."""

    def __init__(self, outputs):
        self.outputs = np.asarray(outputs)

    def predict(self, X):
        return self.outputs[:len(X)]


class TestAccuracy:
    def test_all_correct(self):
        y = np.array([0, 1, 1, 0])
        clf = _StubClassifier(y)
        assert accuracy(clf, np.zeros((4, 1)), y) == 1.0

    def test_constant_classifier_balanced_exact_half(self):
        y = np.array([0] * 1000 + [1] * 1000)
        clf = _StubClassifier(np.zeros(2000, dtype=int))
        assert accuracy(clf, np.zeros((2000, 1)), y) == 0.5

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 2, 101)
        preds = rng.integers(0, 2, 101)
        perm = rng.permutation(101)

        class _Echo:
            def __init__(self, out):
                self.out = out

            def predict(self, X):
                return self.out

        assert (accuracy(_Echo(preds), np.zeros((101, 1)), y)
                == accuracy(_Echo(preds[perm]), np.zeros((101, 1)), y[perm]))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            accuracy(_StubClassifier([0]), np.zeros((0, 1)), np.zeros(0))


class TestLogit:
    def test_half_is_zero(self):
        assert logit(0.5, 2000) == 0.0

    def test_point_nine(self):
        assert logit(0.9, 2000) == pytest.approx(math.log(9), abs=1e-9)
        assert logit(0.9, 2000) == pytest.approx(2.19722, abs=1e-4)

    def test_clamp_at_one(self):
        val = logit(1.0, 2000)
        eps = 1 / 4000
        assert val == pytest.approx(math.log((1 - eps) / eps), abs=1e-9)
        assert val == pytest.approx(8.294, abs=1e-3)

    def test_clamp_at_zero_symmetric(self):
        assert logit(0.0, 2000) == pytest.approx(-logit(1.0, 2000), abs=1e-12)

    def test_strictly_increasing(self):
        n = 500
        ps = np.linspace(0.01, 0.99, 37)
        vals = [logit(p, n) for p in ps]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_antisymmetry(self):
        for p in (0.0, 0.2, 0.5, 0.77, 1.0):
            assert logit(p, 321) == pytest.approx(-logit(1 - p, 321), abs=1e-12)

    def test_domain_checked(self):
        with pytest.raises(ValueError):
            logit(1.2, 100)


def _eval(cong, incong, neut, condition="lcn_iw", run=0, n=2000):
    return EvalResult(condition=condition, run=run, acc_congruent=cong,
                      acc_incongruent=incong, acc_neutral=neut,
                      n_congruent=n, n_incongruent=n, n_neutral=n)


class TestOverallBenefit:
    def test_identical_gives_zero(self):
        a = _eval(0.9, 0.4, 0.8)
        res = overall_benefit(a, a)
        assert res.gain == res.loss == res.overall_benefit == 0.0

    def test_derived_example(self):
        iw = _eval(0.9, 0.9, 0.8)
        ordinary = _eval(0.9, 0.3, 0.8, condition="ordinary")
        res = overall_benefit(iw, ordinary)
        expected_gain = math.log(9) - math.log(3 / 7)
        assert res.gain == pytest.approx(expected_gain, abs=1e-9)
        assert res.gain == pytest.approx(3.0445, abs=1e-3)
        assert res.loss == 0.0
        assert res.overall_benefit == res.gain

    def test_swap_negates_exactly(self):
        a = _eval(0.95, 0.72, 0.88)
        b = _eval(0.91, 0.35, 0.90, condition="ordinary")
        fwd = overall_benefit(a, b)
        rev = overall_benefit(b, a)
        assert fwd.gain == -rev.gain
        assert fwd.loss == -rev.loss
        assert fwd.overall_benefit == -rev.overall_benefit

    def test_ob_is_sum_exactly(self):
        a = _eval(0.9, 0.7, 0.85)
        b = _eval(0.93, 0.4, 0.87, condition="ordinary")
        res = overall_benefit(a, b)
        assert res.overall_benefit == res.gain + res.loss

    def test_obresult_invariant_enforced(self):
        with pytest.raises(ValueError, match="exactly"):
            ObResult(gain=1.0, loss=0.5, overall_benefit=2.0)


def _iw_table(weights, flags):
    n = len(weights)
    return IwTable(index=np.arange(n, dtype=np.int64),
                   labels=np.zeros(n, dtype=np.int64),
                   shortcut_flags=np.asarray(flags, dtype=bool),
                   weights=np.asarray(weights, dtype=np.float64), producer="LCN")


class TestIwDistributionReport:
    def test_all_zero_weights_single_bin(self):
        report = iw_distribution_report(_iw_table(np.zeros(30), np.zeros(30)))
        occupied = [i for i, c in enumerate(report["count_clean"]) if c]
        assert occupied == [0]
        assert sum(report["count_shortcut"]) == 0

    def test_bottom_shares_monotone_when_flagged_dominate(self):
        # brute-force construction: flagged weights all 0.01, clean all 0.9
        weights = np.array([0.01] * 30 + [0.9] * 70)
        flags = np.array([True] * 30 + [False] * 70)
        report = iw_distribution_report(_iw_table(weights, flags))
        shares = [report["bottom_shares"][str(q)]["flagged_share_of_bottom"]
                  for q in (0.1, 0.2, 0.3)]
        assert shares[0] >= shares[1] >= shares[2]
        assert shares[0] == 1.0
        assert report["bottom_shares"]["0.3"]["flagged_coverage"] == 1.0

    def test_group_counts_partition(self):
        rng = np.random.default_rng(5)
        flags = rng.random(200) < 0.4
        report = iw_distribution_report(_iw_table(rng.uniform(0, 1, 200), flags))
        assert report["counts"]["shortcut"] + report["counts"]["clean"] == 200
        assert sum(report["count_shortcut"]) + sum(report["count_clean"]) == 200

    def test_manifest_mismatch_rejected(self):
        table = _iw_table(np.linspace(0, 1, 10), np.zeros(10))
        manifest = [{"source_index": 99, "class": 0, "split_role": "train", "shortcut_flag": False}]
        with pytest.raises(ValueError, match="manifest"):
            iw_distribution_report(table, manifest)

    def test_manifest_flags_override(self):
        table = _iw_table(np.linspace(0, 0.9, 10), np.zeros(10))
        manifest = [{"source_index": i, "class": 0, "split_role": "train", "shortcut_flag": i < 5}
                    for i in range(10)]
        manifest.append({"source_index": 0, "class": 0, "split_role": "validation",
                         "shortcut_flag": False})
        report = iw_distribution_report(table, manifest)
        assert report["counts"]["shortcut"] == 5

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        report = iw_distribution_report(_iw_table(rng.uniform(0, 1, 80), rng.random(80) < 0.5))
        path = tmp_path / "report.csv"
        write_iw_report_csv(path, report)
        lines = path.read_text().splitlines()
        assert lines[0] == "bin_low,bin_high,count_shortcut,count_clean"
        assert len(lines) == 51
        parsed_s = [int(l.split(",")[2]) for l in lines[1:]]
        assert parsed_s == report["count_shortcut"]


def _record(condition, run, **metrics):
    rec = {"pair": [1, 6], "shortcut_kind": "local", "condition": condition, "run": run,
           "acc_congruent": 0.9, "acc_incongruent": 0.5, "acc_neutral": 0.8,
           "G": 0.0, "L": 0.0, "OB": 0.0}
    rec.update(metrics)
    return rec


class TestAggregateRuns:
    def test_single_run_mean_is_value_std_zero(self):
        rows = aggregate_runs([_record("ordinary", 0, acc_neutral=0.77)])
        assert rows[0]["mean_acc_neutral"] == 0.77
        assert rows[0]["std_acc_neutral"] == 0.0

    def test_two_values_hand_computed(self):
        rows = aggregate_runs([_record("ordinary", 0, OB=0.4), _record("ordinary", 1, OB=0.6)])
        assert rows[0]["mean_OB"] == pytest.approx(0.5)
        assert rows[0]["std_OB"] == pytest.approx(math.sqrt(((0.4 - 0.5) ** 2 + (0.6 - 0.5) ** 2)), abs=1e-12)
        assert rows[0]["std_OB"] == pytest.approx(0.1414, abs=1e-4)

    def test_permutation_invariant(self):
        records = [_record("ordinary", r, OB=v) for r, v in enumerate([0.1, 0.5, 0.9])]
        assert aggregate_runs(records) == aggregate_runs(records[::-1])

    def test_groups_by_condition(self):
        records = [_record(c, r) for c in ("ordinary", "lcn_iw", "hcn_iw") for r in range(10)]
        rows = aggregate_runs(records)
        assert len(rows) == 3
        assert all(r["n_runs"] == 10 for r in rows)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate_runs([])

    def test_csv_deterministic(self, tmp_path):
        records = [_record(c, r, OB=r * 0.1) for c in ("ordinary", "lcn_iw") for r in range(3)]
        write_aggregate_csv(tmp_path / "a.csv", aggregate_runs(records))
        write_aggregate_csv(tmp_path / "b.csv", aggregate_runs(records))
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
