import csv
import json
from pathlib import Path

import numpy as np
import pytest

from shortcutiw.cli import main
from shortcutiw.synthdata import write_synthetic_cifar


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("cifar")
    write_synthetic_cifar(path, classes=(1, 6), train_per_class=5000,
                          test_per_class=1000, seed=2)
    return path


def _write_config(tmp_path, data_dir, out_name="out", **overrides):
    doc = {
        "data_dir": str(data_dir),
        "output_dir": str(tmp_path / out_name),
        "class_pair": [1, 6],
        "shortcut": {"kind": "local", "prevalence": 0.3},
        "lcn": {"epochs": 2},
        "hcn": {"arch": "vgg-mini", "epochs": 2},
        "conditions": ["ordinary", "lcn_iw"],
        "num_runs": 1,
        "base_seed": 11,
        "desk_scale": {"enabled": True, "train_per_class": 64, "val_per_class": 16,
                       "hcn_epochs": 2, "lcn_epochs": 2},
    }
    doc.update(overrides)
    path = tmp_path / f"config_{out_name}.json"
    path.write_text(json.dumps(doc))
    return path


class TestRunCommand:
    def test_invalid_prevalence_exits_2_naming_field(self, tmp_path, data_dir, capsys):
        cfg = _write_config(tmp_path, data_dir,
                            shortcut={"kind": "local", "prevalence": 1.5})
        assert main(["run", "--config", str(cfg)]) == 2
        assert "shortcut.prevalence" in capsys.readouterr().err

    def test_malformed_json_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["run", "--config", str(bad)]) == 2
        assert "JSON" in capsys.readouterr().err

    def test_missing_config_exits_2(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "absent.json")]) == 2

    def test_missing_data_exits_3(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, tmp_path / "no-data")
        assert main(["run", "--config", str(cfg)]) == 3
        assert "data_batch_1.bin" in capsys.readouterr().err

    def test_valid_run_writes_result_json(self, tmp_path, data_dir, capsys):
        cfg = _write_config(tmp_path, data_dir)
        assert main(["run", "--config", str(cfg)]) == 0
        result = json.loads((tmp_path / "out" / "run_00" / "result.json").read_text())
        assert {r["condition"] for r in result} == {"ordinary", "lcn_iw"}
        for rec in result:
            assert set(rec) == {"schema_version", "pair", "shortcut_kind", "condition", "run",
                                "acc_congruent", "acc_incongruent", "acc_neutral", "G", "L", "OB"}
        assert "artifacts" in capsys.readouterr().out

    def test_identical_config_reproduces_bytes(self, tmp_path, data_dir):
        cfg_a = _write_config(tmp_path, data_dir, out_name="out_a")
        cfg_b = _write_config(tmp_path, data_dir, out_name="out_b")
        assert main(["run", "--config", str(cfg_a)]) == 0
        assert main(["run", "--config", str(cfg_b)]) == 0
        a = (tmp_path / "out_a" / "run_00" / "result.json").read_bytes()
        b = (tmp_path / "out_b" / "run_00" / "result.json").read_bytes()
        assert a == b

    def test_output_dir_and_desk_scale_flags(self, tmp_path, data_dir):
        cfg = _write_config(tmp_path, data_dir, desk_scale={"enabled": False,
                                                            "train_per_class": 64,
                                                            "val_per_class": 16,
                                                            "hcn_epochs": 2, "lcn_epochs": 2},
                            hcn={"arch": "vgg-mini", "epochs": 1},
                            lcn={"epochs": 1}, conditions=["ordinary"])
        out = tmp_path / "override"
        assert main(["run", "--config", str(cfg), "--output-dir", str(out), "--desk-scale"]) == 0
        snapshot = json.loads((out / "config.json").read_text())
        assert snapshot["desk_scale"]["enabled"] is True
        assert snapshot["output_dir"] == str(out)


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory, data_dir):
    tmp_path = tmp_path_factory.mktemp("finished")
    cfg = _write_config(tmp_path, data_dir, num_runs=2)
    assert main(["run", "--config", str(cfg)]) == 0
    return tmp_path / "out"


class TestInspectIws:
    def test_report_has_50_rows(self, finished_run, tmp_path, capsys):
        iws = finished_run / "run_00" / "lcn_iw" / "iws.csv"
        manifest = finished_run / "run_00" / "manifest.csv"
        out = tmp_path / "report.csv"
        assert main(["inspect-iws", "--iws", str(iws), "--manifest", str(manifest),
                     "--out", str(out)]) == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 50
        printed = capsys.readouterr().out
        assert "bottom 30%" in printed

    def test_csv_reparses_to_same_counts(self, finished_run, tmp_path):
        from shortcutiw.metrics import iw_distribution_report
        from shortcutiw.shortcuts import read_manifest
        from shortcutiw.weighting import read_iw_table
        iws = finished_run / "run_00" / "lcn_iw" / "iws.csv"
        manifest = finished_run / "run_00" / "manifest.csv"
        out = tmp_path / "report.csv"
        assert main(["inspect-iws", "--iws", str(iws), "--manifest", str(manifest),
                     "--out", str(out)]) == 0
        report = iw_distribution_report(read_iw_table(iws), read_manifest(manifest))
        rows = list(csv.DictReader(out.open()))
        assert [int(r["count_shortcut"]) for r in rows] == report["count_shortcut"]
        assert [int(r["count_clean"]) for r in rows] == report["count_clean"]

    def test_empty_iw_file_exits_2(self, finished_run, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("index,class,shortcut_flag,weight\n")
        manifest = finished_run / "run_00" / "manifest.csv"
        assert main(["inspect-iws", "--iws", str(empty), "--manifest", str(manifest)]) == 2

    def test_index_mismatch_exits_2(self, finished_run, tmp_path):
        iws = finished_run / "run_00" / "lcn_iw" / "iws.csv"
        manifest = tmp_path / "manifest.csv"
        manifest.write_text("source_index,class,split_role,shortcut_flag\n0,0,train,0\n")
        assert main(["inspect-iws", "--iws", str(iws), "--manifest", str(manifest)]) == 2


class TestAggregate:
    def test_groups_runs(self, finished_run, tmp_path, capsys):
        out = tmp_path / "agg.csv"
        pattern = str(finished_run / "run_*" / "result.json")
        assert main(["aggregate", "--glob", pattern, "--out", str(out)]) == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 2  # two conditions, one pair
        by_condition = {r["condition"]: r for r in rows}
        assert by_condition["ordinary"]["n_runs"] == "2"

    def test_single_file_means_equal_values(self, finished_run, tmp_path):
        out = tmp_path / "agg1.csv"
        pattern = str(finished_run / "run_00" / "result.json")
        assert main(["aggregate", "--glob", pattern, "--out", str(out)]) == 0
        rows = {r["condition"]: r for r in csv.DictReader(out.open())}
        source = json.loads((finished_run / "run_00" / "result.json").read_text())
        for rec in source:
            assert float(rows[rec["condition"]]["mean_OB"]) == pytest.approx(rec["OB"], abs=1e-9)
            assert float(rows[rec["condition"]]["std_OB"]) == 0.0

    def test_rerun_byte_identical(self, finished_run, tmp_path):
        pattern = str(finished_run / "run_*" / "result.json")
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["aggregate", "--glob", pattern, "--out", str(a)]) == 0
        assert main(["aggregate", "--glob", pattern, "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_no_matches_exits_2(self, tmp_path):
        assert main(["aggregate", "--glob", str(tmp_path / "nope*.json"),
                     "--out", str(tmp_path / "agg.csv")]) == 2

    def test_mixed_schema_exits_2(self, tmp_path):
        good = {"schema_version": 1, "pair": [1, 6], "shortcut_kind": "local",
                "condition": "ordinary", "run": 0, "acc_congruent": 1.0,
                "acc_incongruent": 1.0, "acc_neutral": 1.0, "G": 0.0, "L": 0.0, "OB": 0.0}
        bad = dict(good, schema_version=2)
        (tmp_path / "r1.json").write_text(json.dumps([good]))
        (tmp_path / "r2.json").write_text(json.dumps([bad]))
        assert main(["aggregate", "--glob", str(tmp_path / "r*.json"),
                     "--out", str(tmp_path / "agg.csv")]) == 2


def test_synth_data_command(tmp_path):
    assert main(["synth-data", "--data-dir", str(tmp_path / "d"), "--classes", "0,1",
                 "--train-per-class", "50", "--test-per-class", "10", "--seed", "4"]) == 0
    assert (tmp_path / "d" / "data_batch_5.bin").exists()
    assert (tmp_path / "d" / "test_batch.bin").exists()
