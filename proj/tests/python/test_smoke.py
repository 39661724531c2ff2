import csv
import json
from pathlib import Path

import pytest

import rdl

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
TINY = "synthetic:classes=3,train=6,test=3,size=8,seed=5"


def test_analyze_matches_the_per_layer_sum():
    report = rdl.analyze(rdl.build_spec("wrn", 22, 2, "g=2"))
    assert round(report["totals"]["flops"] / 1e6, 2) == 93.65
    assert report["totals"]["params"] == sum(layer["params"] for layer in report["per_layer"])


def test_residual_switch_only_changes_shortcuts():
    r = rdl.analyze(rdl.build_spec("resnet18", policy="G=8", residual=True))
    nr = rdl.analyze(rdl.build_spec("resnet18", policy="G=8", residual=False))
    assert r["totals"]["params"] - nr["totals"]["params"] == sum(
        layer["params"] for layer in r["per_layer"] if layer["shortcut"])


def test_mobilenet_has_no_projection_shortcuts():
    r = rdl.analyze(rdl.build_spec("mobilenetv2", policy="g=2", residual=True))
    nr = rdl.analyze(rdl.build_spec("mobilenetv2", policy="g=2", residual=False))
    assert r["totals"] == nr["totals"]


def test_cost_table_cells():
    table = rdl.cost_table("wrn", 22, 2, ["g=2", "g=4"])
    assert table["columns"] == ["g=2", "g=4"]
    r, nr = table["rows"]
    assert (r["mode"], nr["mode"]) == ("R", "NR")
    assert r["flops"][0] == rdl.analyze(rdl.build_spec("wrn", 22, 2, "g=2"))["totals"]["flops"]
    assert r["flops"][0] > r["flops"][1]
    assert r["flops"][0] - nr["flops"][0] == r["flops"][1] - nr["flops"][1]


def test_errors_carry_a_code():
    with pytest.raises(rdl.Error) as info:
        rdl.analyze(rdl.build_spec("wrn", 16, 1, "g=3"))
    assert info.value.code == "NonDivisible"
    with pytest.raises(rdl.Error) as info:
        rdl.build_spec("wrn", 15, 1)
    assert info.value.code in {"InvalidDepth", "ConfigError"}


def test_metrics():
    assert rdl.accuracy_drop(73.47, 66.14) == pytest.approx(7.33)
    assert rdl.distillation_gain([70.0, 74.0, 72.0], 73.0) == pytest.approx(1.0)
    assert rdl.format_millions(93647360, 4) == "93.65"


def test_report_on_fixture_results():
    tables, metrics = rdl.report((FIXTURES / "resnet18_results.csv").read_text())
    assert "Acc. drop" in tables
    assert len(list(csv.reader(metrics.splitlines()))) > 1


def test_train_then_distill(tmp_path):
    rdl.set_deterministic(True)
    config = {"schema": "traincfg/1", "sgd": {"epochs": 2, "batch_size": 6, "lr0": 0.05, "seed": 1}}
    spec = rdl.build_spec("wrn", 10, 1, "g=2", dropout=0.0, num_classes=3)
    ckpt = tmp_path / "teacher.ckpt"
    first = rdl.train(spec, TINY, json.dumps(config), checkpoint_out=str(ckpt))
    again = rdl.train(spec, TINY, json.dumps(config))
    assert first["history_csv"] == again["history_csv"]
    assert 0 <= first["final_test"] <= 100
    assert rdl.evaluate(spec, str(ckpt), first["normalizer_json"], TINY) == pytest.approx(first["final_test"])

    spec_path = tmp_path / "teacher.json"
    spec_path.write_text(spec)
    config["distill"] = {"temperature": 4.0, "alpha": 0.9, "teacher_checkpoint": str(ckpt),
                         "teacher_spec": str(spec_path)}
    student = rdl.build_spec("wrn", 10, 1, "g=2", residual=False, dropout=0.0, num_classes=3)
    result = rdl.train(student, TINY, json.dumps(config))
    assert len(result["history_csv"].strip().splitlines()) == 3


def test_empty_matrix(tmp_path):
    results, failures = rdl.run_matrix("{}", str(tmp_path))
    assert failures == 0
    assert len(results.strip().splitlines()) == 1


def test_projection_separates_blobs():
    rows = [[0.0, 0.1, 0.0], [0.1, 0.0, 0.0], [0.0, 0.0, 0.1], [5.0, 5.1, 5.0], [5.1, 5.0, 5.0]]
    points = rdl.project_2d(rows, [0, 0, 0, 1, 1])
    xs = [p[0] for p in points]
    assert max(xs[:3]) < min(xs[3:]) or min(xs[:3]) > max(xs[3:])
