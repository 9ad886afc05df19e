import json
import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from defect_graph import (
    ExperimentReport,
    ModelConfig,
    RunRecord,
    SyntheticConfig,
    compare_reports,
    confusion_and_threshold_metrics,
    generate_synthetic,
    run_cpdp,
    run_cpdp_campaign,
    run_wpdp,
    score_baseline,
    stratified_split,
    summary_table,
)
from defect_graph import protocols
from defect_graph.errors import ExperimentInterrupted, TrainingError, ValidationError
from defect_graph.protocols import report_runs_frame, write_run_dumps

TINY = ModelConfig(hidden_size=8, graph_hops=1, mlp_hidden=(8,), max_epochs=2, lr=0.01)


@pytest.fixture
def dataset():
    return generate_synthetic(SyntheticConfig(n_nodes=40, defect_rate=0.3, separation=2.0), seed=0)


@pytest.fixture
def other_version():
    return generate_synthetic(SyntheticConfig(n_nodes=30, defect_rate=0.3, separation=2.0, version="1.1"), seed=1)


def _report(dataset, method, aucs):
    runs = []
    for i, a in enumerate(aucs):
        # two instances whose AUC is exactly a (a in {0, 0.5, 1})
        probs = [a, 1.0 - a] if a != 0.5 else [0.5, 0.5]
        runs.append(RunRecord(i, i, dataset, dataset, confusion_and_threshold_metrics(probs, [1, 0])))
    return ExperimentReport("WPDP", dataset, method, runs=runs)


def test_stratified_split_is_disjoint_and_keeps_ratio():
    labels = np.array([1] * 20 + [0] * 80)
    train, val, test = stratified_split(labels, (0.7, 0.15, 0.15), np.random.default_rng(0))
    assert not (train & val).any() and not (train & test).any() and not (val & test).any()
    assert (train | val | test).all()
    assert labels[train].sum() == 14 and labels[val].sum() == 3 and labels[test].sum() == 3
    assert train.sum() == 70
    with pytest.raises(ValidationError):
        stratified_split(labels, (0.5, 0.4), np.random.default_rng(0))


def test_wpdp_single_rep_report(dataset):
    report = run_wpdp(dataset, "msdg", TINY, reps=1, seed=3, rng=np.random.default_rng(3))
    assert report.protocol == "WPDP"
    assert report.view == "MSDG"
    assert report.method == "BiGGNN-MSDG"
    assert len(report.runs) == 1
    run = report.runs[0]
    assert run.source == run.target == dataset.name
    assert 1 <= run.selected_epoch <= 2
    # 12 defective and 28 clean files, cut 70/15/15 per class
    assert run.metrics.n == 2 + 4
    assert not report.partial and not report.leakage
    assert report.config["reps"] == 1 and report.config["hidden_size"] == 8


def test_wpdp_is_deterministic(dataset):
    a = run_wpdp(dataset, "cdg", TINY, reps=2, rng=np.random.default_rng(7))
    b = run_wpdp(dataset, "cdg", TINY, reps=2, rng=np.random.default_rng(7))
    assert a.seeds == b.seeds
    assert [r.to_dict() for r in a.runs] == [r.to_dict() for r in b.runs]


def test_wpdp_rejects_single_class_dataset(dataset):
    records = tuple(r.__class__(r.file_id, r.metrics, 0) for r in dataset.records)
    clean = dataset.__class__(dataset.project, dataset.version, dataset.manifest, records)
    with pytest.raises(ValidationError):
        run_wpdp(clean, "cdg", TINY, reps=1)
    with pytest.raises(ValidationError):
        run_wpdp(dataset, "cdg", TINY, reps=0)


def test_wpdp_failure_keeps_partial_report(dataset, monkeypatch):
    def broken(*args, **kwargs):
        raise TrainingError("diverged")

    monkeypatch.setattr(protocols, "train", broken)
    with pytest.raises(ExperimentInterrupted) as info:
        run_wpdp(dataset, "cdg", TINY, reps=2, rng=np.random.default_rng(0))
    assert info.value.report.partial
    assert info.value.report.runs == []
    assert info.value.exit_code == 1


def test_wpdp_dumps(dataset, tmp_path):
    report = run_wpdp(dataset, "ddg", TINY, reps=1, rng=np.random.default_rng(1),
                      keep_predictions=True, keep_embeddings=True)
    run = report.runs[0]
    assert list(run.predictions.columns) == ["file", "prob_defective", "label"]
    assert len(run.embeddings) == len(dataset.records)
    assert list(run.embeddings.columns[:2]) == ["file", "label"]
    written = write_run_dumps(report, str(tmp_path), "demo")
    assert str(tmp_path / "demo.rep000.predictions.csv") in written
    back = pd.read_csv(tmp_path / "demo.rep000.embeddings.csv")
    assert back.shape[1] == 2 + TINY.hidden_size


def test_cpdp_runs_and_leakage(dataset, other_version):
    report = run_cpdp(dataset, other_version, TINY, reps=2, rng=np.random.default_rng(0))
    assert report.protocol == "CPDP"
    assert report.dataset == other_version.name
    assert len(report.runs) == 2
    assert all(r.metrics.n == len(other_version.records) for r in report.runs)
    assert not report.leakage

    campaign = run_cpdp_campaign([dataset, other_version], other_version, TINY, reps=1,
                                 rng=np.random.default_rng(0), view="cdg")
    assert len(campaign.runs) == 2
    assert [r.source for r in campaign.runs] == [dataset.name, other_version.name]
    assert campaign.leakage
    assert campaign.config["sources"] == [dataset.name, other_version.name]


def test_cpdp_manifest_mismatch(dataset):
    wide = generate_synthetic(SyntheticConfig(n_nodes=30, n_metrics=5, version="2.0"), seed=2)
    with pytest.raises(ValidationError, match="manifests"):
        run_cpdp(dataset, wide, TINY, reps=1)
    with pytest.raises(ValidationError):
        run_cpdp_campaign([], dataset, TINY, reps=1)


def test_report_json_round_trip(tmp_path):
    report = _report("demo-1.0", "A", [1.0, 0.5, 0.0])
    path = str(tmp_path / "r.json")
    report.write_json(path)
    doc = json.loads(Path(path).read_text())
    assert doc["seeds"] == [0, 1, 2]
    assert doc["medians"]["auc"] == 0.5
    back = ExperimentReport.read_json(path)
    assert back.method == "A"
    assert [r.to_dict() for r in back.runs] == [r.to_dict() for r in report.runs]
    with pytest.raises(ValidationError):
        ExperimentReport.read_json(str(tmp_path / "missing.json"))
    with pytest.raises(ValidationError):
        ExperimentReport("LOPO", "x", "y")


def test_compare_report_with_itself():
    report = _report("demo-1.0", "A", [1.0, 0.5, 0.0, 1.0])
    results = compare_reports(report, report)
    assert [r.measure for r in results] == ["auc", "recall", "brier", "pf", "f1"]
    for r in results:
        assert r.p_value == 1.0
        assert r.cliffs_delta == 0.0
        assert not r.significant


def test_compare_rejects_mismatched_runs():
    with pytest.raises(ValidationError):
        compare_reports(_report("d", "A", [1.0, 0.5]), _report("d", "B", [1.0]))


def test_summary_table_average_row():
    reports = [
        _report("p-1.0", "A", [1.0, 1.0, 0.5]),
        _report("p-1.0", "B", [0.5]),
        _report("p-2.0", "A", [0.0]),
        _report("p-2.0", "B", [1.0, 0.0]),
    ]
    table = summary_table(reports, measures=("auc",))
    assert list(table.index) == ["p-1.0", "p-2.0", "Average"]
    assert table.loc["p-1.0", ("auc", "A")] == 1.0
    assert table.loc["p-2.0", ("auc", "B")] == 0.5
    assert table.loc["Average", ("auc", "A")] == pytest.approx(0.5)
    assert table.loc["Average", ("auc", "B")] == pytest.approx(0.5)


def test_score_baseline(dataset, tmp_path):
    ids = [r.file_id for r in dataset.records]
    labels = dataset.labels()
    path = tmp_path / "rep0.csv"
    pd.DataFrame({"file": ids, "prob_defective": labels.astype(float)}).to_csv(path, index=False)
    report = score_baseline(dataset, [str(path)], method="perfect")
    assert report.runs[0].metrics.auc == 1.0
    assert report.runs[0].metrics.recall == 1.0
    assert report.config["prediction_files"] == ["rep0.csv"]

    bad = tmp_path / "bad.csv"
    pd.DataFrame({"file": ["nope.java"], "prob_defective": [0.3]}).to_csv(bad, index=False)
    with pytest.raises(ValidationError, match="bad.csv"):
        score_baseline(dataset, [str(bad)], method="x")


def test_runs_frame_has_measures():
    frame = report_runs_frame(_report("d", "A", [1.0, 0.0]))
    assert list(frame["auc"]) == [1.0, 0.0]
    assert not math.isnan(frame["brier"].iloc[0])
