import json

import numpy as np
import pytest

from glyco.config import RunConfig
from glyco.errors import ConfigError, DataError
from glyco.workflows import (
    OutputTracker,
    build_forecaster,
    read_cohorts,
    run_cluster,
    run_cohort_compare,
    run_evaluate,
    run_explain,
    run_ingest,
    run_prepare,
    run_stats,
    run_synth,
    run_train,
)

SMALL = dict(k_folds=3, train_step=12, test_step=144, lstm_hidden=4, lstm_layers=2,
             lstm_epochs=2, lstm_batch=64, lstm_lr=0.01, lstm_heuristic_n=32,
             hmm_states=6, hmm_max_iter=4, gmm_n_init=4, gmm_max_iter=50, seed=11)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth -> prepare once for the whole module; commands under test reuse it."""
    root = tmp_path_factory.mktemp("ws")
    config = RunConfig(**SMALL)
    tracker = OutputTracker()
    run_synth(tracker, config, 4, 8, root / "cgm.csv", root / "patients.csv")
    run_prepare(tracker, config, root / "cgm.csv", root / "prep")
    return root, config


def test_synth_then_ingest_round_trip(tmp_path):
    config = RunConfig(**SMALL)
    tracker = OutputTracker()
    summary = run_synth(tracker, config, 2, 3, tmp_path / "cgm.csv", tmp_path / "patients.csv")
    assert summary["patients"] == 2
    report = run_ingest(tracker, config, tmp_path / "cgm.csv", tmp_path / "patients.csv", tmp_path / "out")
    assert report["cgm"]["rejected_count"] == 0
    assert (tmp_path / "out" / "corpus.csv").read_text() == (tmp_path / "cgm.csv").read_text()


def test_stats_document(workspace, tmp_path):
    root, config = workspace
    tracker = OutputTracker()
    document = run_stats(tracker, config, root / "cgm.csv", root / "patients.csv", tmp_path)
    assert set(document["corpus"]) == {"mean_mgdl", "sd_mgdl", "min_mgdl", "max_mgdl", "count"}
    assert document["config"]["seed"] == config.seed
    profile = (tmp_path / "daily_profile.csv").read_text().splitlines()
    assert profile[0] == "slot,time,mean_mgdl,sd_mgdl,count"
    assert len(profile) == 1 + 288
    names = document["patient_features"]["feature_names"]
    corr = np.asarray(document["patient_features"]["correlation"])
    assert corr.shape == (len(names), len(names))


def test_cluster_outputs(workspace, tmp_path):
    root, config = workspace
    tracker = OutputTracker()
    document = run_cluster(tracker, config, root / "patients.csv", tmp_path)
    assignments = read_cohorts(tmp_path / "cohorts.csv")
    assert len(assignments) == 4
    assert sum(document["cohort_sizes"].values()) == 4
    model = json.loads((tmp_path / "gmm.json").read_text())["model"]
    assert abs(sum(model["weights"]) - 1.0) < 1e-9


def test_prepare_fold_files(workspace):
    root, config = workspace
    report = json.loads((root / "prep" / "prepare_report.json").read_text())
    assert len(report["folds"]) == config.k_folds
    for fold in report["folds"]:
        assert fold["train_examples"] > 0 and fold["test_examples"] > 0
        assert (root / "prep" / f"fold{fold['fold']}.gprep").exists()


def test_train_and_evaluate_lstm(workspace, tmp_path):
    root, config = workspace
    tracker = OutputTracker()
    train_doc = run_train(tracker, config, root / "prep", "lstm", tmp_path / "models")
    assert len(train_doc["folds"]) == config.k_folds
    assert (tmp_path / "models" / "lstm_fold0_curve.csv").exists()

    eval_doc = run_evaluate(
        tracker, config, root / "prep", ["copy_last", "lstm"], tmp_path / "models",
        tmp_path / "eval", scatter=True,
    )
    assert [entry["model"] for entry in eval_doc["models"]] == ["copy_last", "lstm"]
    folds_per_model = [
        [f["fold"] for f in entry["folds"]] for entry in eval_doc["models"]
    ]
    assert folds_per_model[0] == folds_per_model[1]  # identical fold definitions
    scatter = (tmp_path / "eval" / "scatter_lstm.csv").read_text().splitlines()
    assert scatter[0] == "reference,predicted"


def test_train_hmm_and_baseline(workspace, tmp_path):
    root, config = workspace
    tracker = OutputTracker()
    run_train(tracker, config, root / "prep", "hmm", tmp_path / "models")
    run_train(tracker, config, root / "prep", "linreg", tmp_path / "models")
    eval_doc = run_evaluate(
        tracker, config, root / "prep", ["linreg", "hmm"], tmp_path / "models", tmp_path / "eval"
    )
    for entry in eval_doc["models"]:
        assert entry["aggregate"]["rmse"]["mean"] > 0


def test_jobs_parallelism_is_bit_identical(workspace, tmp_path):
    root, config = workspace
    tracker = OutputTracker()
    run_train(tracker, config, root / "prep", "lstm", tmp_path / "serial")
    parallel_config = RunConfig(**{**SMALL, "jobs": 2})
    run_train(tracker, parallel_config, root / "prep", "lstm", tmp_path / "parallel")
    for fold_index in range(config.k_folds):
        a = (tmp_path / "serial" / f"lstm_fold{fold_index}.glstm").read_bytes()
        b = (tmp_path / "parallel" / f"lstm_fold{fold_index}.glstm").read_bytes()
        assert a == b


def test_cohort_compare_baseline(workspace, tmp_path):
    root, config = workspace
    tracker = OutputTracker()
    run_cluster(tracker, config, root / "patients.csv", tmp_path / "clus")
    document = run_cohort_compare(
        tracker, config, root / "cgm.csv", tmp_path / "clus" / "cohorts.csv",
        "copy_last", 0, tmp_path / "cc",
    )
    assert document["comparison"]
    for row in document["comparison"]:
        assert row["difference"] == pytest.approx(
            row["pooled_model_rmse"] - row["cohort_model_rmse"]
        )
    assert "warning" in document


def test_explain_trace(workspace, tmp_path):
    root, config = workspace
    tracker = OutputTracker()
    run_train(tracker, config, root / "prep", "lstm", tmp_path / "models")
    summary = run_explain(
        tracker, config, tmp_path / "models" / "lstm_fold0.glstm",
        root / "prep" / "fold0.gprep", 0, tmp_path / "trace.csv",
    )
    assert (summary["layers"], summary["hidden"]) == (config.lstm_layers, config.lstm_hidden)
    assert summary["steps"] == config.window_input + config.horizon - 1
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert len(lines) == 1 + config.lstm_layers * summary["steps"]

    with pytest.raises(DataError):
        run_explain(
            tracker, config, tmp_path / "models" / "lstm_fold0.glstm",
            root / "prep" / "fold0.gprep", 10_000, tmp_path / "trace2.csv",
        )


def test_build_forecaster_requires_models_dir():
    with pytest.raises(ConfigError):
        build_forecaster("lstm", 0, 12, None, RunConfig())


def test_output_tracker_cleanup(tmp_path):
    tracker = OutputTracker()
    path = tracker.write_json(tmp_path / "a" / "b.json", {"x": 1})
    assert path.exists()
    tracker.cleanup()
    assert not path.exists()
