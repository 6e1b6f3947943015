"""End-to-end workflow steps shared by the CLI.

Every step writes its outputs through an OutputTracker so a failing run can
remove partial files, and embeds the resolved configuration in its reports.
All randomness is seeded; per-fold seeds are derived as seed + fold_index so
fold-level parallelism cannot change any result.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import baselines, hmm as hmm_mod, ingest, lstm as lstm_mod, metrics, pipeline, stats
from .config import RunConfig
from .errors import ConfigError, DataError
from .ingest import Corpus

BASELINE_MODELS = ("copy_last", "linreg")
TRAINED_MODELS = ("lstm", "hmm")
ALL_MODELS = BASELINE_MODELS + TRAINED_MODELS


class OutputTracker:
    """Records every file written so failed runs leave nothing behind."""

    def __init__(self) -> None:
        self.paths: list[Path] = []

    def register(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.paths.append(path)
        return path

    def write_json(self, path: str | Path, obj) -> Path:
        path = self.register(path)
        path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return path

    def write_csv(self, path: str | Path, rows) -> Path:
        path = self.register(path)
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            for row in rows:
                writer.writerow(row)
        return path

    def cleanup(self) -> None:
        for path in self.paths:
            try:
                path.unlink(missing_ok=True)
            except OSError:
                pass


def fold_seed(config: RunConfig, fold_index: int) -> int:
    return config.seed + fold_index


def load_corpus(cgm_path: str | Path, patients_path: str | Path | None = None) -> Corpus:
    readings, _ = ingest.parse_cgm_csv(cgm_path)
    patients = ()
    if patients_path is not None:
        records, _ = ingest.parse_patient_csv(patients_path)
        patients = tuple(records)
    return Corpus(tuple(readings), patients)


def run_synth(
    tracker: OutputTracker,
    config: RunConfig,
    n_patients: int,
    days: int,
    out_cgm: str | Path,
    out_patients: str | Path | None,
) -> dict:
    corpus = ingest.synth_corpus(n_patients, days, config.seed)
    ingest.write_cgm_csv(corpus.readings, tracker.register(out_cgm))
    if out_patients is not None:
        ingest.write_patient_csv(corpus.patients, tracker.register(out_patients))
    return {"readings": len(corpus.readings), "patients": len(corpus.patients)}


def run_ingest(
    tracker: OutputTracker,
    config: RunConfig,
    cgm_path: str | Path,
    patients_path: str | Path | None,
    out_dir: str | Path,
    max_malformed_fraction: float = 0.01,
) -> dict:
    out_dir = Path(out_dir)
    readings, report = ingest.parse_cgm_csv(cgm_path, max_malformed_fraction)
    ingest.write_cgm_csv(readings, tracker.register(out_dir / "corpus.csv"))
    reports = {"cgm": report.to_dict()}
    if patients_path is not None:
        patients, patient_report = ingest.parse_patient_csv(patients_path)
        ingest.write_patient_csv(patients, tracker.register(out_dir / "patients.csv"))
        reports["patients"] = patient_report.to_dict()
    tracker.write_json(out_dir / "ingest_report.json", {"config": config.to_dict(), **reports})
    return reports


PATIENT_NUMERIC_FEATURES = (
    "age",
    "weight_kg",
    "height_cm",
    "bmi",
    "hba1c",
    "annual_income_usd",
    "education_level",
)


def run_stats(
    tracker: OutputTracker,
    config: RunConfig,
    cgm_path: str | Path,
    patients_path: str | Path | None,
    out_dir: str | Path,
    variance_tau: float = 0.0,
) -> dict:
    out_dir = Path(out_dir)
    corpus = load_corpus(cgm_path, patients_path)
    sequences = pipeline.segment(corpus.readings, config.max_gap_s)
    histogram = ingest.sequence_length_histogram(sequences, threshold=config.window_total)
    document: dict = {
        "config": config.to_dict(),
        "corpus": ingest.corpus_stats(corpus),
        "sequence_lengths": histogram.to_dict(),
    }

    profile = ingest.daily_profile(corpus)
    rows = [["slot", "time", "mean_mgdl", "sd_mgdl", "count"]]
    for slot, label, mean, sd, count in profile.rows():
        rows.append(
            [slot, label, "" if mean is None else repr(mean), "" if sd is None else repr(sd), count]
        )
    tracker.write_csv(out_dir / "daily_profile.csv", rows)

    if corpus.patients:
        raw = stats.build_feature_matrix(corpus.patients, PATIENT_NUMERIC_FEATURES, normalize=False)
        # constant columns cannot be normalized or correlated; keep the rest
        variances = raw.values.var(axis=0)
        usable = tuple(n for n, v in zip(raw.feature_names, variances) if v > 0.0)
        constant = [n for n, v in zip(raw.feature_names, variances) if v == 0.0]
        if not usable:
            raise DataError("every patient feature is constant; nothing to correlate")
        matrix = stats.build_feature_matrix(corpus.patients, usable)
        document["patient_features"] = {
            "feature_names": list(matrix.feature_names),
            "constant_features_excluded": constant,
            "patients_used": len(matrix.patient_ids),
            "patients_excluded": list(matrix.excluded_patients),
            "covariance": stats.covariance_matrix(matrix).tolist(),
            "correlation": stats.correlation_matrix(matrix).tolist(),
            "raw_variances": raw.values.var(axis=0).tolist(),
            "variance_threshold": {
                "tau": variance_tau,
                "selected": stats.variance_threshold(raw, variance_tau),
            },
        }
    tracker.write_json(out_dir / "stats.json", document)
    return document


def run_cluster(
    tracker: OutputTracker,
    config: RunConfig,
    patients_path: str | Path,
    out_dir: str | Path,
) -> dict:
    out_dir = Path(out_dir)
    patients, _ = ingest.parse_patient_csv(patients_path)
    features = tuple(name.strip() for name in config.cluster_features.split(",") if name.strip())
    matrix = stats.build_feature_matrix(patients, features)
    model = stats.gmm_fit(
        matrix,
        k=config.gmm_k,
        n_init=config.gmm_n_init,
        max_iter=config.gmm_max_iter,
        seed=config.seed,
    )
    labels = stats.gmm_assign(model, matrix)
    rows = [["patient_id", "cohort"]]
    rows += [[pid, int(label)] for pid, label in zip(matrix.patient_ids, labels)]
    tracker.write_csv(out_dir / "cohorts.csv", rows)
    document = {
        "config": config.to_dict(),
        "features": list(features),
        "model": model.to_dict(),
        "cohort_sizes": {str(c): int(np.sum(labels == c)) for c in range(config.gmm_k)},
        "patients_excluded": list(matrix.excluded_patients),
    }
    tracker.write_json(out_dir / "gmm.json", document)
    return document


def read_cohorts(path: str | Path) -> dict[str, str]:
    assignments: dict[str, str] = {}
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["patient_id", "cohort"]:
            raise DataError(f"{path}: expected header patient_id,cohort")
        for row in reader:
            if len(row) == 2 and row[0].strip():
                assignments[row[0].strip()] = row[1].strip()
    return assignments


def _cohort_patient_filter(
    cohorts_path: str | Path | None, cohort: str
) -> tuple[set[str] | None, str]:
    if cohort == "all":
        return None, "all"
    if cohorts_path is None:
        raise ConfigError("a cohort filter needs --cohorts (patient_id,cohort CSV)")
    assignments = read_cohorts(cohorts_path)
    keep = {pid for pid, label in assignments.items() if label == cohort}
    if not keep:
        raise DataError(f"no patient has cohort {cohort!r}")
    return keep, cohort


def prepared_path(out_dir: str | Path, fold_index: int) -> Path:
    return Path(out_dir) / f"fold{fold_index}.gprep"


def run_prepare(
    tracker: OutputTracker,
    config: RunConfig,
    cgm_path: str | Path,
    out_dir: str | Path,
    cohorts_path: str | Path | None = None,
) -> dict:
    out_dir = Path(out_dir)
    corpus = load_corpus(cgm_path)
    sequences = pipeline.segment(corpus.readings, config.max_gap_s)
    keep, label = _cohort_patient_filter(cohorts_path, config.cohort)
    eligible_pool = sequences if keep is None else [s for s in sequences if s.patient_id in keep]
    if not eligible_pool:
        raise DataError("cohort filter removed every sequence")
    folds = pipeline.kfold_split(
        eligible_pool, k=config.k_folds, seed=config.seed, total=config.window_total
    )
    fold_summaries = []
    for fold in folds:
        prepared = pipeline.prepare(
            sequences,
            fold,
            total=config.window_total,
            input_len=config.window_input,
            train_step=config.train_step,
            test_step=config.test_step,
            cohort_filter=keep,
            cohort_label=label,
        )
        pipeline.save_prepared(prepared, tracker.register(prepared_path(out_dir, fold.fold_index)))
        fold_summaries.append(
            {
                "fold": fold.fold_index,
                "train_examples": prepared.n_train,
                "test_examples": prepared.n_test,
                "train_sequences": len(fold.train_sequence_ids),
                "test_sequences": len(fold.test_sequence_ids),
            }
        )
    histogram = ingest.sequence_length_histogram(eligible_pool, threshold=config.window_total)
    document = {
        "config": config.to_dict(),
        "cohort": label,
        "sequences_total": len(eligible_pool),
        "sequences_eligible": histogram.eligible_count,
        "eligible_fraction": histogram.eligible_fraction,
        "folds": fold_summaries,
    }
    tracker.write_json(out_dir / "prepare_report.json", document)
    return document


def load_fold_sets(prepared_dir: str | Path, k_folds: int) -> list[pipeline.PreparedSet]:
    sets = []
    for fold_index in range(k_folds):
        path = prepared_path(prepared_dir, fold_index)
        if not path.exists():
            raise DataError(f"missing prepared fold file: {path}")
        sets.append(pipeline.load_prepared(path))
    return sets


def model_path(out_dir: str | Path, model: str, fold_index: int) -> Path:
    suffix = "glstm" if model == "lstm" else "json"
    return Path(out_dir) / f"{model}_fold{fold_index}.{suffix}"


def _train_lstm_fold(config: RunConfig, prepared: pipeline.PreparedSet, fold_index: int, out: Path):
    seed = fold_seed(config, fold_index)
    net = lstm_mod.new_network(
        hidden_size=config.lstm_hidden, n_layers=config.lstm_layers, seed=seed
    )
    result = lstm_mod.train(
        net,
        prepared,
        epochs=config.lstm_epochs,
        batch=config.lstm_batch,
        lr=config.lstm_lr,
        heuristic_test_n=config.lstm_heuristic_n,
        seed=seed,
        clip_norm=config.lstm_clip_norm,
        feedback=config.lstm_feedback,
    )
    best = result.best
    provenance = {
        "model": "lstm",
        "fold": fold_index,
        "seed": seed,
        "epochs": config.lstm_epochs,
        "feedback": config.lstm_feedback,
        "best_epoch": result.best_epoch,
        "heuristic_rmse_mgdl": best.heuristic_rmse_mgdl,
    }
    lstm_mod.save_model(best.network, out, provenance=provenance)
    curve_rows = list(result.curve_rows())
    return provenance, curve_rows


def _train_hmm_fold(config: RunConfig, prepared: pipeline.PreparedSet, fold_index: int, out: Path):
    seed = fold_seed(config, fold_index)
    train_values = np.concatenate(
        [prepared.train_inputs.ravel(), prepared.train_targets.ravel()]
    )
    quantizer = hmm_mod.Quantizer.from_values(train_values, config.hmm_states)
    sequences = [
        quantizer.encode(np.concatenate([prepared.train_inputs[i], prepared.train_targets[i]]))
        for i in range(prepared.n_train)
    ]
    model = hmm_mod.baum_welch(
        sequences,
        n_states=config.hmm_states,
        n_symbols=config.hmm_states,  # one observation symbol per state
        max_iter=config.hmm_max_iter,
        seed=seed,
    )
    hmm_mod.save_hmm(model, quantizer, out)
    provenance = {
        "model": "hmm",
        "fold": fold_index,
        "seed": seed,
        "iterations": model.trained_iterations,
        "final_log_likelihood": model.final_log_likelihood,
    }
    curve_rows = [["iteration", "total_log_likelihood"]]
    curve_rows += [[i + 1, repr(v)] for i, v in enumerate(model.log_likelihood_history)]
    return provenance, curve_rows


def _train_one_fold(args: tuple) -> tuple[int, dict, list | None, str]:
    """Worker for fold-parallel training; returns (fold, provenance, curve, out_path)."""
    config, model, prepared_file, out_file = args
    prepared = pipeline.load_prepared(prepared_file)
    out = Path(out_file)
    if model == "lstm":
        provenance, curve = _train_lstm_fold(config, prepared, prepared.provenance["fold"], out)
    elif model == "hmm":
        provenance, curve = _train_hmm_fold(config, prepared, prepared.provenance["fold"], out)
    else:
        provenance = {"model": model, "fold": prepared.provenance["fold"]}
        Path(out).write_text(json.dumps(provenance, sort_keys=True) + "\n", encoding="utf-8")
        curve = None
    return prepared.provenance["fold"], provenance, curve, str(out)


def run_train(
    tracker: OutputTracker,
    config: RunConfig,
    prepared_dir: str | Path,
    model: str,
    out_dir: str | Path,
) -> dict:
    if model not in ALL_MODELS:
        raise ConfigError(f"unknown model {model!r}; expected one of {', '.join(ALL_MODELS)}")
    out_dir = Path(out_dir)
    jobs = []
    for fold_index in range(config.k_folds):
        prepared_file = prepared_path(prepared_dir, fold_index)
        if not prepared_file.exists():
            raise DataError(f"missing prepared fold file: {prepared_file}")
        out = tracker.register(model_path(out_dir, model, fold_index))
        jobs.append((config, model, str(prepared_file), str(out)))

    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_train_one_fold, jobs))
    else:
        results = [_train_one_fold(job) for job in jobs]

    folds = []
    for fold_index, provenance, curve, _ in sorted(results):
        if curve is not None:
            tracker.write_csv(out_dir / f"{model}_fold{fold_index}_curve.csv", curve)
        folds.append(provenance)
    document = {"config": config.to_dict(), "model": model, "folds": folds}
    tracker.write_json(out_dir / f"train_{model}_report.json", document)
    return document


def build_forecaster(
    model: str, fold_index: int, horizon: int, models_dir: str | Path | None, config: RunConfig
):
    if model == "copy_last":
        return baselines.CopyLastForecaster(horizon)
    if model == "linreg":
        return baselines.LinearRegressionForecaster(horizon)
    if models_dir is None:
        raise ConfigError(f"model {model!r} needs --models-dir with trained fold models")
    path = model_path(models_dir, model, fold_index)
    if not path.exists():
        raise DataError(f"missing trained model for fold {fold_index}: {path}")
    if model == "lstm":
        net, _ = lstm_mod.load_model(path)
        return lstm_mod.LstmForecaster(net, horizon)
    if model == "hmm":
        hmodel, quantizer = hmm_mod.load_hmm(path)
        return hmm_mod.HmmForecaster(hmodel, quantizer, horizon)
    raise ConfigError(f"unknown model {model!r}")


def run_evaluate(
    tracker: OutputTracker,
    config: RunConfig,
    prepared_dir: str | Path,
    models: list[str],
    models_dir: str | Path | None,
    out_dir: str | Path,
    scatter: bool = False,
) -> dict:
    out_dir = Path(out_dir)
    fold_sets = load_fold_sets(prepared_dir, config.k_folds)
    horizon = fold_sets[0].horizon
    protocol = {
        "k_folds": config.k_folds,
        "input_len": fold_sets[0].input_len,
        "horizon": horizon,
        "train_step": fold_sets[0].provenance.get("train_step"),
        "test_step": fold_sets[0].provenance.get("test_step"),
        "cohort": fold_sets[0].provenance.get("cohort", "all"),
        "hypo_mgdl": config.hypo_mgdl,
        "hyper_mgdl": config.hyper_mgdl,
        "error_grid": "clarke-zones",
        "aggregate_sd": "population s.d. across folds",
    }
    reports = []
    flat_rows = [["model", "fold", "metric", "value"]]
    for model in models:
        fold_metrics = []
        scatter_rows = [["reference", "predicted"]] if scatter else None
        for prepared in fold_sets:
            fold_index = prepared.provenance.get("fold", 0)
            forecaster = build_forecaster(model, fold_index, horizon, models_dir, config)
            predictions = metrics.predict_all(forecaster, prepared.test_inputs)
            pairs = metrics.pairs_from_arrays(predictions, prepared.test_targets)
            fold_metrics.append(
                metrics.score_pairs(pairs, fold_index, config.hypo_mgdl, config.hyper_mgdl)
            )
            if scatter_rows is not None:
                for pair in pairs:
                    for ref, pred in zip(pair.reference, pair.predicted):
                        scatter_rows.append([repr(ref), repr(pred)])
        report = metrics.EvalReport(model_name=model, folds=fold_metrics, protocol=protocol)
        reports.append(report)
        for fm in fold_metrics:
            flat_rows.append([model, fm.fold, "rmse", repr(fm.rmse)])
            if fm.esod_mean is not None:
                flat_rows.append([model, fm.fold, "esod", repr(fm.esod_mean)])
            for metric_name in ("precision", "recall", "f1"):
                value = fm.classification["abnormal"][metric_name]
                if value is not None:
                    flat_rows.append([model, fm.fold, metric_name, repr(value)])
        if scatter_rows is not None:
            tracker.write_csv(out_dir / f"scatter_{model}.csv", scatter_rows)

    document = {
        "config": config.to_dict(),
        "protocol": protocol,
        "models": [r.to_dict() for r in reports],
    }
    tracker.write_json(out_dir / "eval_report.json", document)
    tracker.write_csv(out_dir / "eval_flat.csv", flat_rows)
    return document


CONTAMINATION_WARNING = (
    "cohort-comparison caveat: cohort test folds are drawn independently of the "
    "pooled model's folds, so sequences used to train the pooled model can appear "
    "in cohort test sets"
)


def run_cohort_compare(
    tracker: OutputTracker,
    config: RunConfig,
    cgm_path: str | Path,
    cohorts_path: str | Path,
    model: str,
    fold_index: int,
    out_dir: str | Path,
) -> dict:
    if model not in ALL_MODELS:
        raise ConfigError(f"unknown model {model!r}")
    if not (0 <= fold_index < config.k_folds):
        raise ConfigError(f"fold must be in [0, {config.k_folds})")
    out_dir = Path(out_dir)
    corpus = load_corpus(cgm_path)
    sequences = pipeline.segment(corpus.readings, config.max_gap_s)
    assignments = read_cohorts(cohorts_path)
    cohort_labels = sorted(set(assignments.values()))

    def prepare_for(keep: set[str] | None, label: str) -> pipeline.PreparedSet:
        pool = sequences if keep is None else [s for s in sequences if s.patient_id in keep]
        if not pool:
            raise DataError(f"cohort {label!r} has no sequences")
        folds = pipeline.kfold_split(pool, k=config.k_folds, seed=config.seed, total=config.window_total)
        return pipeline.prepare(
            sequences,
            folds[fold_index],
            total=config.window_total,
            input_len=config.window_input,
            train_step=config.train_step,
            test_step=config.test_step,
            cohort_filter=keep,
            cohort_label=label,
        )

    def trained_forecaster(prepared: pipeline.PreparedSet, tag: str):
        horizon = prepared.horizon
        if model == "copy_last":
            return baselines.CopyLastForecaster(horizon)
        if model == "linreg":
            return baselines.LinearRegressionForecaster(horizon)
        if model == "lstm":
            seed = fold_seed(config, fold_index)
            net = lstm_mod.new_network(config.lstm_hidden, config.lstm_layers, seed=seed)
            result = lstm_mod.train(
                net,
                prepared,
                epochs=config.lstm_epochs,
                batch=config.lstm_batch,
                lr=config.lstm_lr,
                heuristic_test_n=config.lstm_heuristic_n,
                seed=seed,
                clip_norm=config.lstm_clip_norm,
                feedback=config.lstm_feedback,
            )
            return lstm_mod.LstmForecaster(result.best.network, horizon)
        out = Path(out_dir) / f"hmm_{tag}.json"
        _train_hmm_fold(config, prepared, fold_index, tracker.register(out))
        hmodel, quantizer = hmm_mod.load_hmm(out)
        return hmm_mod.HmmForecaster(hmodel, quantizer, horizon)

    pooled_prepared = prepare_for(None, "all")
    pooled = trained_forecaster(pooled_prepared, "all")
    cohort_sets = {}
    cohort_models = {}
    for label in cohort_labels:
        keep = {pid for pid, c in assignments.items() if c == label}
        prepared = prepare_for(keep, label)
        cohort_sets[label] = prepared
        cohort_models[label] = trained_forecaster(prepared, label)

    def rmse_on(forecaster, prepared: pipeline.PreparedSet) -> float:
        predictions = metrics.predict_all(forecaster, prepared.test_inputs)
        return metrics.rmse(metrics.pairs_from_arrays(predictions, prepared.test_targets))

    pooled_rows = {"all": rmse_on(pooled, pooled_prepared)}
    comparison = []
    for label in cohort_labels:
        pooled_rmse = rmse_on(pooled, cohort_sets[label])
        cohort_rmse = rmse_on(cohort_models[label], cohort_sets[label])
        pooled_rows[label] = pooled_rmse
        comparison.append(
            {
                "cohort": label,
                "n_test_examples": cohort_sets[label].n_test,
                "cohort_model_rmse": cohort_rmse,
                "pooled_model_rmse": pooled_rmse,
                "difference": pooled_rmse - cohort_rmse,
            }
        )
    document = {
        "config": config.to_dict(),
        "model": model,
        "fold": fold_index,
        "pooled_model_rmse_by_testset": pooled_rows,
        "comparison": comparison,
        "warning": CONTAMINATION_WARNING,
    }
    tracker.write_json(out_dir / "cohort_compare.json", document)
    return document


def run_explain(
    tracker: OutputTracker,
    config: RunConfig,
    model_file: str | Path,
    prepared_file: str | Path,
    example_index: int,
    out_path: str | Path,
    split: str = "test",
) -> dict:
    prepared = pipeline.load_prepared(prepared_file)
    inputs = prepared.test_inputs if split == "test" else prepared.train_inputs
    if split not in ("train", "test"):
        raise ConfigError(f"split must be train or test, got {split!r}")
    if not (0 <= example_index < inputs.shape[0]):
        raise DataError(
            f"example index {example_index} out of range for {split} set of "
            f"{inputs.shape[0]} examples"
        )
    net, provenance = lstm_mod.load_model(model_file)
    _, trace = lstm_mod.rollout(net, inputs[example_index], horizon=prepared.horizon, trace=True)
    tracker.write_csv(out_path, trace.to_csv_rows())
    return {
        "model_provenance": provenance,
        "example_index": example_index,
        "split": split,
        "layers": trace.values.shape[0],
        "steps": trace.values.shape[1],
        "hidden": trace.values.shape[2],
    }
