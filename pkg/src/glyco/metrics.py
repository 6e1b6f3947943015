"""Forecast quality metrics and fold-level report aggregation.

Classification thresholds put boundary values in the Normal class; the
positive class for precision/recall is "abnormal" (hypo or hyper). Curvature
fidelity is the ratio of second-difference energies between prediction and
reference: 1 matches the reference's curvature, 0 means a curvature-free
forecast, and a zero-curvature reference makes the ratio undefined (returned
as None, never NaN).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ForecastPair
from .errors import DataError, InvalidValueError

HYPO_MGDL = 70.0
HYPER_MGDL = 280.0


class GlycemicClass(enum.Enum):
    HYPO = "hypo"
    NORMAL = "normal"
    HYPER = "hyper"


def rmse(pairs: list[ForecastPair]) -> float:
    """Root mean squared error pooled over every point of every pair."""
    if not pairs:
        raise DataError("rmse needs at least one forecast pair")
    total = 0.0
    count = 0
    for pair in pairs:
        p = np.asarray(pair.predicted)
        r = np.asarray(pair.reference)
        total += float(np.sum((p - r) ** 2))
        count += len(pair)
    return math.sqrt(total / count)


def second_difference_energy(values: np.ndarray) -> float:
    """Sum of squared second-order differences."""
    v = np.asarray(values, dtype=float)
    dd = v[2:] - 2.0 * v[1:-1] + v[:-2]
    return float(np.sum(dd * dd))


def esod_n(pair: ForecastPair) -> float | None:
    """Second-difference energy of the prediction over that of the reference.

    None signals an undefined ratio (flat reference); horizons shorter than 3
    have no second differences at all and are rejected.
    """
    if len(pair) < 3:
        raise DataError(f"curvature ratio needs horizon >= 3, got {len(pair)}")
    denominator = second_difference_energy(np.asarray(pair.reference))
    if denominator == 0.0:
        return None
    return second_difference_energy(np.asarray(pair.predicted)) / denominator


def classify(
    value: float, hypo: float = HYPO_MGDL, hyper: float = HYPER_MGDL
) -> GlycemicClass:
    """Threshold classification; boundary values are Normal."""
    if not math.isfinite(value):
        raise InvalidValueError(f"cannot classify non-finite glucose {value!r}")
    if value < hypo:
        return GlycemicClass.HYPO
    if value > hyper:
        return GlycemicClass.HYPER
    return GlycemicClass.NORMAL


@dataclass
class BinaryScores:
    """Precision/recall/F1 with explicit None for zero-denominator cases."""

    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self) -> float | None:
        d = self.tp + self.fp
        return self.tp / d if d else None

    @property
    def recall(self) -> float | None:
        d = self.tp + self.fn
        return self.tp / d if d else None

    @property
    def f1(self) -> float | None:
        p, r = self.precision, self.recall
        if p is None or r is None or p + r == 0.0:
            return None
        return 2.0 * p * r / (p + r)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


def prf1(
    pairs: list[ForecastPair], hypo: float = HYPO_MGDL, hyper: float = HYPER_MGDL
) -> dict:
    """Per-point precision/recall/F1 with positive = abnormal (hypo or hyper).

    Also emits a per-class breakdown where the positive class is hypo alone
    and hyper alone.
    """
    if not pairs:
        raise DataError("prf1 needs at least one forecast pair")
    overall = {"tp": 0, "fp": 0, "fn": 0, "tn": 0}
    per_class = {c: {"tp": 0, "fp": 0, "fn": 0, "tn": 0} for c in (GlycemicClass.HYPO, GlycemicClass.HYPER)}
    for pair in pairs:
        for p_value, r_value in zip(pair.predicted, pair.reference):
            p_class = classify(p_value, hypo, hyper)
            r_class = classify(r_value, hypo, hyper)
            p_abnormal = p_class is not GlycemicClass.NORMAL
            r_abnormal = r_class is not GlycemicClass.NORMAL
            key = (
                "tp" if p_abnormal and r_abnormal
                else "fp" if p_abnormal
                else "fn" if r_abnormal
                else "tn"
            )
            overall[key] += 1
            for cls, counts in per_class.items():
                pc, rc = p_class is cls, r_class is cls
                counts["tp" if pc and rc else "fp" if pc else "fn" if rc else "tn"] += 1
    scores = BinaryScores(**overall)
    return {
        "abnormal": scores.to_dict(),
        "hypo": BinaryScores(**per_class[GlycemicClass.HYPO]).to_dict(),
        "hyper": BinaryScores(**per_class[GlycemicClass.HYPER]).to_dict(),
    }


def clarke_zone(reference: float, predicted: float) -> str:
    """Zone A-E of one (reference, predicted) point, standard grid rules, mg/dL."""
    if reference <= 0 or predicted <= 0:
        raise InvalidValueError("error-grid values must be positive")
    r, p = reference, predicted
    if abs(r - p) <= 0.2 * r or (r <= 70 and p <= 70):
        return "A"
    if (r >= 180 and p <= 70) or (r <= 70 and p >= 180):
        return "E"
    if (70 <= r <= 290 and p >= r + 110) or (130 <= r <= 180 and p <= 1.4 * r - 182):
        return "C"
    if (r >= 240 and 70 <= p <= 180) or (r <= 175 / 3 and 70 <= p <= 180) or (
        175 / 3 <= r <= 70 and p >= 1.2 * r
    ):
        return "D"
    return "B"


def clarke_zones(pairs: list[ForecastPair]) -> dict:
    """Per-point zone labels and their proportions (sum to 1)."""
    if not pairs:
        raise DataError("clarke_zones needs at least one forecast pair")
    counts = {z: 0 for z in "ABCDE"}
    labels = []
    for pair in pairs:
        for p_value, r_value in zip(pair.predicted, pair.reference):
            zone = clarke_zone(r_value, p_value)
            counts[zone] += 1
            labels.append(zone)
    total = len(labels)
    return {
        "labels": labels,
        "counts": counts,
        "proportions": {z: counts[z] / total for z in "ABCDE"},
    }


@dataclass
class FoldMetrics:
    fold: int
    n_examples: int
    rmse: float
    esod_mean: float | None
    esod_defined: int
    esod_undefined: int
    classification: dict
    zone_proportions: dict

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "n_examples": self.n_examples,
            "rmse": self.rmse,
            "esod_mean": self.esod_mean,
            "esod_defined": self.esod_defined,
            "esod_undefined": self.esod_undefined,
            "classification": self.classification,
            "zone_proportions": self.zone_proportions,
        }


@dataclass
class EvalReport:
    """Per-fold metrics for one model plus across-fold mean and population s.d."""

    model_name: str
    folds: list[FoldMetrics]
    protocol: dict = field(default_factory=dict)

    def aggregate(self) -> dict:
        def mean_sd(values: list[float]) -> dict:
            arr = np.asarray(values, dtype=float)
            return {"mean": float(arr.mean()), "sd": float(arr.std())}

        out: dict = {"rmse": mean_sd([f.rmse for f in self.folds])}
        esods = [f.esod_mean for f in self.folds if f.esod_mean is not None]
        out["esod"] = mean_sd(esods) if esods else {"mean": None, "sd": None}
        out["esod_undefined_folds"] = sum(1 for f in self.folds if f.esod_mean is None)
        for metric in ("precision", "recall", "f1"):
            values = [
                f.classification["abnormal"][metric]
                for f in self.folds
                if f.classification["abnormal"][metric] is not None
            ]
            out[metric] = mean_sd(values) if values else {"mean": None, "sd": None}
        return out

    def to_dict(self) -> dict:
        return {
            "model": self.model_name,
            "protocol": self.protocol,
            "folds": [f.to_dict() for f in self.folds],
            "aggregate": self.aggregate(),
        }


def predict_all(forecaster, inputs: np.ndarray) -> np.ndarray:
    """Forecast every row of ``inputs``, using the batched path when offered."""
    if hasattr(forecaster, "forecast_batch"):
        return forecaster.forecast_batch(inputs)
    return np.stack([forecaster.forecast(row) for row in inputs])


def score_pairs(
    pairs: list[ForecastPair], fold: int, hypo: float = HYPO_MGDL, hyper: float = HYPER_MGDL
) -> FoldMetrics:
    """Every metric for one fold's (prediction, reference) pairs."""
    if not pairs:
        raise DataError(f"fold {fold} has no test examples")
    esods = [esod_n(p) for p in pairs]
    defined = [e for e in esods if e is not None]
    zones = clarke_zones(pairs)
    return FoldMetrics(
        fold=fold,
        n_examples=len(pairs),
        rmse=rmse(pairs),
        esod_mean=float(np.mean(defined)) if defined else None,
        esod_defined=len(defined),
        esod_undefined=len(esods) - len(defined),
        classification=prf1(pairs, hypo, hyper),
        zone_proportions=zones["proportions"],
    )


def pairs_from_arrays(predictions: np.ndarray, targets: np.ndarray) -> list[ForecastPair]:
    return [
        ForecastPair(tuple(predictions[i]), tuple(targets[i]))
        for i in range(predictions.shape[0])
    ]


def evaluate_fold(forecaster, inputs: np.ndarray, targets: np.ndarray, fold: int) -> FoldMetrics:
    """Run one forecaster over a fold's test arrays and score every metric."""
    if inputs.shape[0] == 0:
        raise DataError(f"fold {fold} has no test examples")
    return score_pairs(pairs_from_arrays(predict_all(forecaster, inputs), targets), fold)


def evaluate(model_name: str, fold_forecasters: list, fold_sets: list, protocol: dict | None = None) -> EvalReport:
    """Score one forecaster per fold on that fold's test examples.

    fold_forecasters[i] must have been built (trained) from fold i's training
    data only; fold_sets are the matching PreparedSet objects.
    """
    if len(fold_forecasters) != len(fold_sets):
        raise DataError(
            f"{len(fold_forecasters)} forecasters for {len(fold_sets)} folds"
        )
    folds = [
        evaluate_fold(fc, ps.test_inputs, ps.test_targets, ps.provenance.get("fold", i))
        for i, (fc, ps) in enumerate(zip(fold_forecasters, fold_sets))
    ]
    return EvalReport(model_name=model_name, folds=folds, protocol=protocol or {})
