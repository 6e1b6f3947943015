import math

import numpy as np
import pytest

from glyco.baselines import CopyLastForecaster
from glyco.core import ForecastPair
from glyco.errors import DataError, InvalidValueError
from glyco.metrics import (
    EvalReport,
    FoldMetrics,
    GlycemicClass,
    clarke_zone,
    clarke_zones,
    classify,
    esod_n,
    evaluate_fold,
    prf1,
    rmse,
)


def pair(predicted, reference):
    return ForecastPair(tuple(predicted), tuple(reference))


class TestRmse:
    def test_perfect(self):
        p = pair([100.0] * 12, [100.0] * 12)
        assert rmse([p]) == 0.0

    def test_constant_offset(self):
        reference = list(np.linspace(80, 200, 12))
        predicted = [v + 5.0 for v in reference]
        assert rmse([pair(predicted, reference)]) == pytest.approx(5.0, abs=1e-12)

    def test_hand_computed(self):
        # sqrt((0 + 4)/2) = sqrt(2)
        assert rmse([pair([1.0, 2.0], [1.0, 4.0])]) == pytest.approx(math.sqrt(2), abs=1e-12)

    def test_pooled_over_pairs(self):
        pairs = [pair([1.0, 1.0], [0.0, 0.0]), pair([3.0, 3.0], [0.0, 0.0])]
        assert rmse(pairs) == pytest.approx(math.sqrt((1 + 1 + 9 + 9) / 4), abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            rmse([])


class TestEsod:
    def test_identity_on_curved_reference(self):
        curved = [100.0, 120.0, 90.0, 140.0, 95.0]
        assert esod_n(pair(curved, curved)) == pytest.approx(1.0, abs=1e-12)

    def test_flat_prediction_gives_zero(self):
        curved = [100.0, 120.0, 90.0, 140.0]
        assert esod_n(pair([110.0] * 4, curved)) == 0.0

    def test_hand_computed(self):
        # numerator (1)^2 + (-2)^2 = 5, denominator (-2)^2 + (2)^2 = 8
        assert esod_n(pair([0.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0])) == pytest.approx(
            0.625, abs=1e-12
        )

    def test_flat_reference_is_undefined(self):
        assert esod_n(pair([1.0, 2.0, 4.0], [5.0, 5.0, 5.0])) is None
        linear = [1.0, 2.0, 3.0, 4.0]  # zero second differences, still flat curvature
        assert esod_n(pair([0.0, 1.0, 0.0, 1.0], linear)) is None

    def test_short_horizon_rejected(self):
        with pytest.raises(DataError):
            esod_n(pair([1.0, 2.0], [1.0, 2.0]))


class TestClassify:
    @pytest.mark.parametrize(
        "value,expected",
        [
            (69.9, GlycemicClass.HYPO),
            (70.0, GlycemicClass.NORMAL),  # boundary inclusive to normal
            (150.0, GlycemicClass.NORMAL),
            (280.0, GlycemicClass.NORMAL),
            (280.1, GlycemicClass.HYPER),
        ],
    )
    def test_thresholds(self, value, expected):
        assert classify(value) is expected

    def test_total_and_single_class(self):
        for v in np.linspace(1, 600, 241):
            assert classify(float(v)) in GlycemicClass

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidValueError):
            classify(math.nan)


class TestPrf1:
    def test_perfect_with_abnormal_points(self):
        reference = [60.0, 300.0, 150.0, 65.0]
        scores = prf1([pair(reference, reference)])["abnormal"]
        assert scores["precision"] == 1.0
        assert scores["recall"] == 1.0
        assert scores["f1"] == 1.0

    def test_no_abnormal_anywhere_gives_undefined(self):
        normal = [100.0, 150.0, 200.0]
        scores = prf1([pair(normal, normal)])["abnormal"]
        assert scores["recall"] is None
        assert scores["precision"] is None

    def test_hand_confusion(self):
        # TP=3, FP=1, FN=2 -> P=0.75, R=0.6, F1=2PR/(P+R)
        p1 = pair([60.0, 300.0, 50.0], [65.0, 290.0, 100.0])  # TP TP FP
        p2 = pair([100.0, 110.0, 60.0], [60.0, 300.0, 50.0])  # FN FN TP
        scores = prf1([p1, p2])["abnormal"]
        assert scores["tp"] == 3 and scores["fp"] == 1 and scores["fn"] == 2
        assert scores["precision"] == pytest.approx(0.75, abs=1e-12)
        assert scores["recall"] == pytest.approx(0.6, abs=1e-12)
        assert scores["f1"] == pytest.approx(2 * 0.75 * 0.6 / 1.35, abs=1e-12)

    def test_f1_is_harmonic_mean(self):
        rng = np.random.default_rng(7)
        pairs = [
            pair(rng.uniform(40, 400, 12), rng.uniform(40, 400, 12)) for _ in range(50)
        ]
        scores = prf1(pairs)["abnormal"]
        p, r, f1 = scores["precision"], scores["recall"], scores["f1"]
        assert f1 == pytest.approx(2 * p * r / (p + r), abs=1e-12)


class TestClarke:
    def test_diagonal_is_a(self):
        assert clarke_zone(150.0, 150.0) == "A"

    def test_within_20_percent_is_a(self):
        assert clarke_zone(150.0, 170.0) == "A"
        assert clarke_zone(150.0, 180.0) == "A"  # exactly 20%

    def test_dangerous_hyper_miss(self):
        assert clarke_zone(200.0, 60.0) in ("D", "E")

    def test_rule_table_spot_checks(self):
        assert clarke_zone(100.0, 215.0) == "C"  # overcorrection band
        assert clarke_zone(50.0, 100.0) == "D"  # missed hypoglycemia
        assert clarke_zone(250.0, 150.0) == "D"  # missed hyperglycemia
        assert clarke_zone(160.0, 30.0) == "C"
        assert clarke_zone(100.0, 110.0) == "A"
        assert clarke_zone(400.0, 50.0) == "E"

    def test_proportions_sum_to_one(self):
        rng = np.random.default_rng(13)
        pairs = [
            pair(rng.uniform(40, 400, 12), rng.uniform(40, 400, 12)) for _ in range(40)
        ]
        zones = clarke_zones(pairs)
        assert sum(zones["proportions"].values()) == pytest.approx(1.0, abs=1e-12)
        assert sum(zones["counts"].values()) == 40 * 12

    def test_non_positive_rejected(self):
        with pytest.raises(InvalidValueError):
            clarke_zone(0.0, 100.0)


class TestEvalReport:
    def _fold(self, index, value):
        return FoldMetrics(
            fold=index,
            n_examples=10,
            rmse=value,
            esod_mean=None,
            esod_defined=0,
            esod_undefined=10,
            classification={"abnormal": {"precision": None, "recall": None, "f1": None}},
            zone_proportions={z: 0.2 for z in "ABCDE"},
        )

    def test_identical_folds_have_zero_sd(self):
        report = EvalReport("m", [self._fold(0, 30.0), self._fold(1, 30.0)])
        agg = report.aggregate()
        assert agg["rmse"]["mean"] == 30.0
        assert agg["rmse"]["sd"] == 0.0

    def test_hand_mean_sd(self):
        report = EvalReport("m", [self._fold(0, 28.0), self._fold(1, 30.0)])
        agg = report.aggregate()
        assert agg["rmse"]["mean"] == pytest.approx(29.0, abs=1e-12)
        assert agg["rmse"]["sd"] == pytest.approx(1.0, abs=1e-12)  # population s.d.


def test_evaluate_fold_copy_last_esod_undefined_reported():
    rng = np.random.default_rng(3)
    inputs = rng.uniform(80, 300, (6, 20))
    targets = rng.uniform(80, 300, (6, 12))
    metrics = evaluate_fold(CopyLastForecaster(), inputs, targets, fold=0)
    # copy-last output has zero curvature: every defined ratio is exactly 0
    assert metrics.esod_mean == 0.0 or metrics.esod_mean is None
    assert metrics.esod_defined + metrics.esod_undefined == 6
    assert metrics.rmse > 0
