import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointssl.data import PointAnnotation
from pointssl.errors import ContractError
from pointssl.matching import eval_match
from pointssl.metrics import (
    MetricsReport,
    evaluate,
    evaluate_model,
    imbalance_ratio,
    pseudo_label_quality,
)
from pointssl.model import ModelArch, PointPrediction, init_params
from conftest import make_sample


def pred(x, y, class_id, score=0.9):
    return PointPrediction(x=x, y=y, class_id=class_id, score=score)


def ann(x, y, class_id):
    return PointAnnotation(x=x, y=y, class_id=class_id)


class TestEvaluate:
    def test_perfect_predictions(self):
        refs = [[ann(2.0, 2.0, 0), ann(8.0, 8.0, 1)]]
        preds = [[pred(2.0, 2.0, 0), pred(8.0, 8.0, 1)]]
        report = evaluate(preds, refs, 2, distance_threshold=3.0)
        assert report.detection.f1 == 100.0
        assert report.macro_f1 == 100.0
        assert report.detection.tp == 2

    def test_wrong_class_counts_for_detection_only(self):
        refs = [[ann(2.0, 2.0, 0)]]
        preds = [[pred(2.0, 2.0, 1)]]
        report = evaluate(preds, refs, 2, distance_threshold=3.0)
        assert report.detection.f1 == 100.0
        assert report.macro_f1 == 0.0
        # the miss shows up as one FP for class 1 and one FN for class 0
        assert report.per_class[1].fp == 1
        assert report.per_class[0].fn == 1

    def test_missed_point_hits_recall(self):
        refs = [[ann(2.0, 2.0, 0), ann(9.0, 9.0, 0)]]
        preds = [[pred(2.0, 2.0, 0)]]
        report = evaluate(preds, refs, 2, distance_threshold=3.0)
        assert report.detection.recall == pytest.approx(50.0)
        assert report.detection.precision == pytest.approx(100.0)

    def test_spurious_point_hits_precision(self):
        refs = [[ann(2.0, 2.0, 0)]]
        preds = [[pred(2.0, 2.0, 0), pred(20.0, 20.0, 0)]]
        report = evaluate(preds, refs, 2, distance_threshold=3.0)
        assert report.detection.precision == pytest.approx(50.0)
        assert report.detection.recall == pytest.approx(100.0)

    def test_counts_pool_across_samples(self):
        refs = [[ann(1.0, 1.0, 0)], [ann(5.0, 5.0, 0)]]
        preds = [[pred(1.0, 1.0, 0)], []]
        report = evaluate(preds, refs, 1, distance_threshold=2.0)
        assert report.detection.tp == 1
        assert report.detection.fn == 1
        assert report.detection.recall == pytest.approx(50.0)

    def test_empty_everything_scores_zero(self):
        report = evaluate([[]], [[]], 3, distance_threshold=2.0)
        assert report.detection.f1 == 0.0
        assert report.macro_f1 == 0.0
        assert report.evaluated_classes == ()

    def test_absent_class_excluded_from_macro(self):
        refs = [[ann(1.0, 1.0, 0)]]
        preds = [[pred(1.0, 1.0, 0)]]
        report = evaluate(preds, refs, 3, distance_threshold=2.0)
        assert report.evaluated_classes == (0,)
        assert report.macro_f1 == 100.0  # class 1, 2 do not dilute

    def test_macro_is_unweighted_mean(self):
        # class 0: perfect (F1 100); class 1: half recall (F1 66.67)
        refs = [[ann(0.0, 0.0, 0), ann(10.0, 0.0, 1), ann(20.0, 0.0, 1)]]
        preds = [[pred(0.0, 0.0, 0), pred(10.0, 0.0, 1)]]
        report = evaluate(preds, refs, 2, distance_threshold=1.0)
        f1_cls1 = 2 * 100 * 50 / 150
        assert report.macro_f1 == pytest.approx((100.0 + f1_cls1) / 2)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ContractError):
            evaluate([[]], [[], []], 2, distance_threshold=1.0)

    def test_count_identities_hold(self, rng):
        # TP+FP = predictions, TP+FN = ground truths, pooled and per class
        refs, preds = [], []
        for _ in range(4):
            refs.append(
                [ann(rng.uniform(0, 10), rng.uniform(0, 10), int(rng.integers(0, 3)))
                 for _ in range(rng.integers(0, 5))]
            )
            preds.append(
                [pred(rng.uniform(0, 10), rng.uniform(0, 10), int(rng.integers(0, 3)))
                 for _ in range(rng.integers(0, 5))]
            )
        report = evaluate(preds, refs, 3, distance_threshold=2.0)
        n_pred = sum(len(p) for p in preds)
        n_gt = sum(len(r) for r in refs)
        assert report.detection.tp + report.detection.fp == n_pred
        assert report.detection.tp + report.detection.fn == n_gt
        cls_tp = sum(c.tp for c in report.per_class)
        cls_fp = sum(c.fp for c in report.per_class)
        cls_fn = sum(c.fn for c in report.per_class)
        assert cls_tp + cls_fp == n_pred
        assert cls_tp + cls_fn == n_gt

    def test_detection_tp_at_least_classification_tp(self, rng):
        # class-aware matching is a restriction of class-agnostic matching
        for _ in range(30):
            n_p, n_g = int(rng.integers(0, 6)), int(rng.integers(0, 6))
            pts_p = rng.uniform(0, 8, size=(n_p, 2))
            pts_g = rng.uniform(0, 8, size=(n_g, 2))
            cls_p = rng.integers(0, 2, size=n_p)
            cls_g = rng.integers(0, 2, size=n_g)
            det = eval_match(pts_p, cls_p, pts_g, cls_g,
                             distance_threshold=3.0, class_aware=False)
            aware = eval_match(pts_p, cls_p, pts_g, cls_g,
                               distance_threshold=3.0, class_aware=True)
            assert len(det.pairs) >= len(aware.pairs)

    @given(st.randoms(use_true_random=False))
    @settings(max_examples=25)
    def test_permutation_invariance(self, random):
        refs = [
            ann(random.uniform(0, 10), random.uniform(0, 10), random.randrange(3))
            for _ in range(5)
        ]
        preds = [
            pred(random.uniform(0, 10), random.uniform(0, 10), random.randrange(3))
            for _ in range(5)
        ]
        base = evaluate([preds], [refs], 3, distance_threshold=2.5)
        shuffled_preds = list(preds)
        shuffled_refs = list(refs)
        random.shuffle(shuffled_preds)
        random.shuffle(shuffled_refs)
        other = evaluate([shuffled_preds], [shuffled_refs], 3, distance_threshold=2.5)
        assert base == other

    def test_adding_spurious_prediction_never_raises_precision(self, rng):
        refs = [[ann(1.0, 1.0, 0), ann(5.0, 5.0, 1)]]
        preds = [pred(1.0, 1.0, 0)]
        before = evaluate([list(preds)], refs, 2, distance_threshold=1.0)
        preds.append(pred(9.0, 9.0, 1))
        after = evaluate([preds], refs, 2, distance_threshold=1.0)
        assert after.detection.precision <= before.detection.precision

    def test_adding_missed_truth_never_raises_recall(self):
        preds = [[pred(1.0, 1.0, 0)]]
        refs = [ann(1.0, 1.0, 0)]
        before = evaluate(preds, [list(refs)], 2, distance_threshold=1.0)
        refs.append(ann(9.0, 9.0, 0))
        after = evaluate(preds, [refs], 2, distance_threshold=1.0)
        assert after.detection.recall <= before.detection.recall


class TestEvaluateModel:
    def test_runs_end_to_end(self, rng):
        arch = ModelArch(num_classes=2, feature_dim=3, patch_radius=1, hidden_dim=4)
        params = init_params(arch, rng)
        samples = [
            make_sample(rng, feature_dim=3, annotations=[(3.0, 3.0, 0)], sample_id=f"s{i}")
            for i in range(3)
        ]
        report = evaluate_model(
            params, arch, samples, min_score=0.5, distance_threshold=6.0
        )
        assert isinstance(report, MetricsReport)
        assert 0.0 <= report.detection.f1 <= 100.0
        assert report.detection.tp + report.detection.fn == 3


class TestImbalanceRatio:
    def test_balanced_is_one(self):
        assert imbalance_ratio([5, 5, 5]) == 1.0

    def test_ratio_of_extremes(self):
        assert imbalance_ratio([20, 5, 4]) == 5.0

    def test_zero_class_gives_inf(self):
        assert imbalance_ratio([3, 0, 1]) == float("inf")

    def test_all_zero_gives_one(self):
        assert imbalance_ratio([0, 0]) == 1.0
        assert imbalance_ratio([]) == 1.0

    def test_ignore_empty_uses_smallest_nonzero(self):
        assert imbalance_ratio([8, 0, 2], ignore_empty=True) == 4.0

    def test_negative_rejected(self):
        with pytest.raises(ContractError):
            imbalance_ratio([3, -1])

    def test_permutation_invariant(self):
        assert imbalance_ratio([1, 9, 3]) == imbalance_ratio([9, 3, 1])


class TestPseudoLabelQuality:
    def test_perfect_pseudo_labels(self):
        refs = [ann(2.0, 2.0, 0), ann(5.0, 5.0, 1)]
        pseudo = [ann(2.0, 2.0, 0), ann(5.0, 5.0, 1)]
        prf = pseudo_label_quality(pseudo, refs, distance_threshold=2.0)
        assert prf.f1 == 100.0

    def test_class_mismatch_is_not_tp(self):
        refs = [ann(2.0, 2.0, 0)]
        pseudo = [ann(2.0, 2.0, 1)]
        prf = pseudo_label_quality(pseudo, refs, distance_threshold=2.0)
        assert prf.tp == 0
        assert prf.fp == 1
        assert prf.fn == 1

    def test_empty_pseudo_set(self):
        refs = [ann(2.0, 2.0, 0)]
        prf = pseudo_label_quality([], refs, distance_threshold=2.0)
        assert prf.precision == 0.0
        assert prf.recall == 0.0
