"""Distance-threshold precision, recall, and F1 for point predictions.

A prediction counts as a true positive when a one-to-one matching pairs
it with a ground truth point at most the distance threshold away.  Two
views are reported: detection ignores classes and pools counts over all
samples, classification requires class agreement, pools per-class
counts, and macro-averages over the classes that actually occur (a class
absent from both ground truth and predictions would contribute a
meaningless 0 and is left out of the average).

All rates are percentages.  Degenerate ratios (0 / 0) read as 0 rather
than being dropped, so an empty prediction set scores 0 precision, not a
crash.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import FeatureGridSample, PointAnnotation
from .errors import ContractError
from .matching import eval_match
from .model import ModelArch, PointPrediction, decode, forward


@dataclass(frozen=True)
class PRF:
    """Precision, recall, F1 in percent, with the raw counts behind them."""

    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


def _prf(tp: int, fp: int, fn: int) -> PRF:
    precision = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    recall = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PRF(precision=precision, recall=recall, f1=f1, tp=tp, fp=fp, fn=fn)


@dataclass(frozen=True)
class MetricsReport:
    """Pooled detection and per-class classification scores."""

    detection: PRF
    per_class: tuple[PRF, ...]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    evaluated_classes: tuple[int, ...]


def evaluate(
    predictions: Sequence[Sequence[PointPrediction]],
    references: Sequence[Sequence[PointAnnotation]],
    num_classes: int,
    *,
    distance_threshold: float,
) -> MetricsReport:
    """Score predictions against references, sample by sample, pooled.

    ``predictions[i]`` and ``references[i]`` describe the same sample.
    Matching runs twice per sample: class-agnostic for the detection
    counts and class-aware for the per-class counts.
    """
    if len(predictions) != len(references):
        raise ContractError(
            f"{len(predictions)} prediction lists vs {len(references)} reference lists"
        )
    det_tp = det_fp = det_fn = 0
    cls_tp = np.zeros(num_classes, dtype=np.int64)
    cls_fp = np.zeros(num_classes, dtype=np.int64)
    cls_fn = np.zeros(num_classes, dtype=np.int64)

    for preds, refs in zip(predictions, references):
        pred_points = np.array([[p.x, p.y] for p in preds], dtype=np.float64).reshape(-1, 2)
        pred_classes = np.array([p.class_id for p in preds], dtype=np.int64)
        gt_points = np.array([[r.x, r.y] for r in refs], dtype=np.float64).reshape(-1, 2)
        gt_classes = np.array([r.class_id for r in refs], dtype=np.int64)

        det = eval_match(
            pred_points,
            pred_classes,
            gt_points,
            gt_classes,
            distance_threshold=distance_threshold,
            class_aware=False,
        )
        det_tp += len(det.pairs)
        det_fp += det.num_pred - len(det.pairs)
        det_fn += det.num_gt - len(det.pairs)

        cls = eval_match(
            pred_points,
            pred_classes,
            gt_points,
            gt_classes,
            distance_threshold=distance_threshold,
            class_aware=True,
        )
        matched_pred = np.zeros(len(preds), dtype=bool)
        matched_gt = np.zeros(len(refs), dtype=bool)
        for p, g in cls.pairs:
            cls_tp[gt_classes[g]] += 1
            matched_pred[p] = True
            matched_gt[g] = True
        for p in range(len(preds)):
            if not matched_pred[p]:
                cls_fp[pred_classes[p]] += 1
        for g in range(len(refs)):
            if not matched_gt[g]:
                cls_fn[gt_classes[g]] += 1

    per_class = tuple(
        _prf(int(cls_tp[i]), int(cls_fp[i]), int(cls_fn[i])) for i in range(num_classes)
    )
    evaluated = tuple(
        i for i in range(num_classes) if cls_tp[i] + cls_fp[i] + cls_fn[i] > 0
    )
    if evaluated:
        macro_p = float(np.mean([per_class[i].precision for i in evaluated]))
        macro_r = float(np.mean([per_class[i].recall for i in evaluated]))
        macro_f1 = float(np.mean([per_class[i].f1 for i in evaluated]))
    else:
        macro_p = macro_r = macro_f1 = 0.0
    return MetricsReport(
        detection=_prf(det_tp, det_fp, det_fn),
        per_class=per_class,
        macro_precision=macro_p,
        macro_recall=macro_r,
        macro_f1=macro_f1,
        evaluated_classes=evaluated,
    )


def evaluate_model(
    params: np.ndarray,
    arch: ModelArch,
    samples: Sequence[FeatureGridSample],
    *,
    min_score: float,
    distance_threshold: float,
) -> MetricsReport:
    """Decode every sample with the given parameters, then score.

    Convenience wrapper: inference on the canonical (unaugmented) views,
    keeping predictions with score strictly above ``min_score``.
    """
    predictions = [
        decode(forward(params, arch, s.features), arch.num_classes, min_score)
        for s in samples
    ]
    references = [list(s.annotations) for s in samples]
    return evaluate(
        predictions, references, arch.num_classes, distance_threshold=distance_threshold
    )


def imbalance_ratio(counts: np.ndarray | Sequence[int], *, ignore_empty: bool = False) -> float:
    """Most frequent count over least frequent count.

    Returns 1.0 for an all-zero (or empty) count vector and +inf when
    some class has zero count while another does not.  With
    ``ignore_empty`` the denominator is the smallest nonzero count
    instead, which keeps the ratio finite for comparisons between two
    already-degenerate distributions.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0 or counts.max() == 0:
        return 1.0
    if counts.min() < 0:
        raise ContractError("counts must be nonnegative")
    if ignore_empty:
        lowest = counts[counts > 0].min()
    else:
        lowest = counts.min()
        if lowest == 0:
            return float("inf")
    return float(counts.max() / lowest)


def pseudo_label_quality(
    pseudo: Sequence[PointAnnotation],
    references: Sequence[PointAnnotation],
    *,
    distance_threshold: float,
) -> PRF:
    """Class-aware precision/recall of one sample's pseudo labels.

    Instrumentation only; training never sees these numbers.  Counts are
    micro (pooled over classes), since the question asked is "how clean
    is this supervision signal", not "how balanced".
    """
    pseudo_points = np.array([[p.x, p.y] for p in pseudo], dtype=np.float64).reshape(-1, 2)
    pseudo_classes = np.array([p.class_id for p in pseudo], dtype=np.int64)
    gt_points = np.array([[r.x, r.y] for r in references], dtype=np.float64).reshape(-1, 2)
    gt_classes = np.array([r.class_id for r in references], dtype=np.int64)
    result = eval_match(
        pseudo_points,
        pseudo_classes,
        gt_points,
        gt_classes,
        distance_threshold=distance_threshold,
        class_aware=True,
    )
    tp = len(result.pairs)
    return _prf(tp, result.num_pred - tp, result.num_gt - tp)
