"""Teacher-student self-training with co-teaching and aligned thresholds.

The training loop has two phases.  Burn-in is plain supervised training
on the labeled pool.  The semi-supervised phase then adds, per pair, a
teacher model that is an exponential moving average of its student: the
teacher predicts on weakly augmented unlabeled samples, predictions
that clear per-class confidence thresholds become pseudo labels, and the
student trains on strongly augmented views against them.  Pseudo labels
supervise classification only; their locations are too noisy to teach
the offset head, and that exclusion is structural (the offset-head
gradient block from any unlabeled batch is exactly zero).

Three switches control the machinery:

* ``mutual_learning`` turns the teacher mechanism on at all.  Off, the
  unlabeled pool is ignored and both phases are supervised.
* ``co_teaching`` trains two independently initialized pairs where each
  teacher pseudo-labels for the *other* pair's student, so one model's
  early mistakes are not recycled straight back into itself.
* ``dist_align`` picks per-class thresholds so that pseudo-label class
  counts track the labeled pool's class distribution scaled to the
  unlabeled pool size, instead of one global cutoff that lets frequent
  classes flood the pseudo labels.

Unlabeled samples reach this module through annotation-stripped views;
any ground truth they secretly carry is for diagnostics elsewhere and is
structurally unreadable here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .augment import (
    GeometricRecord,
    strong_labeled_pipeline,
    strong_unlabeled_pipeline,
    transfer_points,
    weak_pipeline,
)
from .data import DatasetSplit, FeatureGridSample, PointAnnotation, class_counts
from .errors import ConfigError, ContractError
from .losses import LossTerms, LossWeights
from .matching import build_train_targets
from .metrics import MetricsReport, evaluate_model
from .model import (
    AdamState,
    ModelArch,
    PointPrediction,
    decode,
    forward,
    forward_backward,
    init_params,
    optimizer_step,
)

logger = logging.getLogger(__name__)


def _rng(*tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(tag)))

# Threshold sentinel above any reachable softmax score: the class is
# never pseudo-labeled.
DISABLED_THRESHOLD = 1.0 + 1e-6

_STREAM_INIT = 0
_STREAM_BATCH = 1
_STREAM_STEP = 2


@dataclass(frozen=True)
class SSLToggles:
    """Which parts of the semi-supervised machinery are active."""

    mutual_learning: bool = True
    co_teaching: bool = True
    dist_align: bool = True

    def validate(self) -> None:
        if not self.mutual_learning and (self.co_teaching or self.dist_align):
            raise ConfigError(
                "co_teaching and dist_align act on pseudo labels and need mutual_learning on"
            )


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run."""

    lr: float = 1e-4
    weight_decay: float = 0.0
    burn_in_epochs: int = 50
    ssl_epochs: int = 150
    labeled_batch: int = 4
    unlabeled_batch: int = 4
    ema_momentum: float = 0.99
    regression_weight: float = 2e-3
    unlabeled_cls_weight: float = 1.0
    cls_cost_weight: float = 1.0
    threshold_floor: float = 0.05
    global_pseudo_threshold: float = 0.5
    eval_min_score: float = 0.5
    eval_distance_threshold: float = 6.0
    seed: int = 0
    toggles: SSLToggles = field(default_factory=SSLToggles)

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.burn_in_epochs < 0 or self.ssl_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.labeled_batch < 1:
            raise ConfigError(f"labeled_batch must be >= 1, got {self.labeled_batch}")
        if self.unlabeled_batch < 0:
            raise ConfigError(f"unlabeled_batch must be >= 0, got {self.unlabeled_batch}")
        if not 0.0 <= self.ema_momentum <= 1.0:
            raise ConfigError(f"ema_momentum must be in [0, 1], got {self.ema_momentum}")
        if self.regression_weight < 0 or self.unlabeled_cls_weight < 0:
            raise ConfigError("loss weights must be >= 0")
        if not 0.0 <= self.threshold_floor <= 1.0:
            raise ConfigError(f"threshold_floor must be in [0, 1], got {self.threshold_floor}")
        if not 0.0 <= self.global_pseudo_threshold <= 1.0:
            raise ConfigError("global_pseudo_threshold must be in [0, 1]")
        if not 0.0 <= self.eval_min_score < 1.0:
            raise ConfigError("eval_min_score must be in [0, 1)")
        if self.eval_distance_threshold <= 0:
            raise ConfigError("eval_distance_threshold must be positive")
        self.toggles.validate()

    @property
    def weights(self) -> LossWeights:
        return LossWeights(
            regression_weight=self.regression_weight,
            unlabeled_cls_weight=self.unlabeled_cls_weight,
        )


@dataclass
class TeacherStudentPair:
    """One student (gradient-trained) and its optional EMA teacher.

    The teacher is ``None`` until the semi-supervised phase starts and is
    only ever written by :func:`ema_update` or the initial copy, never by
    the optimizer.
    """

    pair_index: int
    student: np.ndarray
    opt_state: AdamState | None = None
    teacher: np.ndarray | None = None


@dataclass(frozen=True)
class ThresholdSet:
    """Per-foreground-class confidence cutoffs for pseudo-label retention.

    A prediction of class i survives when its score is >= ``values[i]``.
    Classes that should never emit pseudo labels carry
    ``DISABLED_THRESHOLD``, which no softmax score can reach.
    """

    values: tuple[float, ...]

    def retain_mask(self, classes: np.ndarray, scores: np.ndarray) -> np.ndarray:
        cutoffs = np.asarray(self.values, dtype=np.float64)[classes]
        return np.asarray(scores, dtype=np.float64) >= cutoffs


@dataclass(frozen=True)
class PseudoLabelSet:
    """Retained pseudo labels for one unlabeled batch, canonical frame.

    ``teacher_index`` records which pair's teacher produced them; under
    co-teaching the consuming student always differs from the producer.
    """

    teacher_index: int
    labels: tuple[tuple[PointAnnotation, ...], ...]
    scores: tuple[tuple[float, ...], ...]

    def class_count_vector(self, num_classes: int) -> np.ndarray:
        counts = np.zeros(num_classes, dtype=np.int64)
        for sample_labels in self.labels:
            for ann in sample_labels:
                counts[ann.class_id] += 1
        return counts

    @property
    def total(self) -> int:
        return sum(len(sample_labels) for sample_labels in self.labels)


def ema_update(teacher: np.ndarray, student: np.ndarray, momentum: float) -> np.ndarray:
    """One exponential-moving-average step toward the student.

    Returns momentum * teacher + (1 - momentum) * student, elementwise,
    as a fresh array.  momentum 1 leaves the teacher unchanged, momentum
    0 copies the student.
    """
    if teacher.shape != student.shape:
        raise ContractError(
            f"teacher shape {teacher.shape} does not match student {student.shape}"
        )
    return momentum * teacher + (1.0 - momentum) * student


def aligned_target_counts(
    labeled_class_counts: np.ndarray | Sequence[int], num_labeled: int, num_unlabeled: int
) -> np.ndarray:
    """Expected pseudo-label count per class on the unlabeled pool.

    Scales each labeled-pool class count by the pool-size ratio and
    rounds: round((N_u / N_l) * n_i).  This is the count the per-class
    thresholds aim to retain, which keeps the pseudo-label class
    distribution tracking the labeled one.
    """
    if num_labeled < 1:
        raise ContractError("need at least one labeled sample to align distributions")
    if num_unlabeled < 0:
        raise ContractError("negative unlabeled pool size")
    counts = np.asarray(labeled_class_counts, dtype=np.float64)
    return np.rint(counts * (num_unlabeled / num_labeled)).astype(np.int64)


def thresholds_from_scores(
    scores_per_class: Sequence[np.ndarray],
    target_counts: np.ndarray | Sequence[int],
    *,
    floor: float,
) -> ThresholdSet:
    """Pick the per-class cutoff that retains the target count.

    For class i the threshold is the target_counts[i]-th largest
    candidate score, clamped below by ``floor``; retention is score >=
    threshold, so with distinct scores exactly the target count
    survives.  A zero target, or no candidates at all, disables the
    class outright.  Fewer candidates than the target means every
    candidate above the floor is kept.
    """
    targets = np.asarray(target_counts, dtype=np.int64)
    if len(scores_per_class) != len(targets):
        raise ContractError(
            f"{len(scores_per_class)} score lists vs {len(targets)} target counts"
        )
    values = []
    for class_id, (scores, target) in enumerate(zip(scores_per_class, targets)):
        scores = np.asarray(scores, dtype=np.float64)
        if target <= 0:
            if target == 0:
                logger.debug("class %d has aligned target 0; pseudo-labeling disabled", class_id)
            values.append(DISABLED_THRESHOLD)
        elif scores.size == 0:
            values.append(DISABLED_THRESHOLD)
        elif scores.size < target:
            logger.debug(
                "class %d has %d candidates for target %d; floor %.3f active",
                class_id,
                scores.size,
                target,
                floor,
            )
            values.append(floor)
        else:
            cutoff = float(np.sort(scores)[::-1][target - 1])
            values.append(max(cutoff, floor))
    return ThresholdSet(values=tuple(values))


def collect_candidates(
    params: np.ndarray, arch: ModelArch, samples: Sequence[FeatureGridSample]
) -> list[list[PointPrediction]]:
    """Every anchor's best foreground guess per sample, canonical views.

    Decoding at min_score 0 keeps all anchors, which is the raw
    candidate pool that threshold selection ranks.
    """
    return [
        decode(forward(params, arch, s.features), arch.num_classes, min_score=0.0)
        for s in samples
    ]


def compute_thresholds(
    teacher_params: np.ndarray,
    arch: ModelArch,
    unlabeled: Sequence[FeatureGridSample],
    labeled_class_counts: np.ndarray | Sequence[int],
    num_labeled: int,
    *,
    floor: float,
) -> ThresholdSet:
    """Distribution-aligned thresholds from one teacher's current state.

    Runs the teacher over every unlabeled sample's canonical view, pools
    candidate scores per class, and cuts each class at the score that
    retains its aligned target count.  Refreshed every epoch because the
    teacher's score distribution drifts as it improves.
    """
    targets = aligned_target_counts(labeled_class_counts, num_labeled, len(unlabeled))
    pooled: list[list[float]] = [[] for _ in range(arch.num_classes)]
    for sample_preds in collect_candidates(teacher_params, arch, unlabeled):
        for pred in sample_preds:
            pooled[pred.class_id].append(pred.score)
    scores_per_class = [np.asarray(s, dtype=np.float64) for s in pooled]
    return thresholds_from_scores(scores_per_class, targets, floor=floor)


def global_thresholds(num_classes: int, cutoff: float) -> ThresholdSet:
    """One shared cutoff for every class (the no-alignment baseline)."""
    return ThresholdSet(values=(cutoff,) * num_classes)


def generate_pseudo_labels(
    teacher_params: np.ndarray,
    arch: ModelArch,
    weak_features: np.ndarray,
    weak_record: GeometricRecord,
    thresholds: ThresholdSet,
) -> tuple[tuple[PointAnnotation, ...], tuple[float, ...]]:
    """Teacher predictions on one weak view, filtered and mapped back.

    Decodes every anchor's candidate on the weakly augmented view, keeps
    those at or above their class threshold, and returns coordinates in
    the canonical frame (the weak geometry is a flip, its own inverse).
    """
    candidates = decode(forward(teacher_params, arch, weak_features), arch.num_classes, 0.0)
    kept = [p for p in candidates if p.score >= thresholds.values[p.class_id]]
    if not kept:
        return (), ()
    weak_points = np.array([[p.x, p.y] for p in kept], dtype=np.float64)
    canonical = transfer_points(weak_points, weak_record)
    labels = tuple(
        PointAnnotation(x=float(canonical[i, 0]), y=float(canonical[i, 1]), class_id=p.class_id)
        for i, p in enumerate(kept)
    )
    return labels, tuple(p.score for p in kept)


def supervised_batch_gradient(
    params: np.ndarray,
    arch: ModelArch,
    batch: Sequence[tuple[np.ndarray, Sequence[PointAnnotation]]],
    *,
    reg_weight: float,
    cls_cost_weight: float,
) -> tuple[float, float, np.ndarray]:
    """Mean supervised loss and gradient over (features, annotations) views.

    Coordinates must already live in the same frame as the features
    (callers transfer them through any augmentation first).  Targets are
    rebuilt by matching at the current parameters and then held fixed;
    the gradient does not flow through the assignment.
    """
    cls_total = 0.0
    reg_total = 0.0
    grad = np.zeros_like(params)
    if not batch:
        return 0.0, 0.0, grad
    for features, annotations in batch:
        predictions = forward(params, arch, features)
        targets = build_train_targets(
            predictions, list(annotations), arch.num_classes, cls_cost_weight
        )
        cls_value, reg_value, sample_grad = forward_backward(
            params,
            arch,
            features,
            targets,
            cls_weight=1.0,
            reg_weight=reg_weight,
            include_regression=True,
        )
        cls_total += cls_value
        reg_total += reg_value
        grad += sample_grad
    n = len(batch)
    return cls_total / n, reg_total / n, grad / n


def unlabeled_batch_gradient(
    params: np.ndarray,
    arch: ModelArch,
    batch: Sequence[tuple[np.ndarray, Sequence[PointAnnotation]]],
    *,
    cls_weight: float,
    cls_cost_weight: float,
) -> tuple[float, np.ndarray]:
    """Mean pseudo-label classification loss and gradient.

    Pseudo-label coordinates steer the anchor assignment but never the
    offset head: the regression term is skipped entirely, so the
    offset-head blocks of the returned gradient are exactly zero.
    Samples whose pseudo set came back empty contribute nothing (an
    empty set means "no usable signal", not "everything is background"),
    and the mean runs over the contributing samples.
    """
    grad = np.zeros_like(params)
    cls_total = 0.0
    contributing = 0
    for features, annotations in batch:
        if not annotations:
            continue
        predictions = forward(params, arch, features)
        targets = build_train_targets(
            predictions, list(annotations), arch.num_classes, cls_cost_weight
        )
        cls_value, _, sample_grad = forward_backward(
            params,
            arch,
            features,
            targets,
            cls_weight=cls_weight,
            include_regression=False,
        )
        cls_total += cls_value
        grad += sample_grad
        contributing += 1
    if contributing == 0:
        return 0.0, grad
    return cls_total / contributing, grad / contributing


def train_step(
    pairs: Sequence[TeacherStudentPair],
    arch: ModelArch,
    labeled_batch: Sequence[FeatureGridSample],
    unlabeled_batch: Sequence[FeatureGridSample],
    thresholds: Sequence[ThresholdSet],
    config: TrainConfig,
    rng: np.random.Generator,
) -> tuple[list[TeacherStudentPair], list[LossTerms], list[PseudoLabelSet]]:
    """One optimization step for every pair on one mixed batch.

    Per student: strong-augment the labeled batch and train against its
    (geometry-transferred) annotations; have the supervising teacher
    pseudo-label fresh weak views of the unlabeled batch, transfer the
    retained points into the student's strong views, and add the
    pseudo-classification term; apply one optimizer step.  Under
    co-teaching the supervising teacher is the other pair's.  After all
    students have stepped, every teacher takes one EMA step toward its
    own student.

    Pure with respect to its inputs: returns fresh pairs, per-student
    loss terms, and the pseudo-label sets each student consumed
    (canonical frame).  Draw order from ``rng`` is fixed: per pair the
    labeled strong views, then (teachers present) one weak view per
    unlabeled sample shared by all teachers, then per pair the unlabeled
    strong views.
    """
    weak = weak_pipeline()
    strong_labeled = strong_labeled_pipeline()
    strong_unlabeled = strong_unlabeled_pipeline()

    labeled_views: list[list[tuple[np.ndarray, list[PointAnnotation]]]] = []
    for _ in pairs:
        views = []
        for sample in labeled_batch:
            aug, record = strong_labeled.apply(sample.features, rng)
            if sample.annotations:
                coords = np.array([[a.x, a.y] for a in sample.annotations])
                moved = transfer_points(coords, record)
                anns = [
                    PointAnnotation(x=float(moved[i, 0]), y=float(moved[i, 1]), class_id=a.class_id)
                    for i, a in enumerate(sample.annotations)
                ]
            else:
                anns = []
            views.append((aug, anns))
        labeled_views.append(views)

    use_unlabeled = (
        config.toggles.mutual_learning
        and len(unlabeled_batch) > 0
        and all(pair.teacher is not None for pair in pairs)
    )
    weak_views: list[tuple[np.ndarray, GeometricRecord]] = []
    if use_unlabeled:
        weak_views = [weak.apply(sample.features, rng) for sample in unlabeled_batch]

    new_pairs: list[TeacherStudentPair] = []
    losses: list[LossTerms] = []
    pseudo_sets: list[PseudoLabelSet] = []
    for k, pair in enumerate(pairs):
        cls_l, reg_l, grad = supervised_batch_gradient(
            pair.student,
            arch,
            labeled_views[k],
            reg_weight=config.regression_weight,
            cls_cost_weight=config.cls_cost_weight,
        )
        cls_u = 0.0
        pseudo_set = PseudoLabelSet(teacher_index=k, labels=(), scores=())
        if use_unlabeled:
            source = (len(pairs) - 1 - k) if config.toggles.co_teaching else k
            teacher = pairs[source].teacher
            assert teacher is not None
            per_sample_labels = []
            per_sample_scores = []
            student_views = []
            for (weak_features, weak_record), sample in zip(weak_views, unlabeled_batch):
                labels, scores = generate_pseudo_labels(
                    teacher, arch, weak_features, weak_record, thresholds[source]
                )
                per_sample_labels.append(labels)
                per_sample_scores.append(scores)
                aug, record = strong_unlabeled.apply(sample.features, rng)
                if labels:
                    coords = np.array([[a.x, a.y] for a in labels])
                    moved = transfer_points(coords, record)
                    anns = [
                        PointAnnotation(
                            x=float(moved[i, 0]), y=float(moved[i, 1]), class_id=a.class_id
                        )
                        for i, a in enumerate(labels)
                    ]
                else:
                    anns = []
                student_views.append((aug, anns))
            pseudo_set = PseudoLabelSet(
                teacher_index=source,
                labels=tuple(per_sample_labels),
                scores=tuple(per_sample_scores),
            )
            cls_u, grad_u = unlabeled_batch_gradient(
                pair.student,
                arch,
                student_views,
                cls_weight=config.unlabeled_cls_weight,
                cls_cost_weight=config.cls_cost_weight,
            )
            grad = grad + grad_u
        new_student, new_state = optimizer_step(
            pair.student,
            grad,
            pair.opt_state,
            lr=config.lr,
            weight_decay=config.weight_decay,
        )
        new_pairs.append(
            TeacherStudentPair(
                pair_index=pair.pair_index,
                student=new_student,
                opt_state=new_state,
                teacher=pair.teacher,
            )
        )
        losses.append(LossTerms(labeled_cls=cls_l, labeled_reg=reg_l, unlabeled_cls=cls_u))
        pseudo_sets.append(pseudo_set)

    for pair in new_pairs:
        if pair.teacher is not None:
            pair.teacher = ema_update(pair.teacher, pair.student, config.ema_momentum)
    return new_pairs, losses, pseudo_sets


@dataclass(frozen=True)
class EpochStats:
    """One epoch's record: losses, pseudo-label activity, validation.

    Tuples are indexed by pair.  Threshold and pseudo-count fields are
    empty during burn-in and for purely supervised runs; validation F1
    tracks the teacher once it exists, the student before that.
    """

    epoch: int
    phase: str
    labeled_cls: tuple[float, ...]
    labeled_reg: tuple[float, ...]
    unlabeled_cls: tuple[float, ...]
    thresholds: tuple[tuple[float, ...], ...]
    pseudo_class_counts: tuple[tuple[int, ...], ...]
    val_detection_f1: tuple[float, ...]
    val_macro_f1: tuple[float, ...]


@dataclass
class TrainingResult:
    """Selected parameters plus everything recorded along the way."""

    arch: ModelArch
    params: np.ndarray
    selected: str
    pairs: list[TeacherStudentPair]
    history: list[EpochStats]
    val_report: MetricsReport


def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    return [order[i : i + size] for i in range(0, len(order), size)]


def run_training(
    split: DatasetSplit,
    arch: ModelArch,
    config: TrainConfig,
    *,
    progress: Callable[[EpochStats], None] | None = None,
) -> TrainingResult:
    """Burn-in plus semi-supervised training on one dataset split.

    Students start from distinct seeds (config seed, config seed + 1).
    Teachers are born at the start of the semi-supervised phase as
    copies of their students.  Each semi-supervised epoch recomputes
    every teacher's thresholds from the full unlabeled pool, then walks
    the larger pool in shuffled batches while sampling the smaller pool
    with replacement.  The returned parameters belong to the teacher
    with the best final-epoch validation classification F1 (ties go to
    the first pair; the student stands in when mutual learning is off).
    """
    config.validate()
    arch.validate()
    if arch.num_classes != split.config.num_classes:
        raise ContractError(
            f"arch has {arch.num_classes} classes, dataset {split.config.num_classes}"
        )
    if not split.labeled:
        raise ContractError("training needs at least one labeled sample")

    toggles = config.toggles
    labeled = list(split.labeled)
    # Stripped views: the loop must not be able to read unlabeled ground truth.
    unlabeled = split.unlabeled_stripped() if toggles.mutual_learning else []
    num_classes = arch.num_classes
    labeled_counts = class_counts(labeled, num_classes)

    n_pairs = 2 if (toggles.mutual_learning and toggles.co_teaching) else 1
    pairs = [
        TeacherStudentPair(
            pair_index=k,
            student=init_params(arch, _rng(config.seed + k, _STREAM_INIT)),
        )
        for k in range(n_pairs)
    ]
    batch_rng = _rng(config.seed, _STREAM_BATCH)
    step_rng = _rng(config.seed, _STREAM_STEP)

    history: list[EpochStats] = []

    def run_epoch(
        epoch: int,
        phase: str,
        use_unlabeled: bool,
        thresholds: list[ThresholdSet],
    ) -> None:
        nonlocal pairs
        n_labeled_pool = len(labeled)
        n_unlabeled_pool = len(unlabeled) if use_unlabeled else 0
        step_batches: list[tuple[list[FeatureGridSample], list[FeatureGridSample]]] = []
        if n_unlabeled_pool == 0:
            for idx in _batches(batch_rng.permutation(n_labeled_pool), config.labeled_batch):
                step_batches.append(([labeled[i] for i in idx], []))
        elif n_unlabeled_pool >= n_labeled_pool:
            for idx in _batches(batch_rng.permutation(n_unlabeled_pool), config.unlabeled_batch):
                picked = batch_rng.integers(0, n_labeled_pool, size=config.labeled_batch)
                step_batches.append(([labeled[i] for i in picked], [unlabeled[i] for i in idx]))
        else:
            for idx in _batches(batch_rng.permutation(n_labeled_pool), config.labeled_batch):
                picked = batch_rng.integers(0, n_unlabeled_pool, size=config.unlabeled_batch)
                step_batches.append(([labeled[i] for i in idx], [unlabeled[i] for i in picked]))

        loss_sums = np.zeros((len(pairs), 3))
        pseudo_counts = np.zeros((len(pairs), num_classes), dtype=np.int64)
        for labeled_batch, unlabeled_batch in step_batches:
            pairs, losses, pseudo_sets = train_step(
                pairs, arch, labeled_batch, unlabeled_batch, thresholds, config, step_rng
            )
            for k, terms in enumerate(losses):
                loss_sums[k] += (terms.labeled_cls, terms.labeled_reg, terms.unlabeled_cls)
            for pseudo in pseudo_sets:
                if pseudo.labels:
                    pseudo_counts[pseudo.teacher_index] += pseudo.class_count_vector(num_classes)

        n_steps = max(len(step_batches), 1)
        val_det = []
        val_macro = []
        for pair in pairs:
            model = pair.teacher if pair.teacher is not None else pair.student
            report = evaluate_model(
                model,
                arch,
                split.validation,
                min_score=config.eval_min_score,
                distance_threshold=config.eval_distance_threshold,
            )
            val_det.append(report.detection.f1)
            val_macro.append(report.macro_f1)
        stats = EpochStats(
            epoch=epoch,
            phase=phase,
            labeled_cls=tuple(loss_sums[:, 0] / n_steps),
            labeled_reg=tuple(loss_sums[:, 1] / n_steps),
            unlabeled_cls=tuple(loss_sums[:, 2] / n_steps),
            thresholds=tuple(tuple(t.values) for t in thresholds),
            pseudo_class_counts=tuple(tuple(int(c) for c in row) for row in pseudo_counts)
            if use_unlabeled
            else (),
            val_detection_f1=tuple(val_det),
            val_macro_f1=tuple(val_macro),
        )
        history.append(stats)
        if progress is not None:
            progress(stats)

    epoch = 0
    for _ in range(config.burn_in_epochs):
        run_epoch(epoch, "burn_in", use_unlabeled=False, thresholds=[])
        epoch += 1

    if toggles.mutual_learning:
        for pair in pairs:
            pair.teacher = pair.student.copy()

    for _ in range(config.ssl_epochs):
        if toggles.mutual_learning and len(unlabeled) > 0:
            if toggles.dist_align:
                thresholds = [
                    compute_thresholds(
                        pair.teacher,
                        arch,
                        unlabeled,
                        labeled_counts,
                        len(labeled),
                        floor=config.threshold_floor,
                    )
                    for pair in pairs
                ]
            else:
                thresholds = [
                    global_thresholds(num_classes, config.global_pseudo_threshold)
                    for _ in pairs
                ]
            run_epoch(epoch, "ssl", use_unlabeled=True, thresholds=thresholds)
        else:
            run_epoch(epoch, "ssl", use_unlabeled=False, thresholds=[])
        epoch += 1

    candidates = []
    for k, pair in enumerate(pairs):
        model = pair.teacher if pair.teacher is not None else pair.student
        kind = "teacher" if pair.teacher is not None else "student"
        report = evaluate_model(
            model,
            arch,
            split.validation,
            min_score=config.eval_min_score,
            distance_threshold=config.eval_distance_threshold,
        )
        candidates.append((report.macro_f1, k, f"{kind}{k + 1}", model, report))
    # max on (f1, -k) keeps the first pair on ties
    best = max(candidates, key=lambda c: (c[0], -c[1]))
    _, _, selected, params, val_report = best
    return TrainingResult(
        arch=arch,
        params=params.copy(),
        selected=selected,
        pairs=pairs,
        history=history,
        val_report=val_report,
    )
