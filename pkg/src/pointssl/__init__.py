"""Semi-supervised point recognition on synthetic feature grids.

A small, fully deterministic laboratory for studying semi-supervised
point detection and classification: seeded synthetic datasets of blob
signatures on noisy grids, an anchor-based point recognizer trained with
analytic gradients, teacher-student self-training with co-teaching and
distribution-aligned pseudo-label thresholds, and a distance-threshold
matching evaluation.  Everything runs on numpy; experiments are driven
by the ``pointssl`` command or the library API re-exported here.
"""

from .augment import (
    AugmentationPipeline,
    GeometricRecord,
    strong_labeled_pipeline,
    strong_unlabeled_pipeline,
    transfer_points,
    weak_pipeline,
)
from .data import (
    DatasetConfig,
    DatasetSplit,
    FeatureGridSample,
    PointAnnotation,
    class_counts,
    class_signatures,
    generate_dataset,
    split_dataset,
)
from .errors import (
    ConfigError,
    ContractError,
    FormatError,
    NumericsError,
    PointSSLError,
    VersionError,
)
from .experiments import (
    ExperimentConfig,
    ExperimentRunner,
    RunRecord,
    ablation_plan,
    config_hash,
    emit_plots_data,
    grid_plan,
    load_experiment_config,
    sweep_plan,
)
from .losses import LossTerms, LossWeights, cls_loss, reg_loss, softmax
from .matching import Assignment, MatchResult, build_train_targets, eval_match, hungarian
from .metrics import (
    PRF,
    MetricsReport,
    evaluate,
    evaluate_model,
    imbalance_ratio,
    pseudo_label_quality,
)
from .model import (
    AdamState,
    ModelArch,
    PointPrediction,
    RawPredictions,
    TrainTargets,
    anchor_grid,
    decode,
    forward,
    forward_backward,
    init_params,
    optimizer_step,
    param_layout,
)
from .selftrain import (
    EpochStats,
    PseudoLabelSet,
    SSLToggles,
    TeacherStudentPair,
    ThresholdSet,
    TrainConfig,
    TrainingResult,
    aligned_target_counts,
    compute_thresholds,
    ema_update,
    generate_pseudo_labels,
    run_training,
    thresholds_from_scores,
    train_step,
)
from .storage import load_checkpoint, load_dataset, save_checkpoint, save_dataset

__version__ = "0.1.0"
