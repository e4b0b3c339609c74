"""Synthetic multi-class point-field datasets.

A sample is an H x W grid of D-dimensional feature vectors plus point
annotations (x, y, class).  Each class stamps a fixed unit "signature"
direction into feature space through an isotropic Gaussian spatial blob, so
classes are linearly separable in expectation while additive noise controls
task difficulty.  Generation, splitting, and the class signatures are all
deterministic functions of the dataset seed.

Coordinate convention: continuous pixel-center coordinates in
``[0, W-1] x [0, H-1]``.  Keeping coordinates inside the closed pixel-index
range makes horizontal/vertical flips (``x' = (W-1) - x``) exact and closed
over the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

# Retries per cell when rejection-sampling a location at min_cell_separation.
# Exhausting the budget drops the cell (a sample may carry fewer cells than
# its Poisson draw; never an error).
_REJECTION_RETRIES = 100

# Sub-stream tags so signatures, per-sample draws, and splits never share
# RNG state.
_STREAM_SIGNATURES = 0
_STREAM_SAMPLES = 1


@dataclass(frozen=True)
class PointAnnotation:
    """A single annotated point: location in pixels plus foreground class."""

    x: float
    y: float
    class_id: int


@dataclass(eq=False)
class FeatureGridSample:
    """One synthetic image: a feature grid plus its point annotations.

    ``features`` has shape (H, W, D), dtype float32, and is finite
    everywhere.  ``annotations`` is empty for samples used as unlabeled
    input.
    """

    id: str
    features: np.ndarray
    annotations: tuple[PointAnnotation, ...] = ()

    @property
    def grid_shape(self) -> tuple[int, int]:
        """(height, width) of the feature grid."""
        return self.features.shape[0], self.features.shape[1]

    def without_annotations(self) -> "FeatureGridSample":
        """Annotation-stripped view handed to training code.

        The returned sample shares the feature array but drops the ground
        truth, so a training loop holding this view cannot read the labels
        that diagnostics later compare against.
        """
        return FeatureGridSample(id=self.id, features=self.features, annotations=())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureGridSample):
            return NotImplemented
        return (
            self.id == other.id
            and self.features.shape == other.features.shape
            and self.features.dtype == other.features.dtype
            and bool(np.array_equal(self.features, other.features))
            and self.annotations == other.annotations
        )


@dataclass(frozen=True)
class DatasetConfig:
    """Parameters of the synthetic dataset generator.

    ``class_frequencies`` must sum to 1 (within 1e-9) with every entry
    positive; max/min of the entries is the designed imbalance ratio.
    """

    num_classes: int
    grid_height: int
    grid_width: int
    feature_dim: int
    num_images: int
    cells_per_image: float
    class_frequencies: tuple[float, ...]
    signature_noise_sigma: float = 0.25
    min_cell_separation: float = 0.0
    blob_radius: float = 1.5
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.grid_height < 1 or self.grid_width < 1:
            raise ConfigError(
                f"grid dimensions must be positive, got {self.grid_height}x{self.grid_width}"
            )
        if self.feature_dim < 1:
            raise ConfigError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.num_images < 1:
            raise ConfigError(f"num_images must be >= 1, got {self.num_images}")
        if self.cells_per_image < 0:
            raise ConfigError(f"cells_per_image must be >= 0, got {self.cells_per_image}")
        if len(self.class_frequencies) != self.num_classes:
            raise ConfigError(
                f"class_frequencies has {len(self.class_frequencies)} entries "
                f"for {self.num_classes} classes"
            )
        if any(f <= 0 for f in self.class_frequencies):
            raise ConfigError("class_frequencies entries must all be > 0")
        total = float(sum(self.class_frequencies))
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"class_frequencies must sum to 1, got {total!r}")
        if self.signature_noise_sigma < 0:
            raise ConfigError("signature_noise_sigma must be >= 0")
        if self.min_cell_separation < 0:
            raise ConfigError("min_cell_separation must be >= 0")
        if self.blob_radius <= 0:
            raise ConfigError("blob_radius must be > 0")
        if not (-(2**63) <= int(self.seed) < 2**64):
            raise ConfigError("seed must fit in 64 bits")

    @property
    def designed_imbalance_ratio(self) -> float:
        return max(self.class_frequencies) / min(self.class_frequencies)


@dataclass(eq=False)
class DatasetSplit:
    """Labeled/unlabeled/validation/test partition of a generated dataset.

    ``unlabeled`` retains its ground-truth annotations for diagnostics;
    training code must only ever receive :meth:`unlabeled_stripped`.
    """

    config: DatasetConfig
    labeled: list[FeatureGridSample] = field(default_factory=list)
    unlabeled: list[FeatureGridSample] = field(default_factory=list)
    validation: list[FeatureGridSample] = field(default_factory=list)
    test: list[FeatureGridSample] = field(default_factory=list)

    def unlabeled_stripped(self) -> list[FeatureGridSample]:
        """Annotation-free views of the unlabeled pool, in pool order."""
        return [s.without_annotations() for s in self.unlabeled]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DatasetSplit):
            return NotImplemented
        return (
            self.config == other.config
            and self.labeled == other.labeled
            and self.unlabeled == other.unlabeled
            and self.validation == other.validation
            and self.test == other.test
        )


def class_signatures(config: DatasetConfig) -> np.ndarray:
    """Per-class unit signature vectors, shape (C, D), float32.

    A deterministic function of (seed, num_classes, feature_dim) only, so
    regenerating any subset of a dataset reuses identical signatures.
    """
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((config.seed, _STREAM_SIGNATURES)))
    )
    raw = rng.standard_normal((config.num_classes, config.feature_dim))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return (raw / norms).astype(np.float32)


def _stamp_blob(features: np.ndarray, x: float, y: float, signature: np.ndarray, radius: float) -> None:
    """Add ``exp(-d^2 / 2r^2) * signature`` around (x, y), in place."""
    height, width = features.shape[0], features.shape[1]
    reach = int(math.ceil(3.0 * radius))
    x0 = max(0, int(math.floor(x)) - reach)
    x1 = min(width - 1, int(math.ceil(x)) + reach)
    y0 = max(0, int(math.floor(y)) - reach)
    y1 = min(height - 1, int(math.ceil(y)) + reach)
    xs = np.arange(x0, x1 + 1, dtype=np.float64)
    ys = np.arange(y0, y1 + 1, dtype=np.float64)
    sq = (ys[:, None] - y) ** 2 + (xs[None, :] - x) ** 2
    kernel = np.exp(-sq / (2.0 * radius * radius)).astype(np.float32)
    features[y0 : y1 + 1, x0 : x1 + 1, :] += kernel[:, :, None] * signature[None, None, :]


def _generate_sample(index: int, config: DatasetConfig, signatures: np.ndarray,
                     rng: np.random.Generator) -> FeatureGridSample:
    height, width = config.grid_height, config.grid_width
    n_cells = int(rng.poisson(config.cells_per_image))
    min_sep_sq = config.min_cell_separation**2

    accepted: list[PointAnnotation] = []
    xs: list[float] = []
    ys: list[float] = []
    for _ in range(n_cells):
        class_id = int(rng.choice(config.num_classes, p=np.asarray(config.class_frequencies)))
        placed = False
        for _ in range(_REJECTION_RETRIES):
            # Coordinates rounded to float32 up front so the stored values
            # (and the separation invariant checked on them) survive a
            # float32 round-trip bit-exactly.
            x = float(np.float32(rng.uniform(0.0, width - 1)))
            y = float(np.float32(rng.uniform(0.0, height - 1)))
            if min_sep_sq > 0 and any(
                (x - px) ** 2 + (y - py) ** 2 < min_sep_sq for px, py in zip(xs, ys)
            ):
                continue
            placed = True
            break
        if not placed:
            continue
        accepted.append(PointAnnotation(x=x, y=y, class_id=class_id))
        xs.append(x)
        ys.append(y)

    features = np.zeros((height, width, config.feature_dim), dtype=np.float32)
    if config.signature_noise_sigma > 0:
        noise = rng.normal(0.0, config.signature_noise_sigma, size=features.shape)
        features += noise.astype(np.float32)
    for ann in accepted:
        _stamp_blob(features, ann.x, ann.y, signatures[ann.class_id], config.blob_radius)

    return FeatureGridSample(id=f"img{index:05d}", features=features, annotations=tuple(accepted))


def generate_dataset(config: DatasetConfig) -> list[FeatureGridSample]:
    """Generate ``config.num_images`` samples, deterministic in the seed.

    Per sample: cell count ~ Poisson(cells_per_image); each cell draws a
    class from ``class_frequencies`` and a location uniform over the grid,
    rejection-sampled to respect ``min_cell_separation`` (cells whose retry
    budget runs out are dropped, never an error).

    Each sample consumes an independent RNG sub-stream, so generation may be
    parallelized across samples without changing the output.
    """
    config.validate()
    signatures = class_signatures(config)
    root = np.random.SeedSequence((config.seed, _STREAM_SAMPLES))
    children = root.spawn(config.num_images)
    return [
        _generate_sample(i, config, signatures, np.random.Generator(np.random.PCG64(children[i])))
        for i in range(config.num_images)
    ]


def split_dataset(
    samples: list[FeatureGridSample],
    config: DatasetConfig,
    labeling_ratio: float,
    val_frac: float = 0.2,
    test_frac: float = 0.2,
    seed: int = 0,
) -> DatasetSplit:
    """Partition samples into labeled/unlabeled/validation/test subsets.

    Shuffles with ``seed``, carves off round(val_frac * N) validation and
    round(test_frac * N) test samples, then marks ceil(labeling_ratio *
    n_train) of the remaining training samples as labeled.  At
    ``labeling_ratio == 1.0`` the unlabeled pool is empty (training then
    degrades to supervised-only).
    """
    if not 0.0 < labeling_ratio <= 1.0:
        raise ConfigError(f"labeling_ratio must be in (0, 1], got {labeling_ratio}")
    if val_frac < 0 or test_frac < 0 or val_frac + test_frac >= 1.0:
        raise ConfigError(
            f"val_frac + test_frac must leave a training remainder, got {val_frac} + {test_frac}"
        )
    n_total = len(samples)
    n_val = int(round(val_frac * n_total))
    n_test = int(round(test_frac * n_total))
    n_train = n_total - n_val - n_test
    if n_train < 1:
        raise ConfigError(f"split leaves no training samples (N={n_total})")

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    order = rng.permutation(n_total)
    train_idx = order[:n_train]
    val_idx = order[n_train : n_train + n_val]
    test_idx = order[n_train + n_val :]

    n_labeled = int(math.ceil(labeling_ratio * n_train))
    if n_labeled < 1:
        raise ConfigError("labeling_ratio yields zero labeled samples")

    return DatasetSplit(
        config=config,
        labeled=[samples[i] for i in train_idx[:n_labeled]],
        unlabeled=[samples[i] for i in train_idx[n_labeled:]],
        validation=[samples[i] for i in val_idx],
        test=[samples[i] for i in test_idx],
    )


def class_counts(samples: list[FeatureGridSample], num_classes: int) -> np.ndarray:
    """Annotation counts per class over ``samples``, shape (C,), int64."""
    counts = np.zeros(num_classes, dtype=np.int64)
    for sample in samples:
        for ann in sample.annotations:
            counts[ann.class_id] += 1
    return counts
