"""Stochastic augmentation pipelines for feature grids.

Two families: weak augmentation (horizontal flip only) feeds the teacher
so its predictions stay close to the clean geometry, strong augmentation
(flips plus photometric noise, channel jitter, blur) feeds the student.
Geometric ops are the only ones that move points, so each application
returns a :class:`GeometricRecord` that can replay the same flips on
annotation or pseudo-label coordinates via :func:`transfer_points`.

With flips the transfer is exact: a horizontal flip maps x to
(W - 1) - x, which is closed under the float32-rounded coordinates the
data generator produces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import ContractError


@dataclass(frozen=True)
class FlipHorizontal:
    """Mirror the grid left-right with the given probability."""

    probability: float = 0.5


@dataclass(frozen=True)
class FlipVertical:
    """Mirror the grid top-bottom with the given probability."""

    probability: float = 0.5


@dataclass(frozen=True)
class FeatureNoise:
    """Add zero-mean gaussian noise to every feature value."""

    sigma: float = 0.1


@dataclass(frozen=True)
class ChannelScaleJitter:
    """Multiply each feature channel by an independent factor near 1."""

    max_delta: float = 0.2


@dataclass(frozen=True)
class BoxBlur:
    """Spatial box blur applied channelwise with the given probability."""

    size: int = 3
    probability: float = 0.5


AugmentOp = FlipHorizontal | FlipVertical | FeatureNoise | ChannelScaleJitter | BoxBlur


@dataclass(frozen=True)
class GeometricRecord:
    """Which geometric ops fired, plus the grid extent they acted on.

    Photometric ops never appear here; the record is exactly what
    :func:`transfer_points` needs to replay the geometry on point sets.
    """

    grid_height: int
    grid_width: int
    hflip: bool = False
    vflip: bool = False


@dataclass(frozen=True)
class AugmentationPipeline:
    """An ordered list of augmentation ops with a human-readable kind tag."""

    kind: str
    ops: tuple[AugmentOp, ...] = field(default_factory=tuple)

    def apply(
        self, features: np.ndarray, rng: np.random.Generator
    ) -> tuple[np.ndarray, GeometricRecord]:
        """Run every op in order on a copy of ``features``.

        Returns the augmented grid (float32, same shape) and the record of
        geometric ops that actually fired.  Draws from ``rng`` in op order,
        one decision per stochastic op, so replays with an equally seeded
        generator are bit-identical.
        """
        if features.ndim != 3:
            raise ContractError(f"expected (H, W, D) features, got shape {features.shape}")
        height, width = features.shape[0], features.shape[1]
        out = features.astype(np.float32, copy=True)
        hflip = False
        vflip = False
        for op in self.ops:
            if isinstance(op, FlipHorizontal):
                if rng.random() < op.probability:
                    out = out[:, ::-1, :].copy()
                    hflip = not hflip
            elif isinstance(op, FlipVertical):
                if rng.random() < op.probability:
                    out = out[::-1, :, :].copy()
                    vflip = not vflip
            elif isinstance(op, FeatureNoise):
                if op.sigma > 0:
                    noise = rng.normal(0.0, op.sigma, size=out.shape)
                    out = (out + noise).astype(np.float32)
            elif isinstance(op, ChannelScaleJitter):
                scales = 1.0 + rng.uniform(-op.max_delta, op.max_delta, size=out.shape[2])
                out = (out * scales[None, None, :]).astype(np.float32)
            elif isinstance(op, BoxBlur):
                if rng.random() < op.probability:
                    out = uniform_filter(
                        out, size=(op.size, op.size, 1), mode="nearest"
                    ).astype(np.float32)
            else:
                raise ContractError(f"unknown augmentation op {op!r}")
        record = GeometricRecord(
            grid_height=height, grid_width=width, hflip=hflip, vflip=vflip
        )
        return out, record


def transfer_points(points: np.ndarray, record: GeometricRecord) -> np.ndarray:
    """Map (N, 2) x, y coordinates through the geometry in ``record``.

    The transform is an involution (flips undo themselves), so the same
    call maps points either into or out of the augmented frame.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ContractError(f"expected (N, 2) points, got shape {points.shape}")
    out = points.copy()
    if record.hflip:
        out[:, 0] = (record.grid_width - 1) - out[:, 0]
    if record.vflip:
        out[:, 1] = (record.grid_height - 1) - out[:, 1]
    return out


def weak_pipeline() -> AugmentationPipeline:
    """Teacher-side augmentation: horizontal flip only."""
    return AugmentationPipeline(kind="weak", ops=(FlipHorizontal(probability=0.5),))


def strong_labeled_pipeline() -> AugmentationPipeline:
    """Student-side augmentation for labeled samples: flips + photometric."""
    return AugmentationPipeline(
        kind="strong_labeled",
        ops=(
            FlipHorizontal(probability=0.5),
            FeatureNoise(sigma=0.1),
            ChannelScaleJitter(max_delta=0.2),
        ),
    )


def strong_unlabeled_pipeline() -> AugmentationPipeline:
    """Student-side augmentation for unlabeled samples.

    Slightly stronger than the labeled variant (adds blur) because pseudo
    labels are already noisy and the consistency target benefits from a
    wider perturbation envelope.
    """
    return AugmentationPipeline(
        kind="strong_unlabeled",
        ops=(
            FlipHorizontal(probability=0.5),
            FeatureNoise(sigma=0.15),
            ChannelScaleJitter(max_delta=0.2),
            BoxBlur(size=3, probability=0.25),
        ),
    )
