"""A small point-proposal recognizer over feature grids.

The model lays a fixed anchor grid over the (H, W) extent, cuts a square
zero-padded patch around every anchor, and runs each patch through a
one-hidden-layer MLP with two heads: a (C + 1)-way classifier (background
last) and a 2-d offset regressor.  A predicted point is its anchor center
plus the regressed offset.

Parameters live in one flat float64 vector whose layout is fixed by
:func:`param_layout`; the layout hash travels inside checkpoints so a
stale file cannot be silently reinterpreted.  The backward pass is
analytic (plain chain rule through the two linear layers and the tanh),
which keeps the whole training loop dependency-free and lets a finite
difference oracle check every gradient coordinate.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ContractError
from .losses import cls_loss, reg_loss, softmax


@dataclass(frozen=True)
class ModelArch:
    """Architecture hyperparameters; fully determines the param layout."""

    num_classes: int
    feature_dim: int
    patch_radius: int = 2
    hidden_dim: int = 16
    anchor_stride: int = 3

    def validate(self) -> None:
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.feature_dim < 1:
            raise ConfigError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.patch_radius < 0:
            raise ConfigError(f"patch_radius must be >= 0, got {self.patch_radius}")
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.anchor_stride < 1:
            raise ConfigError(f"anchor_stride must be >= 1, got {self.anchor_stride}")

    @property
    def patch_side(self) -> int:
        return 2 * self.patch_radius + 1

    @property
    def patch_values(self) -> int:
        return self.patch_side * self.patch_side * self.feature_dim

    @property
    def num_outputs(self) -> int:
        """Class head width: foreground classes plus background."""
        return self.num_classes + 1


@dataclass(frozen=True)
class ParamLayout:
    """Names, shapes, and flat-vector slices of every parameter block."""

    entries: tuple[tuple[str, tuple[int, ...]], ...]
    total: int
    layout_hash: str

    def slice_of(self, name: str) -> slice:
        offset = 0
        for entry_name, shape in self.entries:
            size = int(np.prod(shape))
            if entry_name == name:
                return slice(offset, offset + size)
            offset += size
        raise ContractError(f"no parameter block named {name!r}")

    def unpack(self, params: np.ndarray) -> dict[str, np.ndarray]:
        """Reshaped views into ``params``, one per block (no copies)."""
        if params.shape != (self.total,):
            raise ContractError(
                f"params shape {params.shape} does not match layout total {self.total}"
            )
        views = {}
        offset = 0
        for name, shape in self.entries:
            size = int(np.prod(shape))
            views[name] = params[offset : offset + size].reshape(shape)
            offset += size
        return views


@lru_cache(maxsize=32)
def param_layout(arch: ModelArch) -> ParamLayout:
    """Flat layout [w1, b1, w2, b2, w3, b3] for the given architecture."""
    arch.validate()
    entries = (
        ("w1", (arch.hidden_dim, arch.patch_values)),
        ("b1", (arch.hidden_dim,)),
        ("w2", (arch.num_outputs, arch.hidden_dim)),
        ("b2", (arch.num_outputs,)),
        ("w3", (2, arch.hidden_dim)),
        ("b3", (2,)),
    )
    total = sum(int(np.prod(shape)) for _, shape in entries)
    digest = hashlib.sha256(
        json.dumps([[name, list(shape)] for name, shape in entries]).encode()
    ).hexdigest()[:12]
    return ParamLayout(entries=entries, total=total, layout_hash=digest)


def init_params(arch: ModelArch, rng: np.random.Generator) -> np.ndarray:
    """Fan-in uniform weights, zero biases, as one flat float64 vector."""
    layout = param_layout(arch)
    params = np.zeros(layout.total, dtype=np.float64)
    views = layout.unpack(params)
    for name in ("w1", "w2", "w3"):
        weight = views[name]
        bound = 1.0 / np.sqrt(weight.shape[1])
        weight[...] = rng.uniform(-bound, bound, size=weight.shape)
    return params


def anchor_grid(arch: ModelArch, grid_height: int, grid_width: int) -> np.ndarray:
    """Integer anchor centers as an (A, 2) float64 array in x, y order.

    One anchor per stride cell, centered at c * stride + stride // 2 and
    clamped to the grid so edge anchors stay inside it.  Row-major order.
    """
    stride = arch.anchor_stride
    rows = np.arange((grid_height + stride - 1) // stride)
    cols = np.arange((grid_width + stride - 1) // stride)
    cy = np.minimum(rows * stride + stride // 2, grid_height - 1)
    cx = np.minimum(cols * stride + stride // 2, grid_width - 1)
    grid_x, grid_y = np.meshgrid(cx, cy)
    return np.stack([grid_x.ravel(), grid_y.ravel()], axis=1).astype(np.float64)


def _patch_matrix(arch: ModelArch, features: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Zero-padded square patches around each anchor, flattened row-major.

    Returns (A, patch_values) float64.  Flatten order is (row, col,
    channel), matching the w1 fan-in layout.
    """
    radius = arch.patch_radius
    padded = np.pad(
        features.astype(np.float64),
        ((radius, radius), (radius, radius), (0, 0)),
    )
    # windows[y, x] is the patch centered at unpadded (y, x), axes (D, side, side)
    windows = sliding_window_view(padded, (arch.patch_side, arch.patch_side), axis=(0, 1))
    ys = centers[:, 1].astype(np.intp)
    xs = centers[:, 0].astype(np.intp)
    patches = windows[ys, xs]
    return patches.transpose(0, 2, 3, 1).reshape(len(centers), arch.patch_values)


@dataclass
class RawPredictions:
    """Per-anchor model outputs for one feature grid."""

    anchor_centers: np.ndarray  # (A, 2) x, y
    logits: np.ndarray  # (A, C + 1), background last
    offsets: np.ndarray  # (A, 2)

    @property
    def points(self) -> np.ndarray:
        """Predicted locations: anchor center plus regressed offset."""
        return self.anchor_centers + self.offsets


@dataclass
class TrainTargets:
    """Per-anchor supervision produced by matching annotations to anchors."""

    class_targets: np.ndarray  # (A,) int64, background = num_classes
    offset_targets: np.ndarray  # (A, 2) float64
    reg_mask: np.ndarray  # (A,) bool, anchors with a matched point


@dataclass(frozen=True)
class PointPrediction:
    """One decoded detection in grid coordinates."""

    x: float
    y: float
    class_id: int
    score: float


def _check_features(arch: ModelArch, features: np.ndarray) -> None:
    if features.ndim != 3 or features.shape[2] != arch.feature_dim:
        raise ContractError(
            f"expected (H, W, {arch.feature_dim}) features, got shape {features.shape}"
        )


def forward(params: np.ndarray, arch: ModelArch, features: np.ndarray) -> RawPredictions:
    """Run the recognizer over every anchor of one feature grid."""
    _check_features(arch, features)
    layout = param_layout(arch)
    views = layout.unpack(params)
    centers = anchor_grid(arch, features.shape[0], features.shape[1])
    patches = _patch_matrix(arch, features, centers)
    hidden = np.tanh(patches @ views["w1"].T + views["b1"])
    logits = hidden @ views["w2"].T + views["b2"]
    offsets = hidden @ views["w3"].T + views["b3"]
    return RawPredictions(anchor_centers=centers, logits=logits, offsets=offsets)


def forward_backward(
    params: np.ndarray,
    arch: ModelArch,
    features: np.ndarray,
    targets: TrainTargets,
    *,
    cls_weight: float = 1.0,
    reg_weight: float = 0.0,
    include_regression: bool = True,
) -> tuple[float, float, np.ndarray]:
    """Loss terms and gradient of their weighted sum for one grid.

    Returns (cls_loss, reg_loss, grad) where grad differentiates
    cls_weight * cls + reg_weight * reg with respect to the flat params.
    With ``include_regression=False`` the regression term is skipped
    entirely: its loss reads 0 and the offset-head blocks of the gradient
    are exactly zero, which is how pseudo-labeled samples are kept from
    touching localization.
    """
    _check_features(arch, features)
    layout = param_layout(arch)
    views = layout.unpack(params)
    centers = anchor_grid(arch, features.shape[0], features.shape[1])
    patches = _patch_matrix(arch, features, centers)
    hidden = np.tanh(patches @ views["w1"].T + views["b1"])
    logits = hidden @ views["w2"].T + views["b2"]
    offsets = hidden @ views["w3"].T + views["b3"]

    cls_value, dlogits = cls_loss(logits, targets.class_targets)
    dlogits = cls_weight * dlogits
    if include_regression:
        # offset vs (point - anchor base) equals predicted point vs point
        reg_value, doffsets = reg_loss(offsets, targets.offset_targets, targets.reg_mask)
        doffsets = reg_weight * doffsets
    else:
        reg_value = 0.0
        doffsets = np.zeros_like(offsets)

    grad = np.zeros_like(params)
    grad_views = param_layout(arch).unpack(grad)
    grad_views["w2"][...] = dlogits.T @ hidden
    grad_views["b2"][...] = dlogits.sum(axis=0)
    grad_views["w3"][...] = doffsets.T @ hidden
    grad_views["b3"][...] = doffsets.sum(axis=0)
    dhidden = dlogits @ views["w2"] + doffsets @ views["w3"]
    dpre = dhidden * (1.0 - hidden**2)
    grad_views["w1"][...] = dpre.T @ patches
    grad_views["b1"][...] = dpre.sum(axis=0)
    return cls_value, reg_value, grad


@dataclass
class AdamState:
    """First and second moment accumulators plus the step counter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0


def optimizer_step(
    params: np.ndarray,
    grad: np.ndarray,
    state: AdamState | None,
    *,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam step with decoupled weight decay.

    Pure: returns fresh (params, state) without mutating the inputs.
    Pass ``state=None`` on the first call.
    """
    if state is None:
        state = AdamState(m=np.zeros_like(params), v=np.zeros_like(params), step=0)
    if grad.shape != params.shape:
        raise ContractError(f"grad shape {grad.shape} does not match params {params.shape}")
    step = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad**2
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    update = m_hat / (np.sqrt(v_hat) + eps)
    if weight_decay:
        update = update + weight_decay * params
    return params - lr * update, AdamState(m=m, v=v, step=step)


def decode(
    predictions: RawPredictions, num_classes: int, min_score: float
) -> list[PointPrediction]:
    """Argmax-decode anchors into points, keeping scores strictly above
    ``min_score``.

    Per anchor the candidate class is the highest-probability foreground
    class; its softmax probability is the score.  With ``min_score=0``
    every anchor emits its candidate, which is what pseudo-label
    thresholding wants as its raw pool.
    """
    probs = softmax(predictions.logits)
    fg = probs[:, :num_classes]
    classes = fg.argmax(axis=1)
    scores = fg[np.arange(len(fg)), classes]
    points = predictions.points
    out = []
    for idx in range(len(scores)):
        if scores[idx] > min_score:
            out.append(
                PointPrediction(
                    x=float(points[idx, 0]),
                    y=float(points[idx, 1]),
                    class_id=int(classes[idx]),
                    score=float(scores[idx]),
                )
            )
    return out
