"""Loss functions with analytic gradients.

The recognizer trains on two terms: an anchor-wise cross entropy over
C + 1 classes (background last) and a squared-distance regression on the
anchor offsets of foreground-assigned anchors.  Gradients are derived in
closed form with respect to the logits and offsets so the model's
backward pass can chain them through its linear layers; a finite
difference check in the test suite pins them down.

The combined objective is

    total = labeled_cls + w_reg * labeled_reg + w_unlabeled * unlabeled_cls

where the unlabeled term is a cross entropy against pseudo labels and
carries no regression: pseudo-label coordinates are too noisy to
supervise localization, so unlabeled samples only teach the classifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights for the combined objective."""

    regression_weight: float = 2e-3
    unlabeled_cls_weight: float = 1.0


@dataclass(frozen=True)
class LossTerms:
    """Scalar loss values for one batch, pre-weighting."""

    labeled_cls: float
    labeled_reg: float
    unlabeled_cls: float

    def total(self, weights: LossWeights) -> float:
        return (
            self.labeled_cls
            + weights.regression_weight * self.labeled_reg
            + weights.unlabeled_cls_weight * self.unlabeled_cls
        )


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, shift-stabilized."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def cls_loss(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross entropy over anchors; returns (loss, dloss/dlogits).

    ``logits`` is (A, C + 1), ``targets`` is (A,) integer class indices
    with background as the last index.  The gradient of the mean is
    (softmax - onehot) / A per anchor.
    """
    if logits.ndim != 2:
        raise ContractError(f"expected (A, K) logits, got shape {logits.shape}")
    n_anchors, n_klasses = logits.shape
    if targets.shape != (n_anchors,):
        raise ContractError(
            f"targets shape {targets.shape} does not match {n_anchors} anchors"
        )
    if n_anchors == 0:
        return 0.0, np.zeros_like(logits)
    if targets.min() < 0 or targets.max() >= n_klasses:
        raise ContractError("target class index out of range")
    probs = softmax(logits)
    picked = probs[np.arange(n_anchors), targets]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    grad = probs.copy()
    grad[np.arange(n_anchors), targets] -= 1.0
    grad /= n_anchors
    return loss, grad


def reg_loss(
    offsets: np.ndarray, target_offsets: np.ndarray, mask: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean squared offset error over masked anchors; returns (loss, grad).

    ``offsets`` and ``target_offsets`` are (A, 2); ``mask`` is a boolean
    (A,) selecting foreground-assigned anchors.  Loss is the mean over
    selected anchors of the squared euclidean error |p - t|^2, zero when
    nothing is selected.  Gradient is 2 (p - t) / count on selected rows.
    """
    if offsets.shape != target_offsets.shape or offsets.ndim != 2 or offsets.shape[1] != 2:
        raise ContractError(
            f"offset shapes {offsets.shape} vs {target_offsets.shape} must both be (A, 2)"
        )
    if mask.shape != (offsets.shape[0],):
        raise ContractError(f"mask shape {mask.shape} does not match offsets")
    count = int(mask.sum())
    grad = np.zeros_like(offsets)
    if count == 0:
        return 0.0, grad
    delta = offsets[mask] - target_offsets[mask]
    loss = float((delta**2).sum(axis=1).mean())
    grad[mask] = 2.0 * delta / count
    return loss, grad
