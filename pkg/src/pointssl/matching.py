"""One-to-one assignment: the solver and its two users.

The solver is a shortest-augmenting-path Hungarian method, written here
rather than borrowed so that tie handling is pinned down: scans run in
fixed index order and improvements require strictly smaller cost, so
equal-cost assignments resolve to the lowest-index pair every time, on
every platform.  A brute-force permutation oracle in the test suite
checks optimality.

Two call sites share it.  :func:`build_train_targets` assigns ground
truth points to anchors during training (cost mixes distance with how
little the anchor already believes the right class).  :func:`eval_match`
pairs predictions with ground truth during scoring, where pairs beyond
the distance threshold are forbidden via a large finite sentinel: any
assignment picking up a sentinel loses to any assignment with one more
feasible pair, so the matching has maximum cardinality first and minimum
total distance second.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import PointAnnotation
from .errors import ContractError
from .losses import softmax
from .model import RawPredictions, TrainTargets

FORBIDDEN_COST = 1e9


@dataclass(frozen=True)
class Assignment:
    """Optimal one-to-one pairing for a cost matrix.

    ``pairs`` holds (row, col) with every row of the smaller dimension
    assigned, sorted by row.  ``total_cost`` is their summed cost.
    """

    pairs: tuple[tuple[int, int], ...]
    total_cost: float


def hungarian(cost: np.ndarray) -> Assignment:
    """Minimum-cost one-to-one assignment of rows to columns.

    Accepts any (n, m) matrix of finite costs; all min(n, m) rows or
    columns of the smaller side get assigned.  O(n^2 m) time.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ContractError(f"cost must be 2-d, got shape {cost.shape}")
    if cost.size and not np.all(np.isfinite(cost)):
        raise ContractError("cost matrix must be finite; use a large sentinel instead")
    if cost.shape[0] == 0 or cost.shape[1] == 0:
        return Assignment(pairs=(), total_cost=0.0)

    transposed = cost.shape[0] > cost.shape[1]
    if transposed:
        cost = cost.T
    n_rows, n_cols = cost.shape

    # Potentials u, v and col_match[j] = assigned row, all 1-indexed with
    # 0 as the virtual unmatched slot.
    u = np.zeros(n_rows + 1)
    v = np.zeros(n_cols + 1)
    col_match = np.zeros(n_cols + 1, dtype=np.intp)
    path = np.zeros(n_cols + 1, dtype=np.intp)

    for row in range(1, n_rows + 1):
        col_match[0] = row
        j0 = 0
        min_cost = np.full(n_cols + 1, np.inf)
        used = np.zeros(n_cols + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_match[j0]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            improve = ~used[1:] & (reduced < min_cost[1:])
            idx = np.flatnonzero(improve) + 1
            min_cost[idx] = reduced[idx - 1]
            path[idx] = j0
            # argmin takes the first minimum, so cost ties resolve to the
            # lowest column index on every platform
            open_cost = np.where(used[1:], np.inf, min_cost[1:])
            j1 = int(np.argmin(open_cost)) + 1
            delta = open_cost[j1 - 1]
            used_idx = np.flatnonzero(used)
            u[col_match[used_idx]] += delta
            v[used_idx] -= delta
            min_cost[~used] -= delta
            j0 = j1
            if col_match[j0] == 0:
                break
        while j0:
            j1 = path[j0]
            col_match[j0] = col_match[j1]
            j0 = j1

    pairs = []
    for j in range(1, n_cols + 1):
        if col_match[j]:
            pairs.append((int(col_match[j] - 1), j - 1))
    if transposed:
        pairs = [(col, row) for row, col in pairs]
    pairs.sort()
    total = float(sum(cost[c, r] if transposed else cost[r, c] for r, c in pairs))
    return Assignment(pairs=tuple(pairs), total_cost=total)


def build_train_targets(
    predictions: RawPredictions,
    annotations: Sequence[PointAnnotation],
    num_classes: int,
    cls_cost_weight: float = 1.0,
) -> TrainTargets:
    """Assign annotated points to anchors and emit per-anchor targets.

    The assignment cost between annotation g and anchor a is the
    euclidean distance from the anchor's current predicted point to g
    plus ``cls_cost_weight`` times (1 - p_a(class_g)), so anchors that
    are both near a point and already leaning toward its class win the
    match.  Matched anchors get the annotation's class and the offset
    from anchor center to the annotated location; every other anchor gets
    background.  The match itself is not differentiated; callers treat
    the returned targets as constants.

    More annotations than anchors means the grid cannot supervise them
    all, which is a configuration error, not a condition to silently
    absorb.
    """
    n_anchors = len(predictions.anchor_centers)
    if len(annotations) > n_anchors:
        raise ContractError(
            f"{len(annotations)} annotated points but only {n_anchors} anchors; "
            "increase grid resolution or reduce anchor stride"
        )
    class_targets = np.full(n_anchors, num_classes, dtype=np.int64)
    offset_targets = np.zeros((n_anchors, 2), dtype=np.float64)
    reg_mask = np.zeros(n_anchors, dtype=bool)
    if annotations:
        for ann in annotations:
            if not 0 <= ann.class_id < num_classes:
                raise ContractError(
                    f"annotation class {ann.class_id} out of range for {num_classes} classes"
                )
        gt = np.array([[ann.x, ann.y] for ann in annotations], dtype=np.float64)
        gt_classes = np.array([ann.class_id for ann in annotations], dtype=np.int64)
        points = predictions.points
        probs = softmax(predictions.logits)
        dists = np.sqrt(((gt[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
        miss = 1.0 - probs[:, gt_classes].T  # (G, A)
        assignment = hungarian(dists + cls_cost_weight * miss)
        for g, a in assignment.pairs:
            class_targets[a] = gt_classes[g]
            offset_targets[a] = gt[g] - predictions.anchor_centers[a]
            reg_mask[a] = True
    return TrainTargets(
        class_targets=class_targets, offset_targets=offset_targets, reg_mask=reg_mask
    )


@dataclass(frozen=True)
class MatchResult:
    """Feasible prediction-to-truth pairs under a distance threshold."""

    pairs: tuple[tuple[int, int], ...]
    num_pred: int
    num_gt: int


def eval_match(
    pred_points: np.ndarray,
    pred_classes: np.ndarray,
    gt_points: np.ndarray,
    gt_classes: np.ndarray,
    *,
    distance_threshold: float,
    class_aware: bool,
) -> MatchResult:
    """Match predictions to ground truth for scoring.

    A pair is feasible when its euclidean distance is at most
    ``distance_threshold`` (boundary inclusive) and, if ``class_aware``,
    the classes agree.  Infeasible pairs cost ``FORBIDDEN_COST``; the
    sentinel dwarfs any achievable sum of feasible distances, so the
    optimal assignment takes as many feasible pairs as possible and the
    result drops whatever sentinel pairs remain.
    """
    pred_points = np.asarray(pred_points, dtype=np.float64).reshape(-1, 2)
    gt_points = np.asarray(gt_points, dtype=np.float64).reshape(-1, 2)
    pred_classes = np.asarray(pred_classes, dtype=np.int64).reshape(-1)
    gt_classes = np.asarray(gt_classes, dtype=np.int64).reshape(-1)
    if len(pred_points) != len(pred_classes) or len(gt_points) != len(gt_classes):
        raise ContractError("points and classes must pair up")
    n_pred, n_gt = len(pred_points), len(gt_points)
    if n_pred == 0 or n_gt == 0:
        return MatchResult(pairs=(), num_pred=n_pred, num_gt=n_gt)
    dists = np.sqrt(((pred_points[:, None, :] - gt_points[None, :, :]) ** 2).sum(axis=2))
    feasible = dists <= distance_threshold
    if class_aware:
        feasible &= pred_classes[:, None] == gt_classes[None, :]
    cost = np.where(feasible, dists, FORBIDDEN_COST)
    assignment = hungarian(cost)
    pairs = tuple((p, g) for p, g in assignment.pairs if feasible[p, g])
    return MatchResult(pairs=pairs, num_pred=n_pred, num_gt=n_gt)
