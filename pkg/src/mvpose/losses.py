"""Multi-task training loss terms as plain functions of predictions and targets."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 12.0  # keypoints
    lambda2: float = 1.0  # semantic
    lambda3: float = 12.0  # center

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be non-negative")


def keypoint_l1_loss(pred, gt, mask) -> float:
    """Mean over masked points and keypoints of |dx| + |dy| + |dz|.

    ``pred``/``gt`` are (N, M, 3). Returns 0.0 with a RuntimeWarning when
    the mask is empty.
    """
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        warnings.warn("empty object mask; offset loss set to 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(np.abs(pred[mask] - gt[mask]).sum(axis=-1).mean())


def center_l1_loss(pred, gt, mask) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    return keypoint_l1_loss(pred[:, None, :], gt[:, None, :], mask)


def focal_semantic_loss(probs, labels, gamma: float = 2.0, alpha=1.0) -> float:
    """Mean of -alpha * (1 - p_gt)^gamma * log(p_gt); ``alpha`` may be per-class."""
    p = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if p.ndim != 2 or len(p) != len(labels):
        raise ValueError("probs must be (N, C) with one label per row")
    if (p < 0).any() or not np.allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-6):
        raise ValueError("class scores must be non-negative and sum to 1 per point")
    p_gt = np.maximum(p[np.arange(len(p)), labels], 1e-12)
    a = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (p.shape[1],))[labels]
    return float(np.mean(-a * (1.0 - p_gt) ** gamma * np.log(p_gt)))


def multi_task_loss(l_keypoints: float, l_semantic: float, l_center: float,
                    weights: LossWeights = LossWeights()) -> float:
    terms = (l_keypoints, l_semantic, l_center)
    if not all(np.isfinite(terms)):
        raise ValueError("loss terms must be finite")
    return weights.lambda1 * l_keypoints + weights.lambda2 * l_semantic + weights.lambda3 * l_center
