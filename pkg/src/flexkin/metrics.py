"""Evaluation metrics.  Inputs are in meters, results in millimeters."""

from __future__ import annotations

import numpy as np


def _as_joints(x):
    """Accept (T, 3J) or (T, J, 3)."""
    x = np.asarray(x, float)
    if x.ndim == 2:
        return x.reshape(x.shape[0], -1, 3)
    return x


def mpjpe_p1(pred, gt, pelvis=0, scale=1000.0):
    """Mean per-joint position error after aligning the pelvis in each frame."""
    pred, gt = _as_joints(pred), _as_joints(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    pred = pred - pred[:, pelvis:pelvis + 1]
    gt = gt - gt[:, pelvis:pelvis + 1]
    return float(np.linalg.norm(pred - gt, axis=-1).mean() * scale)


def accel_error(pred, gt, scale=1000.0):
    """Mean norm of the second-difference mismatch between two trajectories."""
    pred, gt = _as_joints(pred), _as_joints(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if pred.shape[0] < 3:
        raise ValueError("accel_error needs at least 3 frames")

    def acc(x):
        return x[2:] - 2 * x[1:-1] + x[:-2]

    return float(np.linalg.norm(acc(pred) - acc(gt), axis=-1).mean() * scale)


def root_trajectory_error(pred_root, gt_root, scale=1000.0):
    """Best uniform scale for ``pred_root`` and the remaining mean error.

    Returns ``(s, err)`` with ``s = <pred, gt> / <pred, pred>``.
    """
    pred, gt = np.asarray(pred_root, float), np.asarray(gt_root, float)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    denom = float(np.sum(pred * pred))
    if denom == 0.0:
        raise ValueError("predicted root trajectory is identically zero")
    s = float(np.sum(pred * gt)) / denom
    return s, float(np.linalg.norm(s * pred - gt, axis=-1).mean() * scale)
