"""Reconstruction-error scoring and frame-level ROC / AUC / EER metrics.

Anomaly polarity: a frame is flagged anomalous when its reconstruction error
exceeds the threshold, so ROC curves sweep the raw errors directly (higher
score = more anomalous). The regularity score is the display transform
``1 - (err - min(err)) / max(err)``; a ``range_denominator`` switch divides
by ``max - min`` instead for the conventional scaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, InvalidInputError, ShapeError


def reconstruction_error(target: np.ndarray, recon: np.ndarray) -> float:
    """Euclidean distance between one frame vector and its reconstruction."""
    target = np.asarray(target, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if target.shape != recon.shape:
        raise ShapeError(f"frame shapes differ: {target.shape} vs {recon.shape}")
    return float(np.sqrt(np.sum((target - recon) ** 2)))


def reconstruction_errors(targets: np.ndarray, recons: np.ndarray) -> np.ndarray:
    """Per-step L2 errors for stacked cuboids (N, T, frame_dim) -> (N, T)."""
    targets = np.asarray(targets, dtype=np.float64)
    recons = np.asarray(recons, dtype=np.float64)
    if targets.shape != recons.shape:
        raise ShapeError(f"cuboid shapes differ: {targets.shape} vs {recons.shape}")
    return np.sqrt(np.sum((targets - recons) ** 2, axis=-1))


def regularity_score(rec_errs: np.ndarray, range_denominator: bool = False) -> np.ndarray:
    """Per-frame normality score within one video."""
    errs = np.asarray(rec_errs, dtype=np.float64)
    if errs.size == 0:
        raise InvalidInputError("empty error sequence")
    if np.any(errs < 0):
        raise InvalidInputError("reconstruction errors must be nonnegative")
    lo = errs.min()
    hi = errs.max()
    if hi <= 0.0:
        raise DegenerateDataError("all reconstruction errors are zero")
    denom = (hi - lo) if range_denominator else hi
    if denom <= 0.0:  # constant errors with range denominator
        return np.ones_like(errs)
    return 1.0 - (errs - lo) / denom


@dataclass
class RocCurve:
    """(threshold, FPR, TPR) triples sorted by FPR with (0,0) and (1,1) ends."""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray

    def points(self):
        return list(zip(self.thresholds, self.fpr, self.tpr))


def roc_points(scores: np.ndarray, labels: np.ndarray) -> RocCurve:
    """ROC over all distinct score thresholds; score >= threshold flags anomaly."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError("scores and labels must be equal-length 1-D arrays")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise InvalidInputError("labels must contain both classes")
    if n_pos + n_neg != labels.size:
        raise InvalidInputError("labels must be 0/1")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels == 1)
    fp = np.cumsum(sorted_labels == 0)
    # keep only the last index of each run of equal scores
    distinct = np.nonzero(np.diff(sorted_scores, append=-np.inf))[0]

    thresholds = np.concatenate([[np.inf], sorted_scores[distinct]])
    tpr = np.concatenate([[0.0], tp[distinct] / n_pos])
    fpr = np.concatenate([[0.0], fp[distinct] / n_neg])
    if fpr[-1] != 1.0 or tpr[-1] != 1.0:
        thresholds = np.append(thresholds, -np.inf)
        fpr = np.append(fpr, 1.0)
        tpr = np.append(tpr, 1.0)
    return RocCurve(thresholds, fpr, tpr)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under TPR over FPR."""
    return float(np.trapezoid(curve.tpr, curve.fpr))


def eer(curve: RocCurve) -> float:
    """FPR where the curve crosses TPR = 1 - FPR, by linear interpolation."""
    x = curve.fpr
    y = curve.tpr
    g = y + x - 1.0  # zero at the crossing
    for i in range(len(x) - 1):
        g0, g1 = g[i], g[i + 1]
        if g0 == 0.0:
            return float(x[i])
        if g0 < 0.0 <= g1:
            denom = g1 - g0
            t = 0.0 if denom == 0.0 else -g0 / denom
            return float(x[i] + t * (x[i + 1] - x[i]))
    return float(x[-1])


def auc_from_scores(scores, labels) -> float:
    return auc(roc_points(scores, labels))


def eer_from_scores(scores, labels) -> float:
    return eer(roc_points(scores, labels))
