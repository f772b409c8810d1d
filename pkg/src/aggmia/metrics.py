"""Attack and utility metrics.

AUC is computed with the rank-statistic form (midranks for ties) so it equals
the probability that a random in-sample outscores a random out-sample, with
ties counted 1/2. The ROC curve is a threshold sweep over distinct scores and
its trapezoidal integral agrees with the rank AUC. Privacy loss rescales the
AUC advantage over random guessing to [0, 1]; privacy gain is the normalized
AUC drop caused by a perturbation mechanism; MRE measures utility loss of the
perturbed aggregates with a small-count sanity bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "MetricError",
    "SingleClassError",
    "RocCurve",
    "GameReport",
    "roc_auc",
    "privacy_loss",
    "privacy_gain",
    "mre",
]


class MetricError(ValueError):
    pass


class SingleClassError(MetricError):
    pass


@dataclass(frozen=True)
class RocCurve:
    """Ordered (FPR, TPR) points, one per distinct threshold, plus the AUC."""

    points: np.ndarray
    auc: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise MetricError("points must be an (n, 2) array")
        if not (np.allclose(pts[0], [0.0, 0.0]) and np.allclose(pts[-1], [1.0, 1.0])):
            raise MetricError("curve must start at (0,0) and end at (1,1)")
        if (np.diff(pts[:, 0]) < -1e-12).any() or (np.diff(pts[:, 1]) < -1e-12).any():
            raise MetricError("FPR and TPR must be non-decreasing")
        if not (0.0 <= self.auc <= 1.0):
            raise MetricError("auc out of [0, 1]")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class GameReport:
    """Outcome of one played game for one target."""

    target: int
    tp: int
    tn: int
    fp: int
    fn: int
    roc: RocCurve
    auc: float
    pl: float

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise MetricError("negative confusion counts")
        if abs(self.pl - privacy_loss(self.auc)) > 1e-9:
            raise MetricError("pl inconsistent with auc")

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp

    def to_json(self) -> dict:
        return {
            "target": self.target,
            "tp": self.tp,
            "tn": self.tn,
            "fp": self.fp,
            "fn": self.fn,
            "auc": self.auc,
            "pl": self.pl,
            "roc": [[float(f), float(t)] for f, t in self.roc.points],
        }


def _midranks(scores: np.ndarray) -> np.ndarray:
    """Ranks 1..n with tied values sharing the average of their ranks."""
    uniq, inv, counts = np.unique(scores, return_inverse=True, return_counts=True)
    below = np.cumsum(counts) - counts
    mid = below + (counts + 1) / 2.0
    return mid[inv]


def roc_auc(scores, labels) -> RocCurve:
    """Rank-statistic AUC plus the threshold-sweep curve.

    labels use 1 for in (positive class), 0 for out.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError("scores and labels must be equal-length vectors")
    if not np.isfinite(scores).all():
        raise MetricError("non-finite scores")
    y = labels.astype(np.int64)
    if set(np.unique(y).tolist()) - {0, 1}:
        raise MetricError("labels must be 0/1")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("both classes required")
    ranks = _midranks(scores)
    auc = (ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    uniq, inv, counts = np.unique(scores, return_inverse=True, return_counts=True)
    pos_per = np.bincount(inv, weights=y.astype(np.float64), minlength=uniq.size)
    neg_per = counts - pos_per
    # sweep thresholds from the highest distinct score downwards
    tp = np.cumsum(pos_per[::-1])
    fp = np.cumsum(neg_per[::-1])
    pts = np.concatenate(
        [[[0.0, 0.0]], np.column_stack([fp / n_neg, tp / n_pos])]
    )
    return RocCurve(points=pts, auc=float(auc))


def privacy_loss(auc: float) -> float:
    """Normalized AUC advantage over random guessing."""
    if not (0.0 <= auc <= 1.0):
        raise MetricError(f"auc out of range: {auc}")
    if auc > 0.5:
        return (auc - 0.5) / 0.5
    return 0.0


def privacy_gain(auc_raw: float, auc_noisy: float) -> float:
    """Normalized AUC reduction caused by a perturbation mechanism."""
    for v in (auc_raw, auc_noisy):
        if not (0.0 <= v <= 1.0):
            raise MetricError(f"auc out of range: {v}")
    if auc_raw > auc_noisy >= 0.5:
        return (auc_raw - auc_noisy) / (auc_raw - 0.5)
    return 0.0


def _values(obj) -> np.ndarray:
    return np.asarray(getattr(obj, "values", obj), dtype=np.float64)


def mre(raw, noisy, gamma_scope: str = "per-roi") -> float:
    """Mean relative error between a raw and a perturbed aggregate.

    Per ROI row: mean over slots of |noisy - raw| / max(gamma, raw), with
    gamma = 0.001 * row sum (rows summing to zero use the 0.001 floor); the
    result is the unweighted mean over rows. gamma_scope="global" computes
    one gamma from the whole-matrix sum instead.
    """
    y = _values(raw)
    y2 = _values(noisy)
    if y.shape != y2.shape:
        raise MetricError(f"shape mismatch: {y.shape} vs {y2.shape}")
    if y.ndim == 1:
        y = y[None, :]
        y2 = y2[None, :]
    if gamma_scope == "per-roi":
        sums = y.sum(axis=1)
        gamma = np.where(sums > 0, 0.001 * sums, 0.001)
    elif gamma_scope == "global":
        total = y.sum()
        gamma = np.full(y.shape[0], 0.001 * total if total > 0 else 0.001)
    else:
        raise MetricError(f"unknown gamma_scope: {gamma_scope}")
    denom = np.maximum(gamma[:, None], y)
    per_row = (np.abs(y2 - y) / denom).mean(axis=1)
    return float(per_row.mean())
