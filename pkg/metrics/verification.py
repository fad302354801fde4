"""
Equal error rate of scored verification trials.
"""
from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np

from shared.errors import TrialCompositionError


@dataclass(frozen=True)
class ScoredTrials:
    """Verification scores with same-speaker (target) flags."""
    scores: np.ndarray
    targets: np.ndarray

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[float, bool]]) -> "ScoredTrials":
        pairs = list(pairs)
        scores = np.array([float(s) for s, _ in pairs], dtype=np.float64)
        targets = np.array([bool(t) for _, t in pairs], dtype=bool)
        return cls(scores=scores, targets=targets)

    def __len__(self) -> int:
        return int(self.scores.size)


def error_curve(trials: ScoredTrials) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    FAR and FRR at every unique score used as threshold, plus (0, 1) at +inf.

    FAR(t) = fraction of non-targets scoring >= t
    FRR(t) = fraction of targets scoring < t
    """
    scores = np.asarray(trials.scores, dtype=np.float64)
    targets = np.asarray(trials.targets, dtype=bool)
    target_scores = np.sort(scores[targets])
    nontarget_scores = np.sort(scores[~targets])
    if target_scores.size == 0 or nontarget_scores.size == 0:
        raise TrialCompositionError(
            f"EER needs target and non-target trials, got {target_scores.size} and {nontarget_scores.size}"
        )
    thresholds = np.unique(scores)
    accepted_nontargets = nontarget_scores.size - np.searchsorted(nontarget_scores, thresholds, side="left")
    rejected_targets = np.searchsorted(target_scores, thresholds, side="left")
    far = np.append(accepted_nontargets / nontarget_scores.size, 0.0)
    frr = np.append(rejected_targets / target_scores.size, 1.0)
    return np.append(thresholds, np.inf), far, frr


def equal_error_rate(trials: ScoredTrials) -> float:
    """
    Error rate where FAR and FRR cross.

    When no threshold makes them equal, the crossing is interpolated linearly
    between the two adjacent curve points; the formula is symmetric in
    (FAR, FRR), so negating scores and flipping target flags gives the same
    value.
    """
    _, far, frr = error_curve(trials)
    for j in range(far.size):
        x1, y1 = float(far[j]), float(frr[j])
        if x1 == y1:
            return x1
        x2, y2 = float(far[j + 1]), float(frr[j + 1])
        if x1 > y1 and x2 < y2:
            return (x2 * y1 - x1 * y2) / ((x2 - x1) - (y2 - y1))
    raise TrialCompositionError("error curve never crosses")
