"""
Speaker embeddings and cosine scoring for verification trials.
"""
import math
from typing import Sequence, Tuple

import numpy as np

from shared.errors import ScoreError
from metrics.verification import ScoredTrials


def speaker_embedding(model, utterance) -> np.ndarray:
    """L2-normalized pre-head representation (d for ast_like, 2d for w2v2_like)."""
    representation = model.represent(utterance).data.reshape(-1).astype(np.float64)
    norm = math.sqrt(math.fsum(representation * representation))
    if norm == 0.0:
        raise ScoreError("utterance produced a zero representation")
    return representation / norm


def cosine_score(a, b) -> float:
    """
    dot(a, b) / (|a| |b|), clipped to [-1, 1].

    Sums are exactly rounded, so the score is symmetric in its arguments.

    Raises:
        ScoreError: a vector is zero or the lengths differ
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ScoreError(f"cannot score vectors of lengths {a.size} and {b.size}")
    norm_a = math.sqrt(math.fsum(a * a))
    norm_b = math.sqrt(math.fsum(b * b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ScoreError("cosine score of a zero vector is undefined")
    score = math.fsum(a * b) / (norm_a * norm_b)
    return min(1.0, max(-1.0, score))


def score_trials(embeddings: Sequence[np.ndarray], trials: Sequence[Tuple[int, int, bool]]) -> ScoredTrials:
    """Cosine-score (enrollment, test, same_speaker) index pairs."""
    return ScoredTrials.from_pairs(
        (cosine_score(embeddings[i], embeddings[j]), same) for i, j, same in trials
    )
