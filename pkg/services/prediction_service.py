"""
Prediction Service

Per-segment inference for a whole track and aggregation of the 21 segment
probability vectors into one genre decision.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from services.network import Network
from services.segmentation_service import GENRES, AudioClip, segment_matrix

logger = logging.getLogger(__name__)

MAJORITY = "majority"
SUM = "sum"
RULES = (MAJORITY, SUM)


class AggregationError(ValueError):
    """Aggregation request cannot be satisfied"""
    pass


@dataclass
class PredictionRecord:
    track_id: str
    genre_label: Optional[int]
    probabilities: np.ndarray = field(repr=False)
    predictions: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "track_id": self.track_id,
            "genre_label": self.genre_label,
            "predictions": {rule: GENRES[c] for rule, c in self.predictions.items()},
            "prediction_indices": dict(self.predictions),
            "probabilities": self.probabilities.tolist(),
        }


def aggregate(record, rule: str) -> int:
    """
    Collapse segment probability vectors into one class index.

    ``sum``: argmax of the summed vectors. ``majority``: class with the most
    per-segment argmax votes; ties fall back to the sum rule over the tied classes.
    Accepts a PredictionRecord or an S x C array.
    """
    probs = record.probabilities if isinstance(record, PredictionRecord) else np.asarray(record)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise AggregationError(f"Aggregation needs at least one segment vector, got shape {probs.shape}")
    totals = probs.sum(axis=0)
    if rule == SUM:
        return int(np.argmax(totals))
    if rule == MAJORITY:
        votes = np.bincount(probs.argmax(axis=1), minlength=probs.shape[1])
        tied = np.flatnonzero(votes == votes.max())
        if tied.size == 1:
            return int(tied[0])
        return int(tied[np.argmax(totals[tied])])
    raise AggregationError(f"Unknown rule {rule!r}; expected one of {', '.join(RULES)}")


def predict_track(network: Network, clip: AudioClip) -> PredictionRecord:
    """21 inference-mode softmax vectors for the clip plus the decision under both rules."""
    probabilities = network.predict_proba(segment_matrix(clip))
    record = PredictionRecord(track_id=clip.track_id, genre_label=clip.genre_label, probabilities=probabilities)
    record.predictions = {rule: aggregate(record, rule) for rule in RULES}
    logger.debug(f"[PREDICT] {clip.track_id}: {record.predictions}")
    return record
