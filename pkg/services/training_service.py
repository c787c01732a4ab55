"""
Training Service

Mini-batch training with Adam under softmax cross-entropy, per-epoch validation
loss, and early stopping that restores the best-validation snapshot.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import log_stage_timing
from services.fold_service import ProtocolViolationError
from services.network import Network
from services.segmentation_service import (
    MIN_CLIP_LENGTH, SEGMENT_HOP, SEGMENT_LENGTH, SEGMENTS_PER_TRACK, AudioClip, TrackTooShortError, canonicalize,
)
from utils.optim import Adam, AdamConfig
from utils.tensor import INFERENCE, TRAINING, ComputationTape, Tensor, backward, cross_entropy_loss

logger = logging.getLogger(__name__)

DEFAULT_MAX_EPOCHS = 100
DEFAULT_BATCH_SIZE = 80
DEFAULT_PATIENCE = 10


class TrainingError(Exception):
    """Base exception for training failures"""
    pass


class NonFiniteLossError(TrainingError):
    def __init__(self, epoch: int, batch: int, step: int, learning_rate: float, loss: float):
        super().__init__(
            f"Non-finite loss {loss} at epoch {epoch}, batch {batch} "
            f"(optimizer step {step}, learning rate {learning_rate})"
        )
        self.epoch = epoch
        self.batch = batch
        self.step = step
        self.learning_rate = learning_rate
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    arch: str = "resnet1d"
    max_epochs: int = DEFAULT_MAX_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    early_stopping_patience: int = DEFAULT_PATIENCE
    augment: bool = False
    seed: int = 0
    adam: AdamConfig = AdamConfig()

    def __post_init__(self):
        if self.max_epochs < 1:
            raise TrainingError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise TrainingError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.early_stopping_patience < 1:
            raise TrainingError(f"patience must be >= 1, got {self.early_stopping_patience}")


class SegmentDataset:
    """
    Segments addressed by index arithmetic over whole clips.

    Segment i is clip i // segments_per_clip at offset (i % segments_per_clip) * hop;
    no segment is materialized until a batch asks for it.
    """

    def __init__(self, clips: np.ndarray, labels: Sequence[int], track_ids: Sequence[str],
                 origins: Optional[Sequence[str]] = None, segment_length: int = SEGMENT_LENGTH,
                 hop: int = SEGMENT_HOP, segments_per_clip: int = SEGMENTS_PER_TRACK,
                 expected_labels: Optional[Dict[str, int]] = None):
        clips = np.asarray(clips, dtype=np.float32)
        if clips.ndim != 2:
            raise TrainingError(f"Clip matrix must be 2D, got shape {clips.shape}")
        if not (clips.shape[0] == len(labels) == len(track_ids)):
            raise TrainingError("clips, labels and track_ids must have equal length")
        if clips.shape[0] and (segments_per_clip - 1) * hop + segment_length > clips.shape[1]:
            raise TrainingError(f"Clips of {clips.shape[1]} samples cannot hold {segments_per_clip} segments")
        self.clips = clips
        self.labels = np.asarray(labels, dtype=np.int64)
        self.track_ids = list(track_ids)
        self.origins = list(origins) if origins is not None else list(track_ids)
        self.segment_length = segment_length
        self.hop = hop
        self.segments_per_clip = segments_per_clip
        self.expected_labels = expected_labels

    @classmethod
    def from_clips(cls, clips: Sequence[AudioClip], expected_labels: Optional[Dict[str, int]] = None):
        for clip in clips:
            if clip.duration_samples < MIN_CLIP_LENGTH:
                raise TrackTooShortError(clip.track_id, clip.duration_samples)
        matrix = np.stack([canonicalize(c.samples) for c in clips]) if clips else np.zeros((0, SEGMENT_LENGTH))
        return cls(matrix, [c.genre_label for c in clips], [c.track_id for c in clips],
                   [c.origin for c in clips], expected_labels=expected_labels)

    @classmethod
    def from_arrays(cls, segments: np.ndarray, labels: Sequence[int], track_ids: Optional[Sequence[str]] = None):
        """One segment per row; used for short custom inputs."""
        segments = np.asarray(segments)
        if track_ids is None:
            track_ids = [f"segment.{i:05d}" for i in range(segments.shape[0])]
        return cls(segments, labels, track_ids, segment_length=segments.shape[1], hop=0, segments_per_clip=1)

    def __len__(self) -> int:
        return self.clips.shape[0] * self.segments_per_clip

    def locate(self, index: int) -> Tuple[int, int]:
        clip, k = divmod(int(index), self.segments_per_clip)
        return clip, k * self.hop

    def batch(self, indices: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        """Stack the requested segments; verifies each segment's label against its origin's label."""
        rows = []
        labels = []
        for index in indices:
            clip, start = self.locate(index)
            label = int(self.labels[clip])
            if self.expected_labels is not None:
                expected = self.expected_labels.get(self.origins[clip])
                if expected != label:
                    raise ProtocolViolationError(
                        f"Segment of {self.track_ids[clip]} carries label {label}, "
                        f"origin {self.origins[clip]} has {expected}"
                    )
            rows.append(self.clips[clip, start:start + self.segment_length])
            labels.append(label)
        if not rows:
            return np.zeros((0, self.segment_length), dtype=np.float32), np.zeros(0, dtype=np.int64)
        return np.stack(rows), np.asarray(labels, dtype=np.int64)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: Optional[float]
    patience_counter: int


@dataclass
class TrainResult:
    network: Network
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: Optional[float] = None

    @property
    def epochs_run(self) -> int:
        return len(self.history)


def batch_slices(count: int, batch_size: int) -> List[Tuple[int, int]]:
    """Contiguous [start, stop) ranges; a trailing single-item batch joins the previous one."""
    slices = [(start, min(start + batch_size, count)) for start in range(0, count, batch_size)]
    if len(slices) > 1 and slices[-1][1] - slices[-1][0] == 1:
        last = slices.pop()
        slices[-1] = (slices[-1][0], last[1])
    return slices


def validation_loss(network: Network, dataset: SegmentDataset, batch_size: int = DEFAULT_BATCH_SIZE) -> float:
    """Mean segment-level cross-entropy in inference mode."""
    if len(dataset) == 0:
        raise TrainingError("Validation set is empty")
    total = 0.0
    for start, stop in batch_slices(len(dataset), batch_size):
        x, y = dataset.batch(range(start, stop))
        logits = network.forward(x, mode=INFERENCE)
        total += cross_entropy_loss(logits, y).item() * (stop - start)
    return total / len(dataset)


def segment_accuracy(network: Network, dataset: SegmentDataset, batch_size: int = DEFAULT_BATCH_SIZE) -> float:
    if len(dataset) == 0:
        return 0.0
    correct = 0
    for start, stop in batch_slices(len(dataset), batch_size):
        x, y = dataset.batch(range(start, stop))
        correct += int((network.predict_proba(x, batch_size=stop - start).argmax(axis=1) == y).sum())
    return correct / len(dataset)


def train(network: Network, train_set: SegmentDataset, val_set: Optional[SegmentDataset],
          config: TrainConfig, label: str = "") -> TrainResult:
    """
    Train ``network`` in place and return it restored to its best validation epoch.

    Batches are drawn from a seeded per-epoch shuffle over all training segments.
    Without a validation set every epoch runs and the final weights are kept.
    """
    if len(train_set) == 0:
        raise TrainingError("Training set is empty")
    start_time = time.time()
    rng = np.random.default_rng(config.seed)
    dropout_rng = np.random.default_rng([config.seed, 1])
    optimizer = Adam(network.parameters(), config.adam)
    result = TrainResult(network=network)
    best_state = None
    best_loss = np.inf
    wait = 0
    has_validation = val_set is not None and len(val_set) > 0
    tag = f"[TRAIN]{' ' + label if label else ''}"

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_set))
        loss_sum, correct = 0.0, 0
        for batch_index, (start, stop) in enumerate(batch_slices(len(order), config.batch_size)):
            x, y = train_set.batch(order[start:stop])
            optimizer.zero_grad()
            with ComputationTape() as tape:
                logits = network.forward(Tensor(x), mode=TRAINING, rng=dropout_rng)
                loss = cross_entropy_loss(logits, y)
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteLossError(epoch, batch_index, optimizer.step_count, optimizer.learning_rate, value)
            backward(tape, loss)
            optimizer.step()
            loss_sum += value * (stop - start)
            correct += int((logits.data.argmax(axis=1) == y).sum())

        train_loss = loss_sum / len(order)
        train_acc = correct / len(order)
        val_loss = validation_loss(network, val_set, config.batch_size) if has_validation else None

        if val_loss is not None and val_loss < best_loss:
            best_loss, best_state, wait = val_loss, network.state_dict(), 0
            result.best_epoch = epoch
        elif val_loss is not None:
            wait += 1
        else:
            result.best_epoch = epoch

        result.history.append(EpochRecord(epoch, train_loss, train_acc, val_loss, wait))
        logger.info(
            f"{tag} epoch {epoch}/{config.max_epochs} loss={train_loss:.4f} acc={train_acc:.4f} "
            f"val_loss={'n/a' if val_loss is None else f'{val_loss:.4f}'} patience={wait}/{config.early_stopping_patience}"
        )
        if has_validation and wait >= config.early_stopping_patience:
            logger.info(f"{tag} Early stopping at epoch {epoch}; best epoch {result.best_epoch}")
            break

    if best_state is not None:
        network.load_state_dict(best_state)
        result.best_val_loss = float(best_loss)
    log_stage_timing(f"train {label}".strip(), start_time)
    return result
