"""
Evaluation Service

Runs the three-round rotated protocol: train on one fold (plus its augmentations),
early-stop on the next, and test on the last with segment-level and track-level
(majority and sum rule) accuracy. Also summarizes rounds into mean +/- std and
exports metrics as JSON and CSV.
"""

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from errors import RoundStatus, log_stage_timing
from services.fold_service import FoldPlan, check_assignment
from services.model_zoo import ArchitectureSpec, build_architecture
from services.network import Network
from services.prediction_service import MAJORITY, RULES, SUM, predict_track
from services.segmentation_service import ORIGINAL, AudioClip, ingest
from services.training_service import SegmentDataset, TrainConfig, TrainResult, train
from utils.atomic_io import write_text_atomic

logger = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "architecture", "augmentation", "round", "segment_acc",
    "track_acc_majority", "track_acc_sum", "epochs", "best_epoch",
)
SUMMARY_METRICS = ("segment_acc", "track_acc_majority", "track_acc_sum")

# Published three-round results: (segment mean, segment std, rule, aggregated mean, aggregated std).
REFERENCE_RESULTS = {
    False: {
        "sample_cnn": (69.28, 0.76, MAJORITY, 75.99, 0.56),
        "pons_scale": (63.41, 0.76, MAJORITY, 70.51, 1.36),
        "dieleman": (45.52, 1.92, MAJORITY, 48.50, 1.62),
        "abdoli_esc": (14.09, 3.56, MAJORITY, 14.96, 3.77),
        "koerich": (63.19, 1.79, SUM, 69.12, 2.12),
        "resnet1d": (72.88, 1.75, SUM, 76.02, 1.60),
    },
    True: {
        "sample_cnn": (71.23, 1.03, SUM, 79.32, 1.83),
        "pons_scale": (66.31, 1.35, MAJORITY, 74.32, 1.64),
        "dieleman": (45.20, 2.22, SUM, 53.62, 2.40),
        "abdoli_esc": (15.00, 3.86, MAJORITY, 15.59, 4.17),
        "koerich": (64.90, 1.73, SUM, 73.02, 1.10),
        "resnet1d": (74.62, 1.91, SUM, 80.93, 2.35),
    },
}


class EvaluationError(Exception):
    """A round failed; completed rounds are kept on ``partial``"""

    def __init__(self, message: str, partial: Sequence["RoundResult"] = (), cause: Exception = None):
        super().__init__(message)
        self.partial = list(partial)
        self.cause = cause


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------

@dataclass
class CorpusEntry:
    track_id: str
    genre_label: int
    origin: str
    transform: str = ORIGINAL
    path: Optional[str] = None
    parameter: Optional[float] = None
    clip: Optional[AudioClip] = field(default=None, repr=False)


class CorpusIndex:
    """Original and augmented clips joined by their origin track."""

    def __init__(self, entries: Iterable[CorpusEntry]):
        self.entries: Dict[str, CorpusEntry] = {}
        self._by_origin: Dict[str, List[str]] = {}
        for entry in entries:
            if entry.track_id in self.entries:
                raise EvaluationError(f"Duplicate track id {entry.track_id} in corpus")
            self.entries[entry.track_id] = entry
            if entry.transform != ORIGINAL:
                self._by_origin.setdefault(entry.origin, []).append(entry.track_id)

    @classmethod
    def from_clips(cls, clips: Iterable[AudioClip]) -> "CorpusIndex":
        return cls(
            CorpusEntry(c.track_id, c.genre_label, c.origin, c.transform, parameter=c.parameter, clip=c)
            for c in clips
        )

    def originals(self) -> List[CorpusEntry]:
        return [e for e in self.entries.values() if e.transform == ORIGINAL]

    def labels(self) -> Dict[str, int]:
        return {e.track_id: e.genre_label for e in self.originals()}

    def augmented_for(self, origin: str) -> List[CorpusEntry]:
        return [self.entries[t] for t in self._by_origin.get(origin, [])]

    def load(self, entry: CorpusEntry) -> AudioClip:
        if entry.clip is not None:
            return entry.clip
        clip = ingest(entry.path, genre_label=entry.genre_label, track_id=entry.track_id)
        clip.origin, clip.transform, clip.parameter = entry.origin, entry.transform, entry.parameter
        return clip

    def clips_for(self, origins: Sequence[str], include_augmented: bool = False) -> List[AudioClip]:
        clips = []
        for origin in origins:
            clips.append(self.load(self.entries[origin]))
            if include_augmented:
                clips.extend(self.load(e) for e in self.augmented_for(origin))
        return clips


# ---------------------------------------------------------------------------
# Rounds
# ---------------------------------------------------------------------------

@dataclass
class RoundResult:
    round_index: int
    architecture: str
    augmentation: bool
    segment_accuracy: float
    track_accuracy: Dict[str, float]
    epochs: int
    best_epoch: int
    test_tracks: int
    status: str = RoundStatus.COMPLETED
    predictions: Dict[str, Dict[str, int]] = field(default_factory=dict)

    def to_row(self) -> dict:
        return {
            "architecture": self.architecture,
            "augmentation": self.augmentation,
            "round": self.round_index,
            "segment_acc": self.segment_accuracy,
            "track_acc_majority": self.track_accuracy[MAJORITY],
            "track_acc_sum": self.track_accuracy[SUM],
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
        }


def _resolve(arch: Union[str, ArchitectureSpec]) -> ArchitectureSpec:
    return build_architecture(arch) if isinstance(arch, str) else arch


def round_seed(seed: int, round_index: int) -> int:
    return seed * 1000 + round_index


def score_test_fold(network: Network, clips: Sequence[AudioClip]):
    """Segment accuracy, per-rule track accuracy and per-track decisions for a test fold."""
    correct_segments = total_segments = 0
    track_hits = {rule: 0 for rule in RULES}
    predictions = {}
    for clip in clips:
        record = predict_track(network, clip)
        argmax = record.probabilities.argmax(axis=1)
        correct_segments += int((argmax == clip.genre_label).sum())
        total_segments += argmax.shape[0]
        for rule in RULES:
            track_hits[rule] += int(record.predictions[rule] == clip.genre_label)
        predictions[clip.track_id] = dict(record.predictions)
    n = max(len(clips), 1)
    segment_acc = correct_segments / total_segments if total_segments else 0.0
    return segment_acc, {rule: hits / n for rule, hits in track_hits.items()}, predictions


def evaluate_network(network: Network, plan: FoldPlan, round_index: int, corpus: CorpusIndex,
                     augmentation: bool, epochs: int, best_epoch: int,
                     test_clips: Optional[Sequence[AudioClip]] = None) -> RoundResult:
    """Score a trained network on the round's test fold."""
    label = f"{network.spec.name} round {round_index}"
    if test_clips is None:
        test_fold = plan.tracks_in(plan.roles(round_index).test)
        test_clips = corpus.clips_for(test_fold)
        check_assignment(plan, round_index, "test", (c.origin for c in test_clips))
    logger.info(f"[EVAL] {label}: {RoundStatus.PREDICTING} {len(test_clips)} test tracks")
    segment_acc, track_acc, predictions = score_test_fold(network, test_clips)
    logger.info(f"[EVAL] {label}: {RoundStatus.COMPLETED} segment={segment_acc:.4f} "
                f"majority={track_acc[MAJORITY]:.4f} sum={track_acc[SUM]:.4f}")
    return RoundResult(
        round_index=round_index,
        architecture=network.spec.name,
        augmentation=augmentation,
        segment_accuracy=segment_acc,
        track_accuracy=track_acc,
        epochs=epochs,
        best_epoch=best_epoch,
        test_tracks=len(test_clips),
        predictions=predictions,
    )


def run_round(arch: Union[str, ArchitectureSpec], plan: FoldPlan, round_index: int,
              corpus: CorpusIndex, config: TrainConfig):
    """
    Train, early-stop and test one rotation. Returns (RoundResult, TrainResult).

    Only the training fold draws augmented clips; validation and test stay original.
    """
    spec = _resolve(arch)
    roles = plan.roles(round_index)
    label = f"{spec.name} round {round_index}"
    start_time = time.time()
    logger.info(f"[EVAL] {label}: {RoundStatus.LOADING} (train fold {roles.train}, "
                f"validation {roles.validation}, test {roles.test})")

    labels = corpus.labels()
    train_clips = corpus.clips_for(plan.tracks_in(roles.train), include_augmented=config.augment)
    val_clips = corpus.clips_for(plan.tracks_in(roles.validation))
    test_clips = corpus.clips_for(plan.tracks_in(roles.test))
    check_assignment(plan, round_index, "train", (c.origin for c in train_clips))
    check_assignment(plan, round_index, "validation", (c.origin for c in val_clips))
    check_assignment(plan, round_index, "test", (c.origin for c in test_clips))

    train_set = SegmentDataset.from_clips(train_clips, expected_labels=labels)
    val_set = SegmentDataset.from_clips(val_clips, expected_labels=labels)
    logger.info(f"[EVAL] {label}: {RoundStatus.TRAINING} on {len(train_set)} segments "
                f"({len(train_clips)} clips), validating on {len(val_set)}")

    network = Network(spec, seed=round_seed(config.seed, round_index))
    round_config = TrainConfig(
        arch=spec.name, max_epochs=config.max_epochs, batch_size=config.batch_size,
        early_stopping_patience=config.early_stopping_patience, augment=config.augment,
        seed=round_seed(config.seed, round_index), adam=config.adam,
    )
    trained = train(network, train_set, val_set, round_config, label=label)

    result = evaluate_network(network, plan, round_index, corpus, config.augment,
                              trained.epochs_run, trained.best_epoch, test_clips)
    log_stage_timing(label, start_time)
    return result, trained


# ---------------------------------------------------------------------------
# Protocol
# ---------------------------------------------------------------------------

def summarize(results: Sequence[RoundResult]) -> Dict[str, Dict[str, float]]:
    """Mean and sample standard deviation per metric; std is 0.0 with fewer than two rounds."""
    summary = {}
    for metric in SUMMARY_METRICS:
        values = np.array([r.to_row()[metric] for r in results], dtype=np.float64)
        mean = float(values.mean()) if values.size else 0.0
        std = float(values.std(ddof=1)) if values.size >= 2 else 0.0
        summary[metric] = {"mean": mean, "std": std}
    return summary


def headline_rule(summary: Dict[str, Dict[str, float]]) -> str:
    """
    The rule with the higher mean track accuracy, sum on ties.

    Published comparison rules stay in the report's ``reference`` block and never pick the headline.
    """
    if summary["track_acc_majority"]["mean"] > summary["track_acc_sum"]["mean"]:
        return MAJORITY
    return SUM


@dataclass
class EvaluationReport:
    architecture: str
    augmentation: bool
    rounds: List[RoundResult]
    summary: Dict[str, Dict[str, float]]
    headline_rule: str

    @property
    def headline(self) -> Dict[str, float]:
        return self.summary[f"track_acc_{self.headline_rule}"]

    def to_dict(self) -> dict:
        reference = REFERENCE_RESULTS[bool(self.augmentation)].get(self.architecture)
        return {
            "architecture": self.architecture,
            "augmentation": self.augmentation,
            "rounds": [asdict(r) for r in self.rounds],
            "summary": self.summary,
            "headline_rule": self.headline_rule,
            "headline": self.headline,
            "reference": None if reference is None else {
                "segment_acc": {"mean": reference[0] / 100, "std": reference[1] / 100},
                "rule": reference[2],
                "track_acc": {"mean": reference[3] / 100, "std": reference[4] / 100},
            },
        }


def evaluate(arch: Union[str, ArchitectureSpec], plan: FoldPlan, corpus: CorpusIndex, config: TrainConfig,
             rounds: Sequence[int] = (1, 2, 3),
             on_round_complete: Optional[Callable[[RoundResult, TrainResult], None]] = None) -> EvaluationReport:
    """
    Run each requested round and summarize.

    A failing round raises EvaluationError carrying the rounds that completed.
    """
    spec = _resolve(arch)
    start_time = time.time()
    results: List[RoundResult] = []
    for round_index in rounds:
        try:
            result, trained = run_round(spec, plan, round_index, corpus, config)
        except Exception as e:
            logger.error(f"[EVAL] {spec.name} round {round_index}: {RoundStatus.FAILED}: {e}")
            raise EvaluationError(f"Round {round_index} failed: {e}", results, e) from e
        results.append(result)
        if on_round_complete is not None:
            on_round_complete(result, trained)
    log_stage_timing(f"evaluate {spec.name}", start_time)
    return build_report(spec.name, config.augment, results)


def build_report(architecture: str, augmentation: bool, results: Sequence[RoundResult]) -> EvaluationReport:
    results = sorted(results, key=lambda r: r.round_index)
    summary = summarize(results)
    return EvaluationReport(architecture, augmentation, list(results), summary,
                            headline_rule(summary))


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def metrics_csv(results: Sequence[RoundResult]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=METRIC_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for result in results:
        writer.writerow(result.to_row())
    return buffer.getvalue()


def write_metrics(report: EvaluationReport, out_dir, stem: str = "metrics") -> Dict[str, Path]:
    """Write ``<stem>.json`` (rounds + summary) and ``<stem>.csv`` (one row per round) atomically."""
    out_dir = Path(out_dir)
    json_path = write_text_atomic(out_dir / f"{stem}.json", json.dumps(report.to_dict(), indent=2, sort_keys=True))
    csv_path = write_text_atomic(out_dir / f"{stem}.csv", metrics_csv(report.rounds))
    logger.info(f"[EVAL] Metrics written to {json_path} and {csv_path}")
    return {"json": json_path, "csv": csv_path}
