"""
Celery tasks for the two parallel stages: per-track augmentation and per-round
training/evaluation. The plain functions are called directly by the CLI when
tasks are not dispatched.
"""
import logging
import time
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List

from errors import RoundStatus, log_stage_timing
from schemas.config import config_digest
from services.augmentation_service import AugmentationConfig, augment_track
from services.checkpoint_service import save_checkpoint
from services.evaluation_service import run_round
from services.fold_service import make_folds
from services.manifest_service import read_manifest, track_record
from services.segmentation_service import GENRES, ingest
from services.training_service import TrainConfig
from tasks.celery_app import celery_app
from utils.optim import AdamConfig
from utils.wav_io import write_wav

logger = logging.getLogger(__name__)


def train_config_from(run_config: Dict[str, Any]) -> TrainConfig:
    return TrainConfig(
        arch=run_config["arch"],
        max_epochs=run_config["max_epochs"],
        batch_size=run_config["batch_size"],
        early_stopping_patience=run_config["patience"],
        augment=run_config["augment"],
        seed=run_config["seed"],
        adam=AdamConfig(
            learning_rate=run_config["learning_rate"],
            beta1=run_config["beta1"],
            beta2=run_config["beta2"],
            epsilon=run_config["adam_epsilon"],
        ),
    )


def augmentation_config_from(run_config: Dict[str, Any]) -> AugmentationConfig:
    return AugmentationConfig(seed=run_config["seed"], loudness_target=run_config["loudness_target"])


def checkpoint_name(arch: str, round_index: int) -> str:
    return f"{arch}_round{round_index}.w1dc"


def augment_record(record: Dict[str, Any], source_path: str, out_dir: str, run_config: Dict[str, Any]) -> List[dict]:
    """Augment one original track; writes five WAVs under out_dir/<genre>/ and returns their records."""
    out_dir = Path(out_dir)
    clip = ingest(source_path, genre_label=record["genre_index"], track_id=record["track_id"])
    records = []
    for augmented in augment_track(clip, augmentation_config_from(run_config)):
        relative = Path(GENRES[augmented.genre_label]) / f"{augmented.track_id}.wav"
        write_wav(out_dir / relative, augmented.samples, augmented.sample_rate)
        records.append(track_record(augmented, str(relative)))
    return records


def run_round_from_manifest(manifest_path: str, round_index: int, run_config: Dict[str, Any],
                            out_dir: str) -> Dict[str, Any]:
    """Fold, train, test and checkpoint one round; returns the RoundResult as a dict plus the checkpoint path."""
    start_time = time.time()
    manifest = read_manifest(manifest_path)
    plan = make_folds([(t["track_id"], t["genre_index"]) for t in manifest.originals()],
                      run_config["seed"], strict=run_config["strict"])
    result, trained = run_round(run_config["arch"], plan, round_index, manifest.to_corpus_index(),
                                train_config_from(run_config))
    checkpoint = save_checkpoint(
        trained.network,
        Path(out_dir) / checkpoint_name(run_config["arch"], round_index),
        {
            "epoch": trained.epochs_run,
            "best_epoch": trained.best_epoch,
            "seed": trained.network.seed,
            "config_digest": config_digest(run_config),
            "round": round_index,
        },
    )
    log_stage_timing(f"round {round_index}", start_time)
    return {"result": asdict(result), "checkpoint": str(checkpoint)}


@celery_app.task(bind=True, max_retries=1, autoretry_for=(OSError,), retry_backoff=True)
def augment_track_task(self, record, source_path, out_dir, run_config):
    logger.info(f"[AUGMENT] Task {self.request.id}: {record['track_id']}")
    return augment_record(record, source_path, out_dir, run_config)


@celery_app.task(bind=True)
def train_round_task(self, manifest_path, round_index, run_config, out_dir):
    logger.info(f"[EVAL] Task {self.request.id}: {run_config['arch']} round {round_index} {RoundStatus.QUEUED}")
    return run_round_from_manifest(manifest_path, round_index, run_config, out_dir)
