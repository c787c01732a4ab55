"""
Manifest Service

JSON-lines dataset manifests: a corpus record followed by one track record per
audio file. Also scans a genre/<file>.wav tree into an original-corpus manifest.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from marshmallow import ValidationError

from schemas.manifest import MANIFEST_VERSION, CorpusRecordSchema, TrackRecordSchema
from services.evaluation_service import CorpusEntry, CorpusIndex
from services.segmentation_service import GENRES, ORIGINAL, AudioClip, ingest
from utils.atomic_io import write_text_atomic
from utils.wav_io import WavIngestionError

logger = logging.getLogger(__name__)


class ManifestError(Exception):
    """Manifest unreadable or referentially inconsistent"""
    pass


@dataclass
class Manifest:
    tracks: List[dict]
    seed: Optional[int] = None
    augmentation_digest: Optional[str] = None
    root: Path = field(default_factory=Path.cwd)

    def corpus_record(self) -> dict:
        return {"record": "corpus", "version": MANIFEST_VERSION, "seed": self.seed,
                "augmentation_digest": self.augmentation_digest}

    def originals(self) -> List[dict]:
        return [t for t in self.tracks if t["transform"] == ORIGINAL]

    def genre_counts(self) -> Dict[str, int]:
        counts = {g: 0 for g in GENRES}
        for track in self.originals():
            counts[track["genre"]] += 1
        return counts

    def resolve(self, track: dict) -> Path:
        path = Path(track["path"])
        return path if path.is_absolute() else self.root / path

    def to_corpus_index(self) -> CorpusIndex:
        return CorpusIndex(
            CorpusEntry(t["track_id"], t["genre_index"], t["origin"], t["transform"],
                        path=str(self.resolve(t)), parameter=t.get("parameter"))
            for t in self.tracks
        )


def track_record(clip: AudioClip, path: str) -> dict:
    return {
        "record": "track",
        "track_id": clip.track_id,
        "path": path,
        "genre": GENRES[clip.genre_label],
        "genre_index": clip.genre_label,
        "duration_samples": clip.duration_samples,
        "origin": clip.origin,
        "transform": clip.transform,
        "parameter": clip.parameter,
    }


def validate_tracks(tracks: List[dict]):
    """Unique track ids; every augmented entry's origin is an original in the same manifest."""
    seen = set()
    for track in tracks:
        if track["track_id"] in seen:
            raise ManifestError(f"Duplicate track id {track['track_id']}")
        seen.add(track["track_id"])
    originals = {t["track_id"]: t for t in tracks if t["transform"] == ORIGINAL}
    for track in tracks:
        if track["transform"] == ORIGINAL:
            continue
        origin = originals.get(track["origin"])
        if origin is None:
            raise ManifestError(f"{track['track_id']} references missing origin {track['origin']}")
        if origin["genre_index"] != track["genre_index"]:
            raise ManifestError(f"{track['track_id']} changes the label of {track['origin']}")


def write_manifest(manifest: Manifest, path) -> Path:
    validate_tracks(manifest.tracks)
    lines = [json.dumps(manifest.corpus_record(), sort_keys=True)]
    lines += [json.dumps(t, sort_keys=True) for t in manifest.tracks]
    path = write_text_atomic(path, "\n".join(lines) + "\n")
    logger.info(f"[PREPARE] Manifest with {len(manifest.tracks)} tracks written to {path}")
    return path


def read_manifest(path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"Manifest not found: {path}")
    lines = [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not lines:
        raise ManifestError(f"Manifest {path} is empty")
    try:
        corpus = CorpusRecordSchema().load(json.loads(lines[0]))
        tracks = [TrackRecordSchema().load(json.loads(line)) for line in lines[1:]]
    except json.JSONDecodeError as e:
        raise ManifestError(f"Manifest {path} is not valid JSON lines: {e}")
    except ValidationError as e:
        raise ManifestError(f"Manifest {path} failed validation: {e.messages}")
    validate_tracks(tracks)
    return Manifest(tracks=tracks, seed=corpus["seed"], augmentation_digest=corpus["augmentation_digest"],
                    root=path.parent.resolve())


def scan_dataset(data_dir, manifest_dir=None) -> Tuple[Manifest, List[Tuple[str, str]]]:
    """
    Ingest every genre/<name>.wav under ``data_dir``.

    Returns the manifest of readable files and a list of (path, reason) for files
    that could not be read. Paths are stored relative to ``manifest_dir`` when given.
    """
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise ManifestError(f"Data directory not found: {data_dir}")
    root = Path(manifest_dir).resolve() if manifest_dir else None
    tracks, failures = [], []
    for genre in GENRES:
        genre_dir = data_dir / genre
        if not genre_dir.is_dir():
            continue
        for wav in sorted(genre_dir.glob("*.wav")):
            try:
                clip = ingest(wav, genre_label=GENRES.index(genre))
            except WavIngestionError as e:
                logger.warning(f"[PREPARE] Skipping unreadable file {wav}: {e}")
                failures.append((str(wav), str(e)))
                continue
            resolved = wav.resolve()
            try:
                stored = str(resolved.relative_to(root)) if root else str(resolved)
            except ValueError:
                stored = str(resolved)
            tracks.append(track_record(clip, stored))
    unknown = sorted(p.name for p in data_dir.iterdir() if p.is_dir() and p.name not in GENRES)
    if unknown:
        logger.warning(f"[PREPARE] Ignoring directories that are not genres: {unknown}")
    return Manifest(tracks=tracks, root=root or Path.cwd()), failures
