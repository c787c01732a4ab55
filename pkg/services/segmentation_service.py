"""
Segmentation Service

Clip ingestion and the fixed sliding-window split: every 30 s clip becomes 21
overlapping 5 s segments (window 110,250, hop 27,562) sharing the clip's label.
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from utils.wav_io import TARGET_SAMPLE_RATE, load_wav

logger = logging.getLogger(__name__)

SAMPLE_RATE = TARGET_SAMPLE_RATE
SEGMENT_LENGTH = 110_250
SEGMENT_HOP = 27_562  # floor(0.25 * SEGMENT_LENGTH)
SEGMENTS_PER_TRACK = 21
MIN_CLIP_LENGTH = (SEGMENTS_PER_TRACK - 1) * SEGMENT_HOP + SEGMENT_LENGTH  # 661,490
CANONICAL_CLIP_LENGTH = 661_500

GENRES = ("blues", "classical", "country", "disco", "hiphop", "jazz", "metal", "pop", "reggae", "rock")
ORIGINAL = "original"


class SegmentationError(Exception):
    """Base exception for clip and segment errors"""
    pass


class TrackTooShortError(SegmentationError):
    def __init__(self, track_id: str, length: int):
        super().__init__(
            f"Track {track_id} has {length} samples; at least {MIN_CLIP_LENGTH} "
            f"({MIN_CLIP_LENGTH / SAMPLE_RATE:.2f} s at {SAMPLE_RATE} Hz) are required"
        )
        self.track_id = track_id
        self.length = length


@dataclass
class AudioClip:
    samples: np.ndarray
    track_id: str
    genre_label: Optional[int] = None
    sample_rate: int = SAMPLE_RATE
    origin: Optional[str] = None
    transform: str = ORIGINAL
    parameter: Optional[float] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise SegmentationError(f"Clip {self.track_id} must be mono, got shape {self.samples.shape}")
        if self.genre_label is not None and not 0 <= self.genre_label < len(GENRES):
            raise SegmentationError(f"Genre label {self.genre_label} out of range for {self.track_id}")
        if self.origin is None:
            self.origin = self.track_id

    @property
    def genre(self) -> Optional[str]:
        return None if self.genre_label is None else GENRES[self.genre_label]

    @property
    def duration_samples(self) -> int:
        return int(self.samples.shape[0])

    def with_samples(self, samples: np.ndarray, **changes) -> "AudioClip":
        return replace(self, samples=samples, **changes)


@dataclass(frozen=True)
class Segment:
    samples: np.ndarray = field(repr=False)
    track_id: str
    segment_index: int
    genre_label: Optional[int] = None


def genre_index(name: str) -> int:
    try:
        return GENRES.index(name)
    except ValueError:
        raise SegmentationError(f"Unknown genre {name!r}; expected one of {', '.join(GENRES)}")


def ingest(path, genre_label: Optional[int] = None, track_id: Optional[str] = None) -> AudioClip:
    """
    Decode a WAV file into a 22,050 Hz mono clip.

    The track id defaults to the file stem and the genre to the parent directory
    name when that names a known genre.
    """
    path = Path(path)
    samples = load_wav(path, SAMPLE_RATE)
    if genre_label is None and path.parent.name in GENRES:
        genre_label = GENRES.index(path.parent.name)
    return AudioClip(samples=samples, track_id=track_id or path.stem, genre_label=genre_label)


def canonicalize(samples: np.ndarray, length: int = CANONICAL_CLIP_LENGTH) -> np.ndarray:
    """Truncate or zero-pad to exactly ``length`` samples."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[0] >= length:
        return samples[:length].copy()
    return np.pad(samples, (0, length - samples.shape[0]))


def _checked(clip: AudioClip) -> np.ndarray:
    if clip.duration_samples < MIN_CLIP_LENGTH:
        raise TrackTooShortError(clip.track_id, clip.duration_samples)
    return canonicalize(clip.samples)


def segment_matrix(clip: AudioClip) -> np.ndarray:
    """Read-only 21 x 110,250 view over the canonical clip; row k starts at k * hop."""
    samples = _checked(clip)
    windows = np.lib.stride_tricks.sliding_window_view(samples, SEGMENT_LENGTH)[::SEGMENT_HOP]
    return windows[:SEGMENTS_PER_TRACK]


def segment(clip: AudioClip) -> List[Segment]:
    matrix = segment_matrix(clip)
    return [
        Segment(samples=matrix[k], track_id=clip.track_id, segment_index=k, genre_label=clip.genre_label)
        for k in range(SEGMENTS_PER_TRACK)
    ]
