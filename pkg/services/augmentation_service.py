"""
Augmentation Service

Five label-preserving waveform transforms (noise, gain, loudness, pitch, stretch)
and the corpus expansion that adds one clip per transform for every original.
All randomness for a (track, transform) pair comes from a seed derived from
(config.seed, track_id, transform), so results do not depend on execution order.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import librosa
import numpy as np

from services.loudness_service import DEFAULT_TARGET_LUFS, normalize_loudness
from services.segmentation_service import CANONICAL_CLIP_LENGTH, AudioClip, canonicalize

logger = logging.getLogger(__name__)


class Transform:
    NOISE = "noise"
    GAIN = "gain"
    LOUDNESS = "loudness"
    PITCH = "pitch"
    STRETCH = "stretch"


TRANSFORMS = (Transform.NOISE, Transform.GAIN, Transform.LOUDNESS, Transform.PITCH, Transform.STRETCH)
AUGMENTATION_FACTOR = len(TRANSFORMS) + 1

VOCODER_N_FFT = 2048
VOCODER_HOP = 512


class AugmentationError(Exception):
    """Base exception for augmentation failures"""

    def __init__(self, message: str, failures: Sequence[Tuple[str, str, str]] = ()):
        super().__init__(message)
        self.failures = list(failures)


@dataclass(frozen=True)
class AugmentationConfig:
    noise_amplitude_range: Tuple[float, float] = (0.005, 0.02)
    gain_db_range: Tuple[float, float] = (-12.0, 12.0)
    loudness_target: float = DEFAULT_TARGET_LUFS
    pitch_semitone_range: Tuple[float, float] = (-8.0, 8.0)
    stretch_rate_range: Tuple[float, float] = (0.5, 1.5)
    seed: int = 0

    def __post_init__(self):
        for name in ("noise_amplitude_range", "gain_db_range", "pitch_semitone_range", "stretch_rate_range"):
            low, high = getattr(self, name)
            if low > high:
                raise AugmentationError(f"{name} must be ordered low <= high, got ({low}, {high})")
        if self.stretch_rate_range[0] <= 0:
            raise AugmentationError("Stretch rates must be positive")

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form."""
        payload = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def derive_seed(seed: int, track_id: str, transform: str) -> int:
    digest = hashlib.sha256(f"{seed}:{track_id}:{transform}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(config: AugmentationConfig, track_id: str, transform: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(config.seed, track_id, transform))


# ---------------------------------------------------------------------------
# Signal-level transforms
# ---------------------------------------------------------------------------

def add_noise(samples: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    return samples + rng.normal(0.0, std, size=samples.shape)


def apply_gain(samples: np.ndarray, gain_db: float) -> np.ndarray:
    return samples * (10.0 ** (gain_db / 20.0))


def time_stretch(samples: np.ndarray, rate: float) -> np.ndarray:
    """Phase-vocoder stretch; output length is round(len / rate)."""
    if rate == 1.0:
        return np.asarray(samples, dtype=np.float64).copy()
    stretched = librosa.effects.time_stretch(
        np.asarray(samples, dtype=np.float64), rate=rate, n_fft=VOCODER_N_FFT, hop_length=VOCODER_HOP
    )
    return np.asarray(stretched, dtype=np.float64)


def pitch_shift(samples: np.ndarray, sample_rate: int, semitones: float) -> np.ndarray:
    """Vocoder stretch by 2^(s/12) then windowed-sinc resample back to the input length."""
    if semitones == 0.0:
        return np.asarray(samples, dtype=np.float64).copy()
    shifted = librosa.effects.pitch_shift(
        np.asarray(samples, dtype=np.float64), sr=sample_rate, n_steps=semitones,
        n_fft=VOCODER_N_FFT, hop_length=VOCODER_HOP, res_type="soxr_hq",
    )
    return np.asarray(shifted, dtype=np.float64)


# ---------------------------------------------------------------------------
# Clip-level transforms
# ---------------------------------------------------------------------------

def _noise(clip, rng, config):
    std = float(rng.uniform(*config.noise_amplitude_range))
    return add_noise(clip.samples, std, rng), std


def _gain(clip, rng, config):
    gain_db = float(rng.uniform(*config.gain_db_range))
    return apply_gain(clip.samples, gain_db), gain_db


def _loudness(clip, rng, config):
    samples, gain_db = normalize_loudness(clip.samples, clip.sample_rate, config.loudness_target)
    return samples, gain_db


def _pitch(clip, rng, config):
    semitones = float(rng.uniform(*config.pitch_semitone_range))
    return pitch_shift(clip.samples, clip.sample_rate, semitones), semitones


def _stretch(clip, rng, config):
    rate = float(rng.uniform(*config.stretch_rate_range))
    return time_stretch(clip.samples, rate), rate


_TRANSFORM_FNS: Dict[str, Callable] = {
    Transform.NOISE: _noise,
    Transform.GAIN: _gain,
    Transform.LOUDNESS: _loudness,
    Transform.PITCH: _pitch,
    Transform.STRETCH: _stretch,
}


def augmented_track_id(track_id: str, transform: str) -> str:
    return f"{track_id}.{transform}"


def augment(clip: AudioClip, transform: str, rng: np.random.Generator,
            config: AugmentationConfig = AugmentationConfig()) -> AudioClip:
    """
    Apply one transform with parameters drawn from ``rng``.

    The output is hard-clipped to [-1, 1] and keeps the clip's label; its track id
    is ``<track_id>.<transform>`` and ``parameter`` records the drawn value.
    """
    fn = _TRANSFORM_FNS.get(transform)
    if fn is None:
        raise AugmentationError(f"Unknown transform {transform!r}; expected one of {', '.join(TRANSFORMS)}")
    samples, parameter = fn(clip, rng, config)
    return AudioClip(
        samples=np.clip(samples, -1.0, 1.0),
        track_id=augmented_track_id(clip.track_id, transform),
        genre_label=clip.genre_label,
        sample_rate=clip.sample_rate,
        origin=clip.track_id,
        transform=transform,
        parameter=parameter,
    )


def augment_for_corpus(clip: AudioClip, transform: str, config: AugmentationConfig) -> AudioClip:
    """Seeded transform; pitch and stretch outputs are refit to the canonical 30 s length."""
    out = augment(clip, transform, rng_for(config, clip.track_id, transform), config)
    if transform in (Transform.PITCH, Transform.STRETCH):
        out = out.with_samples(canonicalize(out.samples, CANONICAL_CLIP_LENGTH))
    return out


def augment_track(clip: AudioClip, config: AugmentationConfig) -> List[AudioClip]:
    return [augment_for_corpus(clip, transform, config) for transform in TRANSFORMS]


def augment_dataset(clips: Sequence[AudioClip], config: AugmentationConfig) -> List[AudioClip]:
    """
    Originals followed by their five augmentations, in input order (6x corpus).

    Every clip is attempted; if any transform fails the run raises AugmentationError
    listing each (track_id, transform, reason).
    """
    corpus: List[AudioClip] = []
    failures = []
    for clip in clips:
        corpus.append(clip)
        for transform in TRANSFORMS:
            try:
                out = augment_for_corpus(clip, transform, config)
            except Exception as e:
                logger.error(f"[AUGMENT] {clip.track_id} / {transform} failed: {e}")
                failures.append((clip.track_id, transform, str(e)))
                continue
            corpus.append(out)

    if failures:
        raise AugmentationError(
            f"Augmentation failed for {len(failures)} (track, transform) pairs "
            f"across {len({f[0] for f in failures})} tracks",
            failures,
        )
    logger.info(f"[AUGMENT] {len(clips)} originals -> {len(corpus)} clips")
    return corpus
