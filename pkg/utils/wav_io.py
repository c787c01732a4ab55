"""
WAV decoding, polyphase windowed-sinc resampling and 16-bit PCM encoding.
"""
import logging
from pathlib import Path
from typing import Tuple

import numpy as np
import soundfile as sf
from scipy.signal import firwin, resample_poly

from utils.atomic_io import atomic_write

logger = logging.getLogger(__name__)

TARGET_SAMPLE_RATE = 22050
KAISER_BETA = 8.6
TAPS_PER_PHASE = 64

WAV_FORMATS = ("WAV", "WAVEX")
SUPPORTED_SUBTYPES = ("PCM_U8", "PCM_S8", "PCM_16", "PCM_24", "FLOAT")
MAX_CHANNELS = 2


class WavIngestionError(Exception):
    """Base exception for WAV ingestion"""
    pass


class MalformedHeaderError(WavIngestionError):
    """File is not a parseable RIFF/WAV container"""
    pass


class UnsupportedCodecError(WavIngestionError):
    """Container is WAV but the sample encoding or channel layout is not accepted"""
    pass


class EmptyPayloadError(WavIngestionError):
    """Header parses but carries no audio frames"""
    pass


def read_wav(path) -> Tuple[np.ndarray, int]:
    """
    Decode a WAV file to a mono float64 buffer scaled by the format's full scale.

    Returns (samples, sample_rate). Stereo is averaged per sample.
    Raises MalformedHeaderError, UnsupportedCodecError or EmptyPayloadError.
    """
    path = Path(path)
    if not path.is_file():
        raise WavIngestionError(f"Audio file not found: {path}")
    try:
        info = sf.info(str(path))
    except RuntimeError as e:
        raise MalformedHeaderError(f"{path.name}: {e}")

    if info.format not in WAV_FORMATS:
        raise MalformedHeaderError(f"{path.name}: container {info.format} is not RIFF/WAV")
    if info.subtype not in SUPPORTED_SUBTYPES:
        raise UnsupportedCodecError(f"{path.name}: sample encoding {info.subtype} is not supported")
    if not 1 <= info.channels <= MAX_CHANNELS:
        raise UnsupportedCodecError(f"{path.name}: {info.channels} channels (expected 1 or 2)")
    if info.frames == 0:
        raise EmptyPayloadError(f"{path.name}: no audio frames")

    try:
        data, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    except RuntimeError as e:
        raise MalformedHeaderError(f"{path.name}: {e}")
    if data.shape[0] == 0:
        raise EmptyPayloadError(f"{path.name}: no audio frames")
    return data.mean(axis=1), int(sample_rate)


def resample(samples: np.ndarray, orig_rate: int, target_rate: int = TARGET_SAMPLE_RATE) -> np.ndarray:
    """Kaiser-windowed sinc resampling (beta 8.6, 64 taps per polyphase branch)."""
    samples = np.asarray(samples, dtype=np.float64)
    if orig_rate == target_rate:
        return samples
    if orig_rate <= 0 or target_rate <= 0:
        raise ValueError(f"Sample rates must be positive, got {orig_rate} -> {target_rate}")
    g = int(np.gcd(int(orig_rate), int(target_rate)))
    up, down = target_rate // g, orig_rate // g
    max_rate = max(up, down)
    taps = firwin(TAPS_PER_PHASE * max_rate + 1, 1.0 / max_rate, window=("kaiser", KAISER_BETA))
    return resample_poly(samples, up, down, window=taps)


def load_wav(path, target_rate: int = TARGET_SAMPLE_RATE) -> np.ndarray:
    samples, rate = read_wav(path)
    if rate != target_rate:
        logger.debug(f"Resampling {Path(path).name} from {rate} Hz to {target_rate} Hz")
        samples = resample(samples, rate, target_rate)
    return samples


def write_wav(path, samples: np.ndarray, sample_rate: int = TARGET_SAMPLE_RATE) -> Path:
    """Write mono 16-bit PCM atomically; samples are clipped to [-1, 1] first."""
    samples = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    with atomic_write(path) as tmp:
        sf.write(str(tmp), samples, sample_rate, subtype="PCM_16", format="WAV")
    return Path(path)
