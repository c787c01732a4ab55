"""
Loudness Service

ITU-R BS.1770-4 integrated loudness (K-weighting, 400 ms blocks with 75% overlap,
-70 LUFS absolute gate, -10 LU relative gate) and constant-gain normalization to
a target loudness. The meter is pyloudnorm's, which derives its K-weighting
biquads for the clip's own sample rate.
"""

import logging
import warnings

import numpy as np
import pyloudnorm as pyln

logger = logging.getLogger(__name__)

BLOCK_SECONDS = 0.400
DEFAULT_TARGET_LUFS = -23.0
SILENCE = float("-inf")


class LoudnessMeasurementError(Exception):
    """Clip cannot be measured (shorter than one gating block)"""
    pass


def _meter(sample_rate: int) -> pyln.Meter:
    return pyln.Meter(sample_rate, filter_class="K-weighting", block_size=BLOCK_SECONDS)


def measure_loudness(samples: np.ndarray, sample_rate: int) -> float:
    """
    Integrated loudness in LUFS; -inf when every block falls below the absolute gate.

    Raises LoudnessMeasurementError for clips shorter than one 400 ms block;
    a clip of exactly one block is measured as a single gating block.
    """
    samples = np.asarray(samples, dtype=np.float64)
    block = int(round(BLOCK_SECONDS * sample_rate))
    if samples.ndim != 1 or samples.shape[0] < block:
        raise LoudnessMeasurementError(
            f"Loudness needs at least one {BLOCK_SECONDS * 1000:.0f} ms block "
            f"({block} samples), got {samples.shape[0]}"
        )
    if not np.any(samples):
        return SILENCE
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            value = float(_meter(sample_rate).integrated_loudness(samples))
        except ValueError as e:
            raise LoudnessMeasurementError(str(e)) from e
    return value if np.isfinite(value) else SILENCE


def loudness_gain_db(measured_lufs: float, target_lufs: float = DEFAULT_TARGET_LUFS):
    """Gain (dB) that moves ``measured_lufs`` onto the target; None when the clip is silent."""
    if not np.isfinite(measured_lufs):
        return None
    return target_lufs - measured_lufs


def normalize_loudness(samples: np.ndarray, sample_rate: int, target_lufs: float = DEFAULT_TARGET_LUFS):
    """
    Apply the constant gain that brings the clip to ``target_lufs``.

    Returns (samples, gain_db). Silent clips come back unchanged with gain_db None.
    The result is not clipped here.
    """
    samples = np.asarray(samples, dtype=np.float64)
    measured = measure_loudness(samples, sample_rate)
    gain_db = loudness_gain_db(measured, target_lufs)
    if gain_db is None:
        logger.warning("[AUGMENT] Loudness transform skipped: clip is below the absolute gate")
        return samples.copy(), None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        normalized = pyln.normalize.loudness(samples, measured, target_lufs)
    return np.asarray(normalized, dtype=np.float64), float(gain_db)
