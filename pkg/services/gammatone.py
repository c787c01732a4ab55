"""
Gammatone Filterbank

FIR gammatone impulse responses used to initialize the first convolution of the
gammatone-front-end architectures. Center frequencies are spaced evenly on the
ERB-rate scale.
"""

import numpy as np

from utils.tensor import Tensor, default_dtype

DEFAULT_SAMPLE_RATE = 22050
DEFAULT_ORDER = 4
LOW_FREQUENCY_HZ = 50.0
BANDWIDTH_FACTOR = 1.019


class FilterbankError(ValueError):
    """Invalid filterbank geometry"""
    pass


def erb_bandwidth(freq_hz):
    """Equivalent rectangular bandwidth (Hz) at ``freq_hz``."""
    return 24.7 * (4.37 * np.asarray(freq_hz, dtype=np.float64) / 1000.0 + 1.0)


def hz_to_erb_rate(freq_hz):
    return 21.4 * np.log10(4.37 * np.asarray(freq_hz, dtype=np.float64) / 1000.0 + 1.0)


def erb_rate_to_hz(erb_rate):
    return (10.0 ** (np.asarray(erb_rate, dtype=np.float64) / 21.4) - 1.0) * 1000.0 / 4.37


def center_frequencies(num_filters: int, sample_rate: int = DEFAULT_SAMPLE_RATE,
                       low_hz: float = LOW_FREQUENCY_HZ, high_hz: float = None) -> np.ndarray:
    """Ascending centers from ``low_hz`` to ``high_hz`` (default Nyquist - 100 Hz)."""
    if num_filters < 1:
        raise FilterbankError(f"num_filters must be >= 1, got {num_filters}")
    if high_hz is None:
        high_hz = sample_rate / 2.0 - 100.0
    if not 0 < low_hz < high_hz < sample_rate / 2.0:
        raise FilterbankError(f"Invalid band {low_hz}..{high_hz} Hz for sample rate {sample_rate}")
    rates = np.linspace(hz_to_erb_rate(low_hz), hz_to_erb_rate(high_hz), num_filters)
    return erb_rate_to_hz(rates)


def gammatone_impulse_response(center_hz: float, kernel_len: int, sample_rate: int = DEFAULT_SAMPLE_RATE,
                               order: int = DEFAULT_ORDER) -> np.ndarray:
    """t^(n-1) exp(-2 pi b t) cos(2 pi f t), scaled to unit peak magnitude."""
    t = np.arange(kernel_len, dtype=np.float64) / sample_rate
    b = BANDWIDTH_FACTOR * erb_bandwidth(center_hz)
    response = t ** (order - 1) * np.exp(-2.0 * np.pi * b * t) * np.cos(2.0 * np.pi * center_hz * t)
    peak = np.max(np.abs(response))
    return response / peak if peak > 0 else response


def gammatone_filterbank(num_filters: int, kernel_len: int, sample_rate: int = DEFAULT_SAMPLE_RATE,
                         order: int = DEFAULT_ORDER) -> Tensor:
    """
    Build a num_filters x 1 x kernel_len tensor of gammatone kernels.

    Deterministic for fixed arguments. Raises FilterbankError when
    kernel_len < 2 or num_filters < 1.
    """
    if kernel_len < 2:
        raise FilterbankError(f"kernel_len must be >= 2, got {kernel_len}")
    if order < 1:
        raise FilterbankError(f"order must be >= 1, got {order}")
    centers = center_frequencies(num_filters, sample_rate)
    bank = np.stack([gammatone_impulse_response(f, kernel_len, sample_rate, order) for f in centers])
    return Tensor(bank[:, None, :], dtype=default_dtype(), name="gammatone")


def peak_frequency(kernel: np.ndarray, sample_rate: int = DEFAULT_SAMPLE_RATE, n_fft: int = 8192) -> float:
    """Frequency (Hz) of the magnitude-spectrum peak of a 1D kernel."""
    spectrum = np.abs(np.fft.rfft(np.ravel(kernel), n=max(n_fft, np.size(kernel))))
    freqs = np.fft.rfftfreq(max(n_fft, np.size(kernel)), d=1.0 / sample_rate)
    return float(freqs[int(np.argmax(spectrum))])
