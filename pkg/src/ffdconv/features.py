"""Log-mel feature extraction.

WAV decoding (PCM16/float32, stereo averaged, no resampling), centered STFT
with reflect padding and a periodic Hann window, Slaney-scale mel filterbank
with peak-normalized triangles, and log(mel power + floor).
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile
from scipy.signal import get_window

from .config import FeatureParams
from .exceptions import FeatureError
from .tensor import Tensor

logger = logging.getLogger(__name__)

# Slaney mel scale: linear below 1 kHz, logarithmic above
_MEL_LINEAR_STEP = 200.0 / 3.0
_MEL_BREAK_HZ = 1000.0
_MEL_BREAK = _MEL_BREAK_HZ / _MEL_LINEAR_STEP
_MEL_LOG_STEP = np.log(6.4) / 27.0


@dataclass(frozen=True)
class WaveClip:
    """Mono samples in [-1, 1] at `sample_rate` Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise FeatureError(f"sample rate must be positive, got {self.sample_rate}")
        if self.samples.size == 0:
            raise FeatureError("clip has no samples")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-mel values [T, n_mels] and the parameters that produced them."""

    values: Tensor
    params: FeatureParams

    @property
    def frames(self) -> int:
        return self.values.shape[0]


def read_wav(path: Path | str, expected_rate: int | None = None) -> WaveClip:
    """Read a PCM16 or float32 WAV file as mono samples in [-1, 1].

    Args:
        path: WAV file
        expected_rate: Required sample rate; mismatches are an error (no resampling)

    Raises:
        FeatureError: Malformed file, unsupported encoding, empty data or rate mismatch
    """
    path = Path(path)
    if not path.exists():
        raise FeatureError(f"audio file not found: {path}")
    try:
        rate, data = wavfile.read(path)
    except (ValueError, EOFError, OSError) as e:
        raise FeatureError(f"{path}: malformed WAV file: {e}")

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise FeatureError(f"{path}: unsupported encoding {data.dtype} (need PCM16 or float32)")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.size == 0:
        raise FeatureError(f"{path}: empty data chunk")
    if expected_rate is not None and rate != expected_rate:
        raise FeatureError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    return WaveClip(samples=samples, sample_rate=int(rate))


def stft(clip: WaveClip, n_fft: int, hop: int, window: str = "hann") -> Tensor:
    """Power spectrogram [T, n_fft/2 + 1], T = floor(N / hop) + 1."""
    if hop <= 0 or n_fft < hop:
        raise FeatureError(f"need 0 < hop <= n_fft, got hop={hop} n_fft={n_fft}")
    samples = clip.samples
    if samples.size < hop:
        raise FeatureError(f"clip of {samples.size} samples is shorter than one hop ({hop})")
    padded = np.pad(samples, n_fft // 2, mode="reflect")
    frames = sliding_window_view(padded, n_fft)[::hop]
    win = get_window(window, n_fft, fftbins=True)
    spectrum = np.fft.rfft(frames * win, n=n_fft, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    return Tensor(power)


def hz_to_mel(hz: np.ndarray | float) -> np.ndarray:
    """Slaney mel scale."""
    hz = np.asarray(hz, dtype=np.float64)
    linear = hz / _MEL_LINEAR_STEP
    log_part = _MEL_BREAK + np.log(np.maximum(hz, _MEL_BREAK_HZ) / _MEL_BREAK_HZ) / _MEL_LOG_STEP
    return np.where(hz >= _MEL_BREAK_HZ, log_part, linear)


def mel_to_hz(mel: np.ndarray | float) -> np.ndarray:
    """Inverse of `hz_to_mel`."""
    mel = np.asarray(mel, dtype=np.float64)
    linear = mel * _MEL_LINEAR_STEP
    log_part = _MEL_BREAK_HZ * np.exp(_MEL_LOG_STEP * (np.maximum(mel, _MEL_BREAK) - _MEL_BREAK))
    return np.where(mel >= _MEL_BREAK, log_part, linear)


def mel_points(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """n_mels + 2 edge/center frequencies in Hz, equally spaced in mel."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


def mel_centers(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Center frequency of each mel band in Hz."""
    return mel_points(n_mels, fmin, fmax)[1:-1]


@lru_cache(maxsize=8)
def _cached_filterbank(
    n_mels: int, n_fft: int, sample_rate: int, fmin: float, fmax: float
) -> np.ndarray:
    if not 0 <= fmin < fmax <= sample_rate / 2:
        raise FeatureError(
            f"need 0 <= fmin < fmax <= sample_rate/2, got fmin={fmin} fmax={fmax}"
        )
    fft_freqs = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    points = mel_points(n_mels, fmin, fmax)
    lower = (fft_freqs[None, :] - points[:-2, None]) / np.diff(points)[:-1, None]
    upper = (points[2:, None] - fft_freqs[None, :]) / np.diff(points)[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    peaks = weights.max(axis=1)
    empty = np.flatnonzero(peaks <= 0)
    if empty.size:
        raise FeatureError(
            f"{empty.size} empty mel filters for n_fft={n_fft} "
            f"(bands {', '.join(str(i) for i in empty[:10])}"
            f"{', ...' if empty.size > 10 else ''}); reduce n_mels or raise n_fft"
        )
    weights /= peaks[:, None]
    weights.flags.writeable = False
    return weights


def mel_filterbank(
    n_mels: int, n_fft: int, sample_rate: int, fmin: float, fmax: float
) -> Tensor:
    """Triangular Slaney-scale filterbank [n_mels, n_fft/2 + 1], each row peaking at 1."""
    return Tensor(_cached_filterbank(n_mels, n_fft, sample_rate, float(fmin), float(fmax)))


def log_mel(clip: WaveClip, params: FeatureParams) -> MelSpectrogram:
    """log(mel power + log_floor), shape [T, n_mels]."""
    if clip.sample_rate != params.sample_rate:
        raise FeatureError(
            f"clip sample rate {clip.sample_rate} Hz, expected {params.sample_rate} Hz"
        )
    power = stft(clip, params.n_fft, params.hop, params.window).numpy()
    bank = mel_filterbank(
        params.n_mels, params.n_fft, params.sample_rate, params.fmin, params.fmax
    ).numpy()
    values = np.log(power @ bank.T + params.log_floor)
    logger.debug("log-mel %s from %.2f s clip", values.shape, clip.duration)
    return MelSpectrogram(values=Tensor(values), params=params)


def featurize_file(path: Path | str, params: FeatureParams) -> MelSpectrogram:
    """read_wav + log_mel."""
    return log_mel(read_wav(path, params.sample_rate), params)
