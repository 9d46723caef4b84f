"""
Log-mel Feature Extraction

Converts waveforms into log-mel spectrograms, the feature domain M in which
every classifier, generator and attack in timbre-lab operates.
"""
from dataclasses import dataclass, field

import librosa
import numpy as np
from scipy import signal

from timbre_lab.errors import InvalidArgumentError
from timbre_lab.numkernel import make_rng

# Dynamic range of normalised log-mel values (dB relative to the loudest bin)
MEL_FLOOR_DB = -80.0
MEL_CEIL_DB = 10.0

# Power floor before the log
AMIN = 1e-10

# Dynamic range kept below the loudest entry
TOP_DB = 80.0


@dataclass(frozen=True)
class MelConfig:
    """STFT / mel-bank parameters; defaults are conventional 16 kHz speech settings"""
    n_fft: int = 400
    hop: int = 160
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    sample_rate: int = 16000

    def __post_init__(self):
        if self.n_fft < 2 or self.hop < 1 or self.n_mels < 1:
            raise InvalidArgumentError(
                f"n_fft, hop and n_mels must be positive (got {self.n_fft}, {self.hop}, {self.n_mels})"
            )


@dataclass
class MelSpectrogram:
    """Frames x mel-bins log-power matrix"""
    values: np.ndarray
    seed: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise InvalidArgumentError(f"mel values must be (frames >= 1, n_mels), got {self.values.shape}")

    @property
    def frames(self):
        return self.values.shape[0]

    @property
    def n_mels(self):
        return self.values.shape[1]


def mel_filterbank(n_fft, n_mels, sample_rate, fmin, fmax):
    """
    Triangular mel filterbank on the HTK mel scale (2595 * log10(1 + f / 700)).

    Args:
        n_fft (int): FFT size; the bank has n_fft // 2 + 1 columns
        n_mels (int): Number of triangles (rows)
        sample_rate (int): Sampling rate in Hz
        fmin (float): Lower edge in Hz
        fmax (float): Upper edge in Hz, at most sample_rate / 2

    Returns:
        np.ndarray: (n_mels, n_fft // 2 + 1) non-negative weights, apex value 1
            at the mel centre of each triangle

    Raises:
        InvalidArgumentError: If 0 <= fmin < fmax <= sample_rate / 2 is violated
    """
    if n_mels < 1:
        raise InvalidArgumentError(f"n_mels must be >= 1, got {n_mels}")
    if not (0 <= fmin < fmax <= sample_rate / 2):
        raise InvalidArgumentError(
            f"need 0 <= fmin < fmax <= sample_rate/2, got fmin={fmin}, fmax={fmax}, sample_rate={sample_rate}"
        )
    return librosa.filters.mel(
        sr=sample_rate,
        n_fft=n_fft,
        n_mels=n_mels,
        fmin=fmin,
        fmax=fmax,
        htk=True,
        norm=None,
        dtype=np.float64,
    )


def mel_center_frequencies(n_mels, fmin, fmax):
    """Apex frequency (Hz) of each triangle in ``mel_filterbank``."""
    edges = librosa.mel_frequencies(n_mels=n_mels + 2, fmin=fmin, fmax=fmax, htk=True)
    return edges[1:-1]


def mel_spectrogram(w, n_fft=400, hop=160, n_mels=80, fmin=0.0, fmax=None):
    """
    Log-mel spectrogram of a waveform.

    Hann-windowed magnitude-squared STFT (no padding) -> mel bank -> dB
    relative to the loudest entry, clamped at -80 dB. Silent input yields
    the floor everywhere.

    Args:
        w (WaveSample): Input waveform
        n_fft (int): Window / FFT size
        hop (int): Frame advance in samples
        n_mels (int): Mel bins
        fmin (float): Lower mel-bank edge in Hz
        fmax (float): Upper mel-bank edge, defaults to Nyquist

    Returns:
        MelSpectrogram: 1 + (len - n_fft) // hop frames

    Raises:
        InvalidArgumentError: If the waveform is shorter than n_fft
    """
    samples = np.asarray(w.samples, dtype=np.float64)
    if samples.size < n_fft:
        raise InvalidArgumentError(f"waveform has {samples.size} samples, need at least n_fft={n_fft}")
    if fmax is None:
        fmax = w.sample_rate / 2

    _, _, zxx = signal.stft(
        samples,
        fs=w.sample_rate,
        window="hann",
        nperseg=n_fft,
        noverlap=n_fft - hop,
        nfft=n_fft,
        detrend=False,
        return_onesided=True,
        boundary=None,
        padded=False,
    )
    power = np.abs(zxx.T) ** 2
    mel_power = power @ mel_filterbank(n_fft, n_mels, w.sample_rate, fmin, fmax).T

    if float(mel_power.max()) <= 0.0:
        values = np.full(mel_power.shape, MEL_FLOOR_DB)
    else:
        values = librosa.power_to_db(mel_power, ref=np.max, amin=AMIN, top_db=TOP_DB)
        values = np.maximum(values, MEL_FLOOR_DB)
    return MelSpectrogram(values=values, meta={"speaker": w.speaker, "contentId": w.content_id})


def mel_from_config(w, cfg):
    """``mel_spectrogram`` driven by a MelConfig."""
    return mel_spectrogram(w, n_fft=cfg.n_fft, hop=cfg.hop, n_mels=cfg.n_mels, fmin=cfg.fmin, fmax=cfg.fmax)


def add_gaussian_noise(m, sigma, seed):
    """
    Transformed sample x_1 = x_0 + n, n ~ N(0, sigma^2) i.i.d. per entry.

    Args:
        m (MelSpectrogram | np.ndarray): Original sample x_0
        sigma (float): Noise scale in dB, >= 0
        seed (int): Noise seed

    Returns:
        Same type as ``m``: the transformed sample, shape preserved
    """
    if sigma < 0:
        raise InvalidArgumentError(f"sigma must be >= 0, got {sigma}")
    values = np.asarray(getattr(m, "values", m), dtype=np.float64)
    if sigma == 0:
        noisy = values.copy()
    else:
        noisy = values + make_rng(seed).normal(0.0, sigma, size=values.shape)
    if isinstance(m, MelSpectrogram):
        return MelSpectrogram(values=noisy, seed=m.seed, meta=dict(m.meta))
    return noisy
