"""MFCC front end for the vocal modality.

Chain: low-pass 10 kHz -> integer decimation to 16 kHz -> pre-emphasis ->
Hamming-windowed frames -> power spectrum -> HTK mel filterbank -> natural log
-> orthonormal DCT-II.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import container
from .audio import AudioBuffer, apply_filter, lowpass

LOG_FLOOR = 1e-10
VOCAL_CUTOFF = 10000.0
DECIMATION_GUARD = 7600.0


@dataclass(frozen=True)
class MfccConfig:
    pre_emphasis: float = 0.97
    frame_len: float = 0.025
    hop: float = 0.010
    n_mels: int = 40
    n_coeffs: int = 13
    mel_low: float = 20.0
    mel_high: float = 5000.0
    decimate_to: float = 16000.0

    def validate(self) -> None:
        if not 0 <= self.pre_emphasis < 1:
            raise ValueError(f"pre_emphasis must be in [0, 1), got {self.pre_emphasis}")
        if not 0 < self.hop <= self.frame_len:
            raise ValueError(f"need 0 < hop <= frame_len, got {self.hop}, {self.frame_len}")
        if not 1 <= self.n_coeffs <= self.n_mels:
            raise ValueError(f"need 1 <= n_coeffs <= n_mels, got {self.n_coeffs}, {self.n_mels}")
        if not 0 <= self.mel_low < self.mel_high <= self.decimate_to / 2:
            raise ValueError(
                f"mel range [{self.mel_low}, {self.mel_high}] must fit below {self.decimate_to / 2}")

    def frame_samples(self, rate: float) -> tuple[int, int]:
        return int(round(self.frame_len * rate)), int(round(self.hop * rate))

    def n_frames(self, n_samples: int, rate: float) -> int:
        win, hop = self.frame_samples(rate)
        if n_samples < win:
            return 0
        return 1 + (n_samples - win) // hop


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Coefficient-by-frame matrix with the start time of each frame."""

    values: np.ndarray
    frame_times: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature matrix contains non-finite values")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "frame_times", np.asarray(self.frame_times, dtype=np.float64))

    @property
    def shape(self):
        return self.values.shape

    def save(self, path) -> None:
        hop = float(self.frame_times[1] - self.frame_times[0]) if self.frame_times.size > 1 else 0.0
        container.write_tensor(path, self.values, (0, self.values.shape[0] - 1), hop)

    @classmethod
    def load(cls, path) -> "FeatureMatrix":
        values, _, hop = container.read_tensor(path)
        return cls(values, np.arange(values.shape[1]) * hop)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def preemphasize(buffer: AudioBuffer, coeff: float) -> AudioBuffer:
    if buffer.channels != 1:
        raise ValueError("pre-emphasis expects a mono buffer")
    x = buffer.samples[0]
    y = x.copy()
    y[1:] = x[1:] - coeff * x[:-1]
    return AudioBuffer(y, buffer.rate)


def decimate(buffer: AudioBuffer, factor: int, guard_cutoff: float = DECIMATION_GUARD,
             taps: int = 255) -> AudioBuffer:
    """Anti-alias low-pass at ``guard_cutoff`` then keep every ``factor``-th sample."""
    if factor < 1:
        raise ValueError(f"decimation factor must be >= 1, got {factor}")
    if factor == 1:
        return buffer
    if guard_cutoff >= buffer.rate / (2 * factor):
        raise ValueError(f"guard cutoff {guard_cutoff} Hz aliases at factor {factor}")
    guarded = apply_filter(buffer, lowpass(guard_cutoff, taps))
    return AudioBuffer(guarded.samples[:, ::factor], buffer.rate / factor)


def _fft_size(win: int) -> int:
    return 1 << (win - 1).bit_length()


@lru_cache(maxsize=16)
def _mel_filterbank_cached(n_mels, nfft, rate, f_low, f_high, oversample):
    edges = mel_to_hz(np.linspace(hz_to_mel(f_low), hz_to_mel(f_high), n_mels + 2))
    df = rate / nfft
    bins = np.arange(nfft // 2 + 1) * df
    # average the triangle over each bin's span so edge bins still get weight
    sub = (np.arange(oversample) + 0.5) / oversample - 0.5
    f = bins[:, None] + sub[None, :] * df
    fb = np.empty((n_mels, bins.size))
    for m in range(n_mels):
        lo, c, hi = edges[m], edges[m + 1], edges[m + 2]
        tri = np.clip(np.minimum((f - lo) / (c - lo), (hi - f) / (hi - c)), 0.0, None)
        fb[m] = tri.mean(axis=1)
    fb.setflags(write=False)
    return fb, edges[1:-1]


def mel_filterbank(config: MfccConfig, rate: float, oversample: int = 16):
    """Triangular HTK-scale filterbank; returns (weights[n_mels, bins], centres Hz)."""
    win, _ = config.frame_samples(rate)
    return _mel_filterbank_cached(config.n_mels, _fft_size(win), float(rate),
                                  float(config.mel_low), float(config.mel_high), oversample)


@lru_cache(maxsize=8)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis, rows are coefficients."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * k * (2 * i + 1) / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    m.setflags(write=False)
    return m


def power_frames(buffer: AudioBuffer, config: MfccConfig) -> np.ndarray:
    """Hamming-windowed |FFT|^2 per frame, shape (frames, bins)."""
    if buffer.channels != 1:
        raise ValueError("expected a mono buffer")
    win, hop = config.frame_samples(buffer.rate)
    n = len(buffer)
    if n < win:
        raise ValueError(f"frame of {win} samples longer than signal ({n})")
    count = config.n_frames(n, buffer.rate)
    idx = np.arange(win)[None, :] + hop * np.arange(count)[:, None]
    frames = buffer.samples[0][idx] * np.hamming(win)[None, :]
    return np.abs(np.fft.rfft(frames, n=_fft_size(win), axis=1)) ** 2


def log_mel_spectrogram(buffer: AudioBuffer, config: MfccConfig = MfccConfig()) -> FeatureMatrix:
    config.validate()
    power = power_frames(buffer, config)
    fb, _ = mel_filterbank(config, buffer.rate)
    mel = np.log(np.maximum(power @ fb.T, LOG_FLOOR)).T
    _, hop = config.frame_samples(buffer.rate)
    return FeatureMatrix(mel, np.arange(mel.shape[1]) * hop / buffer.rate)


def cepstra(log_mel: FeatureMatrix, n_coeffs: int) -> FeatureMatrix:
    basis = dct_matrix(log_mel.values.shape[0])[:n_coeffs]
    return FeatureMatrix(basis @ log_mel.values, log_mel.frame_times)


def mfcc_extract(buffer: AudioBuffer, config: MfccConfig = MfccConfig()) -> FeatureMatrix:
    """MFCCs of a mono buffer already at ``config.decimate_to`` Hz."""
    emphasized = preemphasize(buffer, config.pre_emphasis)
    return cepstra(log_mel_spectrogram(emphasized, config), config.n_coeffs)


def vocal_band(buffer: AudioBuffer, cutoff: float = VOCAL_CUTOFF, taps: int = 255) -> AudioBuffer:
    return apply_filter(buffer, lowpass(cutoff, taps))


def vocal_features(buffer: AudioBuffer, config: MfccConfig = MfccConfig(),
                   cutoff: float = VOCAL_CUTOFF) -> FeatureMatrix:
    """Raw microphone audio -> MFCC matrix (microphones averaged to mono)."""
    mono = AudioBuffer(buffer.samples.mean(axis=0), buffer.rate)
    factor = buffer.rate / config.decimate_to
    if abs(factor - round(factor)) > 1e-9:
        raise ValueError(f"rate {buffer.rate} is not an integer multiple of {config.decimate_to}")
    low = decimate(vocal_band(mono, cutoff), int(round(factor)))
    return mfcc_extract(low, config)
