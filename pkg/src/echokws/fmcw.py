"""FMCW chirp synthesis and cross-correlation echo profiles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container
from .audio import AudioBuffer, FilterSpec, apply_filter, bandpass

SPEED_OF_SOUND = 343.0
DEFAULT_SHIFT_WINDOW = (0, 119)


@dataclass(frozen=True)
class ChirpSpec:
    """Linear up-chirp ``f(t) = f_low + (f_high - f_low) * t / period``."""

    f_low: float
    f_high: float
    period: float = 0.012
    rate: float = 48000
    amplitude: float = 1.0

    @property
    def length(self) -> int:
        return int(round(self.period * self.rate))

    def validate(self) -> None:
        if not 0 < self.f_low <= self.f_high < self.rate / 2:
            raise ValueError(
                f"need 0 < f_low <= f_high < rate/2, got {self.f_low}, {self.f_high}, {self.rate}")
        n = self.period * self.rate
        if n < 1 or abs(n - round(n)) > 1e-6:
            raise ValueError(f"period*rate must be a positive integer, got {n}")

    def passband(self, margin: float = 500.0, taps: int = 255) -> FilterSpec:
        """Bandpass for isolating this chirp, clamped just below Nyquist."""
        high = min(self.f_high + margin, 0.4975 * self.rate)
        return bandpass(self.f_low - margin, high, taps)


# Bands used by the headset prototype: 17-20 kHz and 20.5-23.5 kHz, 12 ms.
DEFAULT_BANDS = (
    ChirpSpec(17000.0, 20000.0, 0.012, 48000, 0.4),
    ChirpSpec(20500.0, 23500.0, 0.012, 48000, 0.4),
)


def generate_chirp(spec: ChirpSpec) -> AudioBuffer:
    spec.validate()
    t = np.arange(spec.length) / spec.rate
    phase = 2 * np.pi * (spec.f_low * t + (spec.f_high - spec.f_low) * t ** 2 / (2 * spec.period))
    return AudioBuffer(spec.amplitude * np.sin(phase), spec.rate)


def generate_fmcw_stream(spec: ChirpSpec, n_chirps: int) -> AudioBuffer:
    """``n_chirps`` back-to-back repetitions of the chirp.

    Consecutive chirps join without a phase jump whenever the chirp spans an
    integer number of cycles, which holds for both default bands.
    """
    if n_chirps < 1:
        raise ValueError(f"n_chirps must be >= 1, got {n_chirps}")
    return AudioBuffer(np.tile(generate_chirp(spec).samples, n_chirps), spec.rate)


@dataclass(frozen=True, eq=False)
class EchoProfile:
    """Correlation magnitudes indexed (channel, shift, frame)."""

    values: np.ndarray
    shift_window: tuple[int, int]
    frame_period: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ValueError(f"echo profile must be 3-D, got shape {v.shape}")
        lo, hi = self.shift_window
        if hi - lo + 1 != v.shape[1]:
            raise ValueError(f"shift window {self.shift_window} does not match {v.shape[1]} rows")
        if not np.all(np.isfinite(v)):
            raise ValueError("echo profile contains non-finite values")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "shift_window", (int(lo), int(hi)))

    @property
    def n_frames(self) -> int:
        return self.values.shape[2]

    def save(self, path) -> None:
        container.write_tensor(path, self.values, self.shift_window, self.frame_period)

    @classmethod
    def load(cls, path) -> "EchoProfile":
        values, window, period = container.read_tensor(path)
        return cls(values, window, period)


def compute_echo_profile(received: AudioBuffer, spec: ChirpSpec,
                         shift_window: tuple[int, int] = DEFAULT_SHIFT_WINDOW) -> EchoProfile:
    """Per-frame circular cross-correlation magnitude against the template chirp.

    ``received`` is expected to be bandpass filtered to the chirp band and
    chirp-synchronized: frame ``f`` covers samples ``[f*L, (f+1)*L)``.
    """
    template = generate_chirp(spec).samples[0]
    L = template.size
    lo, hi = shift_window
    if not 0 <= lo <= hi < L:
        raise ValueError(f"shift window {shift_window} outside [0, {L})")
    n_frames = len(received) // L
    if n_frames < 1:
        raise ValueError(f"received has {len(received)} samples, less than one chirp ({L})")
    frames = received.samples[:, :n_frames * L].reshape(received.channels, n_frames, L)
    spectrum = np.fft.rfft(frames, axis=2) * np.conj(np.fft.rfft(template))
    corr = np.fft.irfft(spectrum, n=L, axis=2)
    values = np.abs(corr[:, :, lo:hi + 1]).transpose(0, 2, 1)
    return EchoProfile(values, (lo, hi), spec.period)


def differential_echo_profile(profile: EchoProfile) -> EchoProfile:
    if profile.n_frames < 2:
        raise ValueError("differential profile needs at least two frames")
    return EchoProfile(np.diff(profile.values, axis=2), profile.shift_window, profile.frame_period)


def shift_to_distance(shift: int, rate: float = 48000, speed_of_sound: float = SPEED_OF_SOUND) -> float:
    """One-way distance in metres for a correlation lag (round trip halved)."""
    if shift < 0:
        raise ValueError(f"shift must be non-negative, got {shift}")
    return shift * speed_of_sound / (2.0 * rate)


def distance_to_shift(distance: float, rate: float = 48000,
                      speed_of_sound: float = SPEED_OF_SOUND) -> int:
    return int(round(2.0 * distance * rate / speed_of_sound))


def echoic_profile(buffer: AudioBuffer, bands=DEFAULT_BANDS,
                   shift_window: tuple[int, int] = DEFAULT_SHIFT_WINDOW,
                   margin: float = 500.0, taps: int = 255) -> EchoProfile:
    """Bandpass each band out of raw microphone audio and stack the profiles.

    Channels come out as (mic0-band0, mic0-band1, mic1-band0, ...).
    """
    per_band = []
    for spec in bands:
        # Pad both ends with whole chirp periods so edge frames see
        # steady-state filter history instead of zeros.
        L = spec.length
        reps = -(-((taps - 1) // 2) // L) if len(buffer) >= L else 0
        n = len(buffer)
        usable = n - n % L
        head = np.tile(buffer.samples[:, :L], reps) if reps else buffer.samples[:, :0]
        tail = np.tile(buffer.samples[:, usable - L:usable], reps) if reps else buffer.samples[:, :0]
        padded = np.concatenate([head, buffer.samples[:, :usable], tail], axis=1)
        filtered = apply_filter(buffer.with_samples(padded), spec.passband(margin, taps))
        filtered = filtered.with_samples(filtered.samples[:, head.shape[1]:head.shape[1] + usable])
        per_band.append(compute_echo_profile(filtered, spec, shift_window).values)
    stacked = np.stack(per_band, axis=1)  # (mic, band, shift, frame)
    c, b, s, f = stacked.shape
    return EchoProfile(stacked.reshape(c * b, s, f), shift_window, bands[0].period)
