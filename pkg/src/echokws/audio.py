"""Waveform container, WAV I/O, FIR band splitting and power/SNR arithmetic."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

CANONICAL_RATE = 48000

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavError(ValueError):
    """Base class for WAV decoding problems."""


class WavHeaderError(WavError):
    """RIFF/WAVE structure is malformed."""


class WavEncodingError(WavError):
    """Sample encoding other than PCM-16 or IEEE float-32."""


class WavTruncatedError(WavError):
    """Data chunk is shorter than its header claims."""


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Channel-major waveform at a fixed sample rate.

    ``samples`` is stored as a float64 array of shape ``(channels, n)``; a 1-D
    input is promoted to a single channel.
    """

    samples: np.ndarray
    rate: float

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"samples must be (channels, n), got shape {x.shape}")
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples must be finite")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return len(self) / self.rate

    def channel(self, index: int) -> "AudioBuffer":
        return AudioBuffer(self.samples[index], self.rate)

    def with_samples(self, samples: np.ndarray) -> "AudioBuffer":
        return AudioBuffer(samples, self.rate)

    def __add__(self, other: "AudioBuffer") -> "AudioBuffer":
        if other.rate != self.rate:
            raise ValueError(f"rate mismatch: {self.rate} vs {other.rate}")
        return AudioBuffer(self.samples + other.samples, self.rate)

    def scaled(self, gain: float) -> "AudioBuffer":
        return AudioBuffer(self.samples * gain, self.rate)


# --------------------------------------------------------------------------- WAV


def wav_read(path) -> AudioBuffer:
    """Read a PCM-16 or float-32 RIFF/WAVE file.

    PCM-16 samples are scaled by 1/32768. Distinct exceptions are raised for
    a malformed header (:class:`WavHeaderError`), an unsupported encoding
    (:class:`WavEncodingError`) and a short data chunk (:class:`WavTruncatedError`).
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavHeaderError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4:pos + 8])
        body = raw[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavHeaderError(f"{path}: fmt chunk too short ({len(body)} bytes)")
            fmt = body
        elif cid == b"data":
            if fmt is None:
                raise WavHeaderError(f"{path}: data chunk before fmt chunk")
            if len(body) < size:
                raise WavTruncatedError(
                    f"{path}: data chunk declares {size} bytes, {len(body)} present")
            data = body
            break
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise WavHeaderError(f"{path}: missing fmt chunk")
    if data is None:
        raise WavHeaderError(f"{path}: missing data chunk")

    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 40:
            raise WavHeaderError(f"{path}: extensible fmt chunk too short")
        (tag,) = struct.unpack("<H", fmt[24:26])
    if channels < 1 or rate < 1:
        raise WavHeaderError(f"{path}: channels={channels}, rate={rate}")

    if tag == _WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise WavEncodingError(f"{path}: format tag {tag:#06x} with {bits} bits")
    if block_align != channels * dtype.itemsize:
        raise WavHeaderError(f"{path}: block_align {block_align} inconsistent with format")
    if len(data) % block_align:
        raise WavTruncatedError(f"{path}: data length {len(data)} not a whole frame count")

    frames = np.frombuffer(data, dtype=dtype).reshape(-1, channels)
    return AudioBuffer(frames.T.astype(np.float64) * scale, rate)


def wav_write(buffer: AudioBuffer, path, encoding: str = "float32") -> int:
    """Write ``buffer`` as a RIFF/WAVE file.

    Returns the number of samples that had to be clipped (pcm16 only); a
    :class:`UserWarning` is emitted when that count is non-zero.
    """
    if encoding == "pcm16":
        scaled = np.round(buffer.samples * 32768.0)
        clipped = int(np.count_nonzero(np.abs(buffer.samples) > 1.0))
        frames = np.clip(scaled, -32768, 32767).astype("<i2")
        tag, bits = _WAVE_FORMAT_PCM, 16
    elif encoding == "float32":
        frames = buffer.samples.astype("<f4")
        clipped = 0
        tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise ValueError(f"unsupported encoding {encoding!r}; use 'pcm16' or 'float32'")
    if clipped:
        warnings.warn(f"{clipped} samples outside [-1, 1] clipped for pcm16", stacklevel=2)

    rate = int(round(buffer.rate))
    channels = buffer.channels
    block = channels * bits // 8
    payload = frames.T.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, tag, channels, rate, rate * block, block, bits)
    header += b"data" + struct.pack("<I", len(payload))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    return clipped


# ----------------------------------------------------------------------- filters


@dataclass(frozen=True)
class FilterSpec:
    """Linear-phase FIR (windowed-sinc, Hamming) description."""

    kind: str
    cutoff_high: float
    cutoff_low: float | None = None
    taps: int = 255

    def validate(self, rate: float) -> None:
        if self.kind not in ("lowpass", "bandpass"):
            raise ValueError(f"filter kind must be lowpass or bandpass, got {self.kind!r}")
        if self.taps < 1 or self.taps % 2 == 0:
            raise ValueError(f"taps must be an odd positive integer, got {self.taps}")
        if not 0 < self.cutoff_high < rate / 2:
            raise ValueError(
                f"cutoff_high {self.cutoff_high} Hz must lie in (0, {rate / 2}) Hz")
        if self.kind == "bandpass":
            if self.cutoff_low is None or not 0 < self.cutoff_low < self.cutoff_high:
                raise ValueError(
                    f"bandpass needs 0 < cutoff_low < cutoff_high, got {self.cutoff_low}")

    def transition_width(self, rate: float) -> float:
        """Approximate main transition band width of a Hamming design, in Hz."""
        return 3.3 * rate / self.taps


def lowpass(cutoff: float, taps: int = 255) -> FilterSpec:
    return FilterSpec("lowpass", cutoff, None, taps)


def bandpass(low: float, high: float, taps: int = 255) -> FilterSpec:
    return FilterSpec("bandpass", high, low, taps)


def filter_taps(spec: FilterSpec, rate: float) -> np.ndarray:
    spec.validate(rate)
    if spec.kind == "lowpass":
        return sps.firwin(spec.taps, spec.cutoff_high, window="hamming", fs=rate)
    return sps.firwin(spec.taps, [spec.cutoff_low, spec.cutoff_high],
                      window="hamming", pass_zero=False, fs=rate)


def apply_filter(buffer: AudioBuffer, spec: FilterSpec) -> AudioBuffer:
    """Filter every channel; the (taps-1)/2 group delay is trimmed away."""
    h = filter_taps(spec, buffer.rate)
    n = len(buffer)
    if n == 0:
        return buffer
    full = sps.oaconvolve(buffer.samples, h[None, :], axes=1)
    delay = (spec.taps - 1) // 2
    return AudioBuffer(full[:, delay:delay + n], buffer.rate)


# ------------------------------------------------------------------- power & SNR


def signal_power(buffer: AudioBuffer) -> float:
    """Mean squared amplitude over all channels."""
    if len(buffer) == 0:
        raise ValueError("signal_power of an empty buffer")
    return float(np.mean(np.square(buffer.samples)))


def snr_db(signal_pow: float, noise_pow: float) -> float:
    return 10.0 * np.log10(signal_pow / noise_pow)


def noise_scale(signal_pow: float, noise_pow: float, target_snr_db: float) -> float:
    """Gain k such that ``signal_pow / (k**2 * noise_pow)`` hits the target SNR."""
    if signal_pow <= 0:
        raise ValueError("signal has zero power")
    if noise_pow <= 0:
        raise ValueError("noise has zero power")
    return float(np.sqrt(signal_pow / (noise_pow * 10.0 ** (target_snr_db / 10.0))))


def crop(noise: AudioBuffer, length: int, rng: np.random.Generator | None = None,
         offset: int | None = None) -> AudioBuffer:
    """Take ``length`` samples of ``noise`` from ``offset`` (uniform random if None)."""
    if len(noise) < length:
        raise ValueError(f"noise has {len(noise)} samples, need {length}")
    if offset is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        offset = int(rng.integers(0, len(noise) - length + 1))
    if not 0 <= offset <= len(noise) - length:
        raise ValueError(f"offset {offset} out of range")
    return AudioBuffer(noise.samples[:, offset:offset + length], noise.rate)


def mix_at_snr(signal: AudioBuffer, noise: AudioBuffer, snr: float,
               rng: np.random.Generator | None = None,
               offset: int | None = None) -> AudioBuffer:
    """Return ``signal + k * noise_segment`` at the requested SNR in dB.

    The noise segment is cropped to the signal length; a mono noise buffer is
    broadcast across the signal's channels.
    """
    if signal.rate != noise.rate:
        raise ValueError(f"rate mismatch: {signal.rate} vs {noise.rate}")
    seg = crop(noise, len(signal), rng, offset).samples
    if seg.shape[0] not in (1, signal.channels):
        raise ValueError(f"noise has {seg.shape[0]} channels, signal {signal.channels}")
    seg = np.broadcast_to(seg, signal.samples.shape)
    k = noise_scale(signal_power(signal), float(np.mean(np.square(seg))), snr)
    return AudioBuffer(signal.samples + k * seg, signal.rate)


def band_energy_fraction(buffer: AudioBuffer, f_low: float, f_high: float) -> float:
    """Fraction of total spectral energy with frequency in [f_low, f_high)."""
    spec = np.abs(np.fft.rfft(buffer.samples, axis=1)) ** 2
    freqs = np.fft.rfftfreq(len(buffer), 1.0 / buffer.rate)
    total = spec.sum()
    if total == 0:
        return 0.0
    sel = (freqs >= f_low) & (freqs < f_high)
    return float(spec[:, sel].sum() / total)


def band_energy(buffer: AudioBuffer, f_low: float, f_high: float) -> float:
    """Energy (Parseval-scaled) of the components in [f_low, f_high)."""
    n = len(buffer)
    spec = np.abs(np.fft.rfft(buffer.samples, axis=1)) ** 2
    weights = np.full(spec.shape[1], 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    freqs = np.fft.rfftfreq(n, 1.0 / buffer.rate)
    sel = (freqs >= f_low) & (freqs < f_high)
    return float((spec[:, sel] * weights[sel]).sum() / n)
