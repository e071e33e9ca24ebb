"""Synthetic dual-modal recordings: FMCW echoes from a moving mouth plus voice.

Every utterance is a pure function of (vocabulary, scene, seed). Per-record
seeds are derived from (dataset seed, record index) so records can be
generated in any order or in parallel with identical bytes.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, apply_filter, lowpass, mix_at_snr, wav_write
from .fmcw import DEFAULT_BANDS, SPEED_OF_SOUND, ChirpSpec, generate_chirp

COMMANDS = ("yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go")
UNKNOWN = "unknown"
SILENCE = "silence"
CLASSES = COMMANDS + (UNKNOWN, SILENCE)

N_HARMONICS = 12
RAMP = 0.010
MAX_JITTER = 0.050
MAX_OFFSET_CM = 1.5


@dataclass(frozen=True)
class SceneSpec:
    baseline_distance: float = 0.039
    mic_count: int = 1
    bands: tuple = DEFAULT_BANDS
    reflection_gain: float = 0.2
    face_gain: float = 0.6
    rng_seed: int = 0
    rate: float = 48000
    duration: float = 1.0
    speed_of_sound: float = SPEED_OF_SOUND
    mic_spacing: float = 0.018
    ambient_dbfs: float = -60.0
    vocal_rms: float = 0.05
    crossfade: int = 32

    def validate(self) -> None:
        if self.baseline_distance <= 0:
            raise ValueError("baseline_distance must be positive")
        if not self.bands:
            raise ValueError("scene needs at least one chirp band")
        if self.mic_count < 1:
            raise ValueError("mic_count must be >= 1")
        for b in self.bands:
            b.validate()
            if b.rate != self.rate:
                raise ValueError(f"band rate {b.rate} differs from scene rate {self.rate}")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.rate))

    @property
    def chirp_len(self) -> int:
        return self.bands[0].length

    @property
    def n_frames(self) -> int:
        return -(-self.n_samples // self.chirp_len)


# ------------------------------------------------------------------ vocabulary


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-linear mouth offset from the baseline; times in s, offsets in cm."""

    times: tuple
    offsets_cm: tuple

    def sample(self, t: np.ndarray) -> np.ndarray:
        return np.interp(t, self.times, self.offsets_cm, left=0.0, right=0.0)

    def warped(self, shift: float = 0.0, stretch: float = 1.0, scale: float = 1.0) -> "Trajectory":
        centre = 0.5 * (self.times[0] + self.times[-1])
        times = tuple(centre + (t - centre) * stretch + shift for t in self.times)
        return Trajectory(times, tuple(o * scale for o in self.offsets_cm))


ZERO_TRAJECTORY = Trajectory((0.0, 1.0), (0.0, 0.0))


@dataclass(frozen=True)
class VocalSignature:
    """F0 contour plus formant tracks over a voiced interval."""

    onset: float
    offset: float
    f0_times: tuple
    f0_hz: tuple
    formant_times: tuple
    formants_hz: tuple  # one tuple of formant frequencies per formant time
    amplitude: float = 1.0
    bandwidth: float = 90.0

    def validate(self) -> None:
        if not self.offset > self.onset:
            raise ValueError("signature offset must follow onset")
        if self.amplitude > 0 and not all(80.0 <= f <= 300.0 for f in self.f0_hz):
            raise ValueError(f"F0 must lie in [80, 300] Hz, got {self.f0_hz}")
        if any(f >= 5000.0 or f <= 0 for row in self.formants_hz for f in row):
            raise ValueError("formants must lie in (0, 5000) Hz")

    def warped(self, shift=0.0, stretch=1.0, f0_scale=1.0, formant_scale=1.0, gain=1.0):
        centre = 0.5 * (self.onset + self.offset)

        def w(t):
            return centre + (t - centre) * stretch + shift
        return VocalSignature(
            w(self.onset), w(self.offset),
            tuple(w(t) for t in self.f0_times),
            tuple(float(np.clip(f * f0_scale, 80.0, 300.0)) for f in self.f0_hz),
            tuple(w(t) for t in self.formant_times),
            tuple(tuple(min(f * formant_scale, 4900.0) for f in row) for row in self.formants_hz),
            self.amplitude * gain, self.bandwidth)


SILENT_SIGNATURE = VocalSignature(0.4, 0.6, (0.4,), (150.0,), (0.4,), ((500.0,),), amplitude=0.0)


def _random_trajectory(rng, start, end):
    n = int(rng.integers(4, 9))
    inner = np.sort(rng.uniform(start, end, n - 2))
    times = np.concatenate([[start], inner, [end]])
    amps = rng.uniform(0.3, 1.2, n) * rng.choice([-1.0, 1.0], n)
    amps[0] = amps[-1] = 0.0
    return Trajectory(tuple(float(t) for t in times), tuple(float(a) for a in amps))


def _random_signature(rng, start, end):
    n_syll = int(rng.integers(1, 4))
    cuts = np.linspace(start, end, n_syll + 1)
    ftimes, forms = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        for t in (a + 0.25 * (b - a), a + 0.75 * (b - a)):
            ftimes.append(float(t))
            forms.append((float(rng.uniform(300, 900)), float(rng.uniform(900, 2500)),
                          float(rng.uniform(2500, 3500))))
    f0 = rng.uniform(110, 200, 3)
    return VocalSignature(float(start), float(end),
                          (float(start), float(0.5 * (start + end)), float(end)),
                          tuple(float(f) for f in f0), tuple(ftimes), tuple(forms))


@dataclass(frozen=True)
class SyntheticVocabulary:
    """Ten commands plus the diffuse "unknown" and the empty "silence" class."""

    classes: tuple
    trajectories: dict
    signatures: dict
    seed: int = 0

    @classmethod
    def default(cls, seed: int = 7) -> "SyntheticVocabulary":
        rng = np.random.default_rng([seed, 0x766F63])
        traj, sig = {}, {}
        for name in COMMANDS:
            dur = rng.uniform(0.35, 0.55)
            start = 0.5 - dur / 2
            traj[name] = _random_trajectory(rng, start, start + dur)
            sig[name] = _random_signature(rng, start, start + dur)
        return cls(CLASSES, traj, sig, seed)

    def index(self, label: str) -> int:
        return self.classes.index(label)

    @property
    def silence_id(self) -> int:
        return self.classes.index(SILENCE)

    @property
    def unknown_id(self) -> int:
        return self.classes.index(UNKNOWN)

    def draw(self, class_id: int, rng: np.random.Generator):
        """(trajectory, signature) template for a class; "unknown" is resampled."""
        label = self.classes[class_id]
        if label == SILENCE:
            return ZERO_TRAJECTORY, SILENT_SIGNATURE
        if label == UNKNOWN:
            dur = rng.uniform(0.35, 0.55)
            start = 0.5 - dur / 2
            return _random_trajectory(rng, start, start + dur), _random_signature(rng, start, start + dur)
        return self.trajectories[label], self.signatures[label]


# ------------------------------------------------------------------ synthesis


def frame_offsets(trajectory: Trajectory, scene: SceneSpec) -> np.ndarray:
    """Offsets in metres held constant within each chirp frame (frame centres)."""
    t = (np.arange(scene.n_frames) + 0.5) * scene.bands[0].period
    return trajectory.sample(t) / 100.0


def simulate_echo_channel(trajectory, scene: SceneSpec) -> AudioBuffer:
    """Mouth and static face reflections of every band at every microphone.

    ``trajectory`` is a :class:`Trajectory` or an array of per-frame offsets in
    metres. When the mouth delay changes between frames the two delayed copies
    are cross-faded over ``scene.crossfade`` samples to keep the transition
    inside the ultrasonic band.
    """
    scene.validate()
    offsets = frame_offsets(trajectory, scene) if isinstance(trajectory, Trajectory) \
        else np.asarray(trajectory, dtype=np.float64)
    L = scene.chirp_len
    n_frames = offsets.size
    out = np.zeros((scene.mic_count, n_frames * L))
    fade = 0.5 - 0.5 * np.cos(np.pi * (np.arange(scene.crossfade) + 0.5) / scene.crossfade)
    for m in range(scene.mic_count):
        base = scene.baseline_distance + m * scene.mic_spacing / 2
        dist = base + offsets
        if np.any(dist <= 0):
            raise ValueError("trajectory drives the reflector distance to <= 0")
        delays = np.rint(2 * dist * scene.rate / scene.speed_of_sound).astype(int)
        face = int(round(2 * base * scene.rate / scene.speed_of_sound))
        for spec in scene.bands:
            chirp = generate_chirp(spec).samples[0]
            face_frame = scene.face_gain * np.roll(chirp, face)
            prev = None
            for f in range(n_frames):
                cur = np.roll(chirp, delays[f])
                frame = scene.reflection_gain * cur
                if prev is not None and delays[f] != delays[f - 1] and scene.crossfade:
                    k = scene.crossfade
                    frame[:k] = scene.reflection_gain * (fade * cur[:k] + (1 - fade) * prev[:k])
                out[m, f * L:(f + 1) * L] += frame + face_frame
                prev = cur
    return AudioBuffer(out, scene.rate)


def synthesize_vocal(signature: VocalSignature, duration: float, rate: float = 48000) -> AudioBuffer:
    """Twelve-harmonic source shaped by formant resonances, RMS-normalised.

    The voiced interval gets 10 ms raised-cosine attack and release; the RMS
    over that interval equals ``signature.amplitude``.
    """
    signature.validate()
    n = int(round(duration * rate))
    if signature.amplitude == 0:
        return AudioBuffer(np.zeros(n), rate)
    t = np.arange(n) / rate
    env = np.clip(np.minimum(t - signature.onset, signature.offset - t) / RAMP, 0.0, 1.0)
    env = 0.5 - 0.5 * np.cos(np.pi * env)
    voiced = env > 0
    f0 = np.interp(t, signature.f0_times, signature.f0_hz)
    phase = 2 * np.pi * np.cumsum(f0) / rate
    forms = np.asarray(signature.formants_hz, dtype=np.float64)
    tracks = [np.interp(t, signature.formant_times, forms[:, j]) for j in range(forms.shape[1])]
    x = np.zeros(n)
    for k in range(1, N_HARMONICS + 1):
        fk = k * f0
        gain = 0.05 + sum(1.0 / (1.0 + ((fk - F) / signature.bandwidth) ** 2) for F in tracks)
        x += gain / k * np.sin(k * phase)
    x *= env
    rms = np.sqrt(np.mean(x[voiced] ** 2)) if voiced.any() else 0.0
    if rms > 0:
        x *= signature.amplitude / rms
    return AudioBuffer(x, rate)


def _pink(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    n = shape[-1]
    spec = np.fft.rfft(rng.standard_normal(shape), axis=-1)
    f = np.fft.rfftfreq(n, 1.0 / rate)
    spec[..., 1:] /= np.sqrt(np.maximum(f[1:], 20.0))
    spec[..., 0] = 0
    x = np.fft.irfft(spec, n, axis=-1)
    rms = np.sqrt(np.mean(x ** 2, axis=-1, keepdims=True))
    return x / np.where(rms > 0, rms, 1.0)


def ambient_noise(scene: SceneSpec, seed: int, n: int | None = None) -> AudioBuffer:
    """Pink room-noise floor at ``scene.ambient_dbfs`` (RMS re. a full-scale sine)."""
    n = scene.n_samples if n is None else n
    rng = np.random.default_rng([seed, 0x616D62])
    sigma = 10.0 ** (scene.ambient_dbfs / 20.0) / np.sqrt(2.0)
    return AudioBuffer(sigma * _pink(rng, (scene.mic_count, n), scene.rate), scene.rate)


@dataclass(frozen=True, eq=False)
class UtteranceRecord:
    audio: AudioBuffer
    label: int
    split: str = ""
    provenance: dict = field(default_factory=dict)

    def with_audio(self, audio: AudioBuffer) -> "UtteranceRecord":
        return replace(self, audio=audio)


def _speaker_variation(rng):
    return dict(
        shift=float(rng.uniform(-MAX_JITTER, MAX_JITTER)),
        stretch=float(rng.uniform(0.95, 1.05)),
        traj_scale=float(rng.uniform(0.9, 1.1)),
        f0_scale=float(rng.uniform(0.8, 1.25)),
        formant_scale=float(rng.uniform(0.94, 1.06)),
        gain_db=float(rng.uniform(-1.0, 1.0)),
    )


def render_parts(class_id: int, scene: SceneSpec, vocab: SyntheticVocabulary):
    """Echo and vocal components of one utterance before ambient noise is added."""
    rng = np.random.default_rng(scene.rng_seed)
    trajectory, signature = vocab.draw(class_id, rng)
    var = _speaker_variation(rng)
    traj = trajectory.warped(var["shift"], var["stretch"], var["traj_scale"])
    echo = simulate_echo_channel(traj, scene)
    echo = AudioBuffer(echo.samples[:, :scene.n_samples], scene.rate)
    sig = signature.warped(var["shift"], var["stretch"], var["f0_scale"], var["formant_scale"],
                           10.0 ** (var["gain_db"] / 20.0) * scene.vocal_rms)
    vocal = synthesize_vocal(sig, scene.duration, scene.rate)
    return echo, vocal, var


def synthesize_utterance(class_id: int, scene: SceneSpec, mode: str = "vocal+echoic",
                         vocab: SyntheticVocabulary | None = None) -> UtteranceRecord:
    """Raw multi-microphone recording of one utterance.

    ``mode="silent"`` articulates the command (echo channel moves) without
    voicing. The ambient floor is drawn from its own stream so that silent
    and silence-class records with the same seed share it exactly.
    """
    if mode not in ("vocal+echoic", "silent"):
        raise ValueError(f"mode must be 'vocal+echoic' or 'silent', got {mode!r}")
    vocab = vocab or SyntheticVocabulary.default()
    if not 0 <= class_id < len(vocab.classes):
        raise ValueError(f"class id {class_id} not in vocabulary")
    echo, vocal, var = render_parts(class_id, scene, vocab)
    x = echo.samples + ambient_noise(scene, scene.rng_seed).samples
    if mode != "silent":
        x = x + vocal.samples
    prov = {"seed": int(scene.rng_seed), "mode": mode, **var}
    return UtteranceRecord(AudioBuffer(x, scene.rate), class_id, "", prov)


# ------------------------------------------------------------------ datasets


def record_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def stratified_splits(labels, fractions, seed: int) -> list[str]:
    """Per-class shuffled assignment to train/tune/test by rounded fractions."""
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.size != 3 or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be three non-negative values summing to 1, got {fractions}")
    labels = np.asarray(labels)
    out = [""] * labels.size
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        order = np.random.default_rng([seed, 0x73706C, int(c)]).permutation(idx)
        n_train = int(round(fr[0] * idx.size))
        n_tune = min(int(round(fr[1] * idx.size)), idx.size - n_train)
        for j, i in enumerate(order):
            out[i] = "train" if j < n_train else "tune" if j < n_train + n_tune else "test"
    return out


def _render_one(args):
    class_id, scene, vocab, mode = args
    return synthesize_utterance(class_id, scene, mode, vocab).audio.samples


def generate_dataset(vocab: SyntheticVocabulary, scene: SceneSpec, counts: dict,
                     splits, out_dir, mode: str = "vocal+echoic", encoding: str = "float32",
                     jobs: int = 1) -> Path:
    """Write one WAV per record plus ``manifest.jsonl``; returns the manifest path.

    ``counts`` maps class label to record count. Records are ordered by
    vocabulary class then repetition.
    """
    if not counts or any(v < 1 for v in counts.values()):
        raise ValueError("every class count must be >= 1")
    for label in counts:
        if label not in vocab.classes:
            raise ValueError(f"unknown class {label!r}")
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    labels = [vocab.index(c) for c in vocab.classes if c in counts for _ in range(counts[c])]
    split = stratified_splits(labels, splits, scene.rng_seed)
    seeds = [record_seed(scene.rng_seed, i) for i in range(len(labels))]
    tasks = [(c, replace(scene, rng_seed=s), vocab, mode) for c, s in zip(labels, seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            audio = list(pool.map(_render_one, tasks, chunksize=8))
    else:
        audio = [_render_one(t) for t in tasks]
    lines = []
    for i, (c, s, sp, x) in enumerate(zip(labels, seeds, split, audio)):
        rel = f"audio/{i:05d}_{vocab.classes[c]}.wav"
        wav_write(AudioBuffer(x, scene.rate), out / rel, encoding)
        lines.append(json.dumps({"index": i, "label": vocab.classes[c], "mode": mode,
                                 "path": rel, "seed": s, "split": sp}, sort_keys=True))
    manifest = out / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_manifest(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ------------------------------------------------------------------ noise & interferers


def make_noise(kind: str, n: int, rate: float, seed: int,
               vocab: SyntheticVocabulary | None = None) -> AudioBuffer:
    """Unit-RMS synthetic noise: ``white``, ``pink`` or ``babble``."""
    rng = np.random.default_rng([seed, 0x6E6F69])
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind == "pink":
        x = _pink(rng, (n,), rate)
    elif kind == "babble":
        vocab = vocab or SyntheticVocabulary.default()
        x = np.zeros(n)
        dur = n / rate
        for _ in range(max(6, int(6 * dur))):
            traj_sig = vocab.draw(vocab.unknown_id, rng)[1]
            start = rng.uniform(-0.3, dur - 0.2)
            sig = traj_sig.warped(shift=start - traj_sig.onset, f0_scale=rng.uniform(0.8, 1.3))
            x += synthesize_vocal(sig, dur, rate).samples[0]
    else:
        raise ValueError(f"unknown noise kind {kind!r}; use white, pink or babble")
    rms = np.sqrt(np.mean(x ** 2))
    return AudioBuffer(x / rms if rms > 0 else x, rate)


NOISE_KINDS = ("white", "pink", "babble")


@dataclass(frozen=True, eq=False)
class VocalInterferer:
    audio: AudioBuffer
    gain: float


@dataclass(frozen=True, eq=False)
class NoiseInterferer:
    audio: AudioBuffer
    snr_db: float
    seed: int = 0


@dataclass(frozen=True, eq=False)
class UltrasoundInterferer:
    """Foreign FMCW emitter at per-frame one-way distances (metres)."""

    spec: ChirpSpec
    distances: np.ndarray
    gain: float
    start_offset: int = 0


def _fit_length(x: np.ndarray, n: int) -> np.ndarray:
    if x.shape[-1] >= n:
        return x[..., :n]
    return np.pad(x, [(0, 0)] * (x.ndim - 1) + [(0, n - x.shape[-1])])


def render_ultrasound(interferer: UltrasoundInterferer, n: int, speed_of_sound=SPEED_OF_SOUND,
                      crossfade: int = 32):
    spec = interferer.spec
    chirp = generate_chirp(spec).samples[0]
    L = chirp.size
    frames = -(-n // L)
    dist = np.resize(np.asarray(interferer.distances, dtype=np.float64), frames)
    out = np.empty(frames * L)
    k = min(crossfade, L)
    fade = 0.5 - 0.5 * np.cos(np.pi * (np.arange(k) + 0.5) / k) if k else np.zeros(0)
    prev = None
    for f in range(frames):
        d = int(round(dist[f] * spec.rate / speed_of_sound)) + interferer.start_offset
        cur = np.roll(chirp, d)
        frame = cur.copy()
        if prev is not None and k and not np.array_equal(cur, prev):
            frame[:k] = fade * cur[:k] + (1 - fade) * prev[:k]
        out[f * L:(f + 1) * L] = frame
        prev = cur
    return interferer.gain * out[:n]


def add_interferer(record: UtteranceRecord, interferer) -> UtteranceRecord:
    """Superimpose a nearby voice, environmental noise or a foreign ultrasound source."""
    audio = record.audio
    if isinstance(interferer, VocalInterferer):
        if interferer.audio.rate != audio.rate:
            raise ValueError("interferer rate mismatch")
        if interferer.gain == 0:
            return record
        extra = _fit_length(interferer.audio.samples, len(audio))
        return record.with_audio(AudioBuffer(audio.samples + interferer.gain * extra, audio.rate))
    if isinstance(interferer, NoiseInterferer):
        rng = np.random.default_rng(interferer.seed)
        return record.with_audio(mix_at_snr(audio, interferer.audio, interferer.snr_db, rng))
    if isinstance(interferer, UltrasoundInterferer):
        if interferer.spec.rate != audio.rate:
            raise ValueError("interferer rate mismatch")
        extra = render_ultrasound(interferer, len(audio))
        return record.with_audio(AudioBuffer(audio.samples + extra[None, :], audio.rate))
    raise TypeError(f"unsupported interferer {type(interferer).__name__}")


def interferer_pool(vocab: SyntheticVocabulary, count: int, seed: int,
                    scene: SceneSpec = SceneSpec()) -> list[AudioBuffer]:
    """Voiced commands from other synthetic speakers, for nearby-speaker tests."""
    pool = []
    rng = np.random.default_rng([seed, 0x697266])
    commands = [vocab.index(c) for c in COMMANDS if c in vocab.classes]
    for _ in range(count):
        cid = int(rng.choice(commands))
        sub = replace(scene, rng_seed=int(rng.integers(0, 2**63)))
        _, vocal, _ = render_parts(cid, sub, vocab)
        pool.append(AudioBuffer(np.repeat(vocal.samples, scene.mic_count, axis=0), scene.rate))
    return pool


def vocal_band_replacement(scene: SceneSpec, seed: int, n: int | None = None) -> AudioBuffer:
    """Low-level "random silence" used to overwrite the vocal band."""
    floor = ambient_noise(scene, seed ^ 0x5A5A5A5A, n)
    return apply_filter(floor, lowpass(10000.0))


def default_jobs() -> int:
    return max(1, min(4, os.cpu_count() or 1))
