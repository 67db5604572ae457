"""Waveforms, synthetic speech and ego-noise, SNR mixing and WAV I/O.

The synthetic speech generator stands in for a licensed read-speech corpus:
each of the 10 phoneme classes is a fixed harmonic + band-limited-noise
signature, jittered per token. The ego-noise synthesizer produces a
stationary fan bed, optionally overlaid with motor bursts (amplitude
modulated harmonic chirps) whose support defines the per-frame motor state.
"""

from __future__ import annotations

import csv
import enum
import logging
import wave
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .framing import DEFAULT_FRAMING, FramingParams

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000
N_PHONEMES = 10


class WavFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("waveform must be mono (1-D)")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_ms(self) -> float:
        return 1000.0 * len(self) / self.sample_rate_hz

    @property
    def power(self) -> float:
        return float(np.mean(self.samples**2)) if len(self) else 0.0


@dataclass(frozen=True, eq=False)
class MotorStateTrack:
    """Per-frame motor state; ``True`` is On (motion), ``False`` Off (fan only)."""

    states: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "states", np.asarray(self.states, dtype=bool).reshape(-1))

    def __len__(self) -> int:
        return self.states.shape[0]

    @classmethod
    def all_off(cls, n_frames: int) -> "MotorStateTrack":
        return cls(np.zeros(n_frames, dtype=bool))


class NoiseKind(str, enum.Enum):
    FAN_ONLY = "fan"
    FAN_PLUS_MOVEMENT = "move"


@dataclass(frozen=True)
class MixSpec:
    snr_db: float
    noise_kind: NoiseKind = NoiseKind.FAN_ONLY
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")


# ---------------------------------------------------------------------------
# synthetic speech
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhonemeSignature:
    f0_hz: float
    formants_hz: tuple
    noise_band_hz: tuple
    voicing: float  # harmonic share of the token energy, 0..1


# fmt: off
# Five vowel-like bases, each plain and with a high-band frication cue.
PHONEME_INVENTORY: tuple = (
    PhonemeSignature(125.0, (300.0, 2300.0), (100.0, 400.0), 0.95),
    PhonemeSignature(125.0, (300.0, 2300.0), (3500.0, 7000.0), 0.75),
    PhonemeSignature(125.0, (750.0, 1200.0), (100.0, 400.0), 0.95),
    PhonemeSignature(125.0, (750.0, 1200.0), (3500.0, 7000.0), 0.75),
    PhonemeSignature(125.0, (500.0, 850.0), (100.0, 400.0), 0.95),
    PhonemeSignature(125.0, (500.0, 850.0), (3500.0, 7000.0), 0.75),
    PhonemeSignature(125.0, (450.0, 1900.0), (100.0, 400.0), 0.95),
    PhonemeSignature(125.0, (450.0, 1900.0), (3500.0, 7000.0), 0.75),
    PhonemeSignature(125.0, (250.0, 2600.0), (100.0, 400.0), 0.95),
    PhonemeSignature(125.0, (250.0, 2600.0), (3500.0, 7000.0), 0.75),
)
# fmt: on


@dataclass(frozen=True)
class UtteranceSpec:
    phonemes: Sequence[int]
    durations_ms: Sequence[float]
    seed: int = 0
    level_rms: float = 0.1

    def __post_init__(self):
        if len(self.phonemes) == 0:
            raise ValueError("empty phoneme sequence")
        if len(self.phonemes) != len(self.durations_ms):
            raise ValueError("phonemes and durations_ms differ in length")
        if any(d <= 0 for d in self.durations_ms):
            raise ValueError("phoneme durations must be positive")
        if any(not 0 <= p < N_PHONEMES for p in self.phonemes):
            raise ValueError(f"phoneme ids must lie in [0, {N_PHONEMES})")


def _ms_to_samples(ms: float, sample_rate_hz: int) -> int:
    return int(round(ms * sample_rate_hz / 1000.0))


def _bandpass_noise(rng: np.random.Generator, n: int, lo: float, hi: float, sr: int) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    out = np.fft.irfft(spec, n)
    rms = np.sqrt(np.mean(out**2))
    return out / rms if rms > 0 else out


def _harmonic_tone(
    rng: np.random.Generator,
    n: int,
    f0_start: float,
    f0_end: float,
    envelope,
    sr: int,
    max_hz: float = 7000.0,
) -> np.ndarray:
    """Sum of harmonics of a linearly gliding f0, weighted by ``envelope(freq_hz)``."""
    f0 = np.linspace(f0_start, f0_end, n)
    phase = 2 * np.pi * np.cumsum(f0) / sr
    f0_mean = 0.5 * (f0_start + f0_end)
    out = np.zeros(n)
    for h in range(1, int(max_hz // f0_mean) + 1):
        out += envelope(h * f0_mean) * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    rms = np.sqrt(np.mean(out**2))
    return out / rms if rms > 0 else out


def _formant_envelope(formants: Sequence[float], bandwidth: float = 150.0):
    def env(f):
        return sum(np.exp(-0.5 * ((f - fc) / bandwidth) ** 2) for fc in formants) + 0.02
    return env


def _band_envelope(lo: float, hi: float, skirt: float = 300.0):
    def env(f):
        return 1.0 / (1.0 + np.exp(-(f - lo) / (0.25 * skirt))) / (1.0 + np.exp((f - hi) / (0.25 * skirt)))
    return env


def _ramp(n: int, ramp_len: int) -> np.ndarray:
    env = np.ones(n)
    r = min(ramp_len, n // 2)
    if r > 0:
        rise = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        env[:r] = rise
        env[n - r:] = rise[::-1]
    return env


def _phoneme_token(rng: np.random.Generator, sig: PhonemeSignature, n: int, sr: int) -> np.ndarray:
    scale = rng.uniform(0.88, 1.12)
    lo, hi = sig.noise_band_hz
    noise = _bandpass_noise(rng, n, lo * scale, min(hi * scale, sr / 2 - 1), sr)
    if sig.voicing > 0:
        f0 = sig.f0_hz * rng.uniform(0.8, 1.25)
        glide = f0 * rng.uniform(0.9, 1.1)
        tone = _harmonic_tone(rng, n, f0, glide, _formant_envelope([f * scale for f in sig.formants_hz]), sr)
        x = np.sqrt(sig.voicing) * tone + np.sqrt(1 - sig.voicing) * noise
    else:
        x = noise
    return x * _ramp(n, int(0.003 * sr))


def frame_labels(
    segment_bounds: Sequence[int], labels: Sequence[int], n_samples: int,
    framing: FramingParams = DEFAULT_FRAMING,
) -> np.ndarray:
    """Label each analysis frame with the segment covering its center sample.

    ``segment_bounds`` holds the exclusive end sample of every segment.
    """
    centers = framing.frame_centers(n_samples)
    idx = np.searchsorted(np.asarray(segment_bounds), centers, side="right")
    return np.asarray(labels, dtype=np.int64)[idx]


def synth_speech(
    spec: UtteranceSpec,
    sample_rate_hz: int = SAMPLE_RATE,
    framing: FramingParams = DEFAULT_FRAMING,
) -> tuple[Waveform, np.ndarray]:
    """Render an utterance and its frame-aligned phoneme labels."""
    rng = np.random.default_rng(spec.seed)
    pieces = []
    for ph, dur in zip(spec.phonemes, spec.durations_ms):
        n = _ms_to_samples(dur, sample_rate_hz)
        if n <= 0:
            raise ValueError(f"duration {dur} ms renders to zero samples")
        gain = spec.level_rms * 10 ** (rng.uniform(-6, 6) / 20)
        pieces.append(gain * _phoneme_token(rng, PHONEME_INVENTORY[ph], n, sample_rate_hz))
    bounds = np.cumsum([len(p) for p in pieces])
    samples = np.clip(np.concatenate(pieces), -1.0, 1.0)
    labels = frame_labels(bounds, spec.phonemes, len(samples), framing)
    return Waveform(samples, sample_rate_hz), labels


def random_utterance_spec(
    rng: np.random.Generator,
    n_phonemes: tuple = (6, 12),
    duration_ms: tuple = (60, 160),
    seed: int | None = None,
) -> UtteranceSpec:
    """Draw a phoneme string with no immediate repeats and 10 ms-quantized durations."""
    count = int(rng.integers(n_phonemes[0], n_phonemes[1] + 1))
    phones = [int(rng.integers(N_PHONEMES))]
    while len(phones) < count:
        p = int(rng.integers(N_PHONEMES - 1))
        phones.append(p if p < phones[-1] else p + 1)
    durs = [10.0 * int(rng.integers(duration_ms[0] // 10, duration_ms[1] // 10 + 1)) for _ in phones]
    if seed is None:
        seed = int(rng.integers(2**31))
    return UtteranceSpec(tuple(phones), tuple(durs), seed)


# ---------------------------------------------------------------------------
# ego-noise
# ---------------------------------------------------------------------------


def motor_track_from_bursts(
    bursts: Sequence[tuple[int, int]],
    n_samples: int,
    framing: FramingParams = DEFAULT_FRAMING,
    min_overlap: float = 0.0,
) -> MotorStateTrack:
    """Mark frames whose window overlaps a burst interval ``[start, stop)``.

    With ``min_overlap == 0`` any shared sample makes a frame On; otherwise the
    overlap must cover at least that fraction of the window.
    """
    active = np.zeros(n_samples + 1, dtype=np.int64)
    for start, stop in bursts:
        start, stop = max(0, start), min(n_samples, stop)
        if stop > start:
            active[start] += 1
            active[stop] -= 1
    covered = (np.cumsum(active[:-1]) > 0).astype(np.int64)
    csum = np.concatenate([[0], np.cumsum(covered)])
    starts = framing.frame_starts(n_samples)
    overlap = csum[starts + framing.window_samples] - csum[starts]
    if min_overlap <= 0:
        return MotorStateTrack(overlap > 0)
    return MotorStateTrack(overlap >= min_overlap * framing.window_samples)


@dataclass
class EgoNoiseParams:
    fan_rms: float = 0.05
    burst_rate_hz: float = 2.5
    burst_ms: tuple = (100.0, 300.0)
    burst_gain: tuple = (6.0, 6.0)
    burst_f0_hz: tuple = (50.0, 90.0)
    burst_band_hz: tuple = (3500.0, 7000.0)
    burst_am_depth: float = 0.3
    min_overlap: float = 0.0
    bursts: list | None = field(default=None)  # explicit [start, stop) overrides the random draw


def _fan_noise(rng: np.random.Generator, n: int, sr: int, rms: float) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    shape = 1.0 / np.sqrt(np.maximum(freqs, 50.0)) * np.exp(-freqs / 6000.0)
    bed = np.fft.irfft(spec * shape, n)
    bed /= np.sqrt(np.mean(bed**2)) or 1.0
    t = np.arange(n) / sr
    blade = rng.uniform(80.0, 110.0)
    hum = sum(np.sin(2 * np.pi * k * blade * t + rng.uniform(0, 2 * np.pi)) / k for k in range(1, 5))
    hum /= np.sqrt(np.mean(hum**2)) or 1.0
    fan = bed + 0.5 * hum
    return rms * fan / np.sqrt(np.mean(fan**2))


def _motor_burst(rng: np.random.Generator, n: int, sr: int, p: EgoNoiseParams) -> np.ndarray:
    # harmonics dense enough to look like a smooth band at mel resolution
    f_start, f_end = rng.uniform(*p.burst_f0_hz, size=2)
    lo = p.burst_band_hz[0] * rng.uniform(0.9, 1.1)
    hi = min(p.burst_band_hz[1] * rng.uniform(0.9, 1.05), sr / 2 - 200.0)
    chirp = _harmonic_tone(rng, n, f_start, f_end, _band_envelope(lo, hi), sr, max_hz=sr / 2 - 200.0)
    t = np.arange(n) / sr
    am = 1.0 + p.burst_am_depth * np.sin(2 * np.pi * rng.uniform(3.0, 12.0) * t + rng.uniform(0, 2 * np.pi))
    return chirp * am * _ramp(n, int(0.02 * sr))


def synth_ego_noise(
    kind: NoiseKind | str,
    duration_ms: float,
    seed: int,
    params: EgoNoiseParams | None = None,
    sample_rate_hz: int = SAMPLE_RATE,
    framing: FramingParams = DEFAULT_FRAMING,
) -> tuple[Waveform, MotorStateTrack]:
    if duration_ms <= 0:
        raise ValueError(f"duration_ms must be positive, got {duration_ms}")
    kind = NoiseKind(kind)
    p = params or EgoNoiseParams()
    n = _ms_to_samples(duration_ms, sample_rate_hz)
    rng = np.random.default_rng(seed)
    samples = _fan_noise(rng, n, sample_rate_hz, p.fan_rms)
    bursts: list[tuple[int, int]] = []
    if kind is NoiseKind.FAN_PLUS_MOVEMENT:
        if p.bursts is not None:
            bursts = [(int(a), int(b)) for a, b in p.bursts]
        else:
            count = rng.poisson(p.burst_rate_hz * duration_ms / 1000.0)
            for _ in range(count):
                length = min(n, _ms_to_samples(rng.uniform(*p.burst_ms), sample_rate_hz))
                start = int(rng.integers(0, n - length + 1))
                bursts.append((start, start + length))
        for start, stop in bursts:
            gain = p.fan_rms * rng.uniform(*p.burst_gain)
            samples[start:stop] += gain * _motor_burst(rng, stop - start, sample_rate_hz, p)
    track = motor_track_from_bursts(bursts, n, framing, p.min_overlap)
    return Waveform(np.clip(samples, -1.0, 1.0), sample_rate_hz), track


# ---------------------------------------------------------------------------
# mixing
# ---------------------------------------------------------------------------


def _noise_segment(clean: Waveform, noise: Waveform, offset_seed: int | None) -> np.ndarray:
    if clean.sample_rate_hz != noise.sample_rate_hz:
        raise ValueError(
            f"sample rate mismatch: clean {clean.sample_rate_hz} Hz, noise {noise.sample_rate_hz} Hz"
        )
    if len(noise) < len(clean):
        raise ValueError(f"noise ({len(noise)} samples) shorter than clean ({len(clean)})")
    offset = 0
    if offset_seed is not None:
        offset = int(np.random.default_rng(offset_seed).integers(0, len(noise) - len(clean) + 1))
    return noise.samples[offset:offset + len(clean)]


def noise_gain(clean: Waveform, noise: Waveform, snr_db: float, offset_seed: int | None = None) -> float:
    """Scalar g such that ``clean + g * noise`` has the requested SNR."""
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    seg = _noise_segment(clean, noise, offset_seed)
    p_clean = float(np.mean(clean.samples**2)) if len(clean) else 0.0
    p_noise = float(np.mean(seg**2)) if len(seg) else 0.0
    if p_clean <= 0.0:
        raise ValueError("clean signal has zero power; SNR undefined")
    if p_noise <= 0.0:
        raise ValueError("noise signal has zero power; SNR undefined")
    return float(np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0))))


def mix_at_snr(
    clean: Waveform, noise: Waveform, snr_db: float, offset_seed: int | None = None
) -> Waveform:
    g = noise_gain(clean, noise, snr_db, offset_seed)
    mixed = clean.samples + g * _noise_segment(clean, noise, offset_seed)
    n_clip = int(np.count_nonzero(np.abs(mixed) > 1.0))
    if n_clip:
        log.warning("mixture at %.1f dB clipped on %d of %d samples", snr_db, n_clip, len(mixed))
        mixed = np.clip(mixed, -1.0, 1.0)
    return Waveform(mixed, clean.sample_rate_hz)


def measured_snr_db(clean: Waveform, scaled_noise: np.ndarray) -> float:
    return float(10.0 * np.log10(np.mean(clean.samples**2) / np.mean(np.asarray(scaled_noise) ** 2)))


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate_hz)
        fh.writeframes(pcm.tobytes())


def read_wav(path) -> Waveform:
    try:
        with wave.open(str(path), "rb") as fh:
            channels, width, rate = fh.getnchannels(), fh.getsampwidth(), fh.getframerate()
            if channels != 1:
                raise WavFormatError(f"{path}: unsupported channel count {channels} (mono required)")
            if width != 2:
                raise WavFormatError(f"{path}: unsupported sample width {8 * width} bits (16 required)")
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"{path}: malformed WAV header ({exc})") from exc
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0, rate)


def write_motor_track(path, track: MotorStateTrack) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["frame", "motor_on"])
        for i, on in enumerate(track.states):
            writer.writerow([i, int(on)])


def read_motor_track(path) -> MotorStateTrack:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame", "motor_on"]:
            raise ValueError(f"{path}: expected header 'frame,motor_on', got {header}")
        states = []
        for i, row in enumerate(reader):
            if int(row[0]) != i or row[1] not in ("0", "1"):
                raise ValueError(f"{path}: bad row {i}: {row}")
            states.append(row[1] == "1")
    return MotorStateTrack(np.array(states, dtype=bool))
