"""MFCC front-end, motor-state auxiliary features and context splicing.

Feature matrices are plain ``(frames, dims)`` float64 arrays.
"""

from __future__ import annotations

import numpy as np

from .framing import DEFAULT_FRAMING, FramingParams
from .signal import MotorStateTrack, Waveform


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(p: FramingParams = DEFAULT_FRAMING) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(p.low_hz), hz_to_mel(p.high_hz), p.n_mel + 2))
    return edges[1:-1]


def mel_filterbank(p: FramingParams = DEFAULT_FRAMING) -> np.ndarray:
    """Triangular filters, shape ``(n_mel, fft_size // 2 + 1)``, on a linear-Hz bin axis."""
    edges = mel_to_hz(np.linspace(hz_to_mel(p.low_hz), hz_to_mel(p.high_hz), p.n_mel + 2))
    freqs = np.arange(p.fft_size // 2 + 1) * p.sample_rate_hz / p.fft_size
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (center - lo)
    falling = (hi - freqs) / (hi - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def dct_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Orthonormal DCT-II basis rows 0..n_out-1."""
    k = np.arange(n_out)[:, None]
    n = np.arange(n_in)[None, :]
    basis = np.cos(np.pi * k * (2 * n + 1) / (2 * n_in)) * np.sqrt(2.0 / n_in)
    basis[0] /= np.sqrt(2.0)
    return basis


def frame_signal(w: Waveform, p: FramingParams = DEFAULT_FRAMING) -> np.ndarray:
    n_frames = p.n_frames(len(w))
    if n_frames == 0:
        raise ValueError(
            f"waveform of {len(w)} samples is shorter than one {p.window_samples}-sample window"
        )
    idx = p.frame_starts(len(w))[:, None] + np.arange(p.window_samples)[None, :]
    return w.samples[idx]


def log_mel_energies(w: Waveform, p: FramingParams = DEFAULT_FRAMING) -> np.ndarray:
    if w.sample_rate_hz != p.sample_rate_hz:
        raise ValueError(f"waveform rate {w.sample_rate_hz} Hz != front-end rate {p.sample_rate_hz} Hz")
    frames = frame_signal(w, p)
    emphasized = np.concatenate(
        [frames[:, :1] * (1.0 - p.preemphasis), frames[:, 1:] - p.preemphasis * frames[:, :-1]], axis=1
    )
    windowed = emphasized * np.hamming(p.window_samples)
    magnitude = np.abs(np.fft.rfft(windowed, n=p.fft_size, axis=1))
    energies = magnitude @ mel_filterbank(p).T
    return np.log(np.maximum(energies, p.log_floor))


def mfcc(w: Waveform, p: FramingParams = DEFAULT_FRAMING) -> np.ndarray:
    """13-dim MFCCs (c0 first) on a 25 ms / 10 ms grid by default."""
    return log_mel_energies(w, p) @ dct_matrix(p.n_mel, p.n_ceps).T


def cmn(f: np.ndarray) -> np.ndarray:
    """Per-utterance cepstral mean normalization (opt-in)."""
    return f - f.mean(axis=0, keepdims=True)


def one_hot_motor(track: MotorStateTrack) -> np.ndarray:
    """Columns are (off, on)."""
    if len(track) == 0:
        raise ValueError("empty motor-state track")
    on = track.states.astype(np.float64)
    return np.stack([1.0 - on, on], axis=1)


def concat_features(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"frame-count mismatch: {a.shape[0]} vs {b.shape[0]}")
    return np.concatenate([a, b], axis=1)


def stack_context(f: np.ndarray, context: int = 11) -> np.ndarray:
    """Splice ``context`` frames centred on each frame, replicating the edge frames."""
    if context < 1 or context % 2 == 0:
        raise ValueError(f"context must be odd and >= 1, got {context}")
    f = np.asarray(f, dtype=np.float64)
    half = context // 2
    n = f.shape[0]
    idx = np.clip(np.arange(n)[:, None] + np.arange(-half, half + 1)[None, :], 0, n - 1)
    return f[idx].reshape(n, context * f.shape[1])
