"""Analysis-frame grid shared by the signal generators and the front-end."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class FramingParams:
    window_ms: float = 25.0
    shift_ms: float = 10.0
    fft_size: int = 512
    n_mel: int = 23
    n_ceps: int = 13
    sample_rate_hz: int = 16000
    preemphasis: float = 0.97
    low_hz: float = 0.0
    high_hz: float = 8000.0
    log_floor: float = 1e-10

    def __post_init__(self):
        if not self.window_ms > self.shift_ms > 0:
            raise ValueError(
                f"need window_ms > shift_ms > 0, got {self.window_ms}/{self.shift_ms}"
            )
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if self.fft_size < self.window_samples:
            raise ValueError(
                f"fft_size {self.fft_size} smaller than window ({self.window_samples} samples)"
            )
        if not 0 < self.n_ceps <= self.n_mel:
            raise ValueError(f"need 0 < n_ceps <= n_mel, got {self.n_ceps}/{self.n_mel}")
        if not 0 <= self.low_hz < self.high_hz <= self.sample_rate_hz / 2:
            raise ValueError("mel band edges must satisfy 0 <= low < high <= Nyquist")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_ms * self.sample_rate_hz / 1000))

    @property
    def shift_samples(self) -> int:
        return int(round(self.shift_ms * self.sample_rate_hz / 1000))

    def n_frames(self, n_samples: int) -> int:
        """Number of complete analysis windows in ``n_samples`` samples (0 if none fit)."""
        if n_samples < self.window_samples:
            return 0
        return (n_samples - self.window_samples) // self.shift_samples + 1

    def frame_starts(self, n_samples: int) -> np.ndarray:
        return np.arange(self.n_frames(n_samples)) * self.shift_samples

    def frame_centers(self, n_samples: int) -> np.ndarray:
        return self.frame_starts(n_samples) + self.window_samples // 2

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_FRAMING = FramingParams()
