"""Time/frequency conversion, log-power features and spectral mask application.

All spectrograms are plain complex ndarrays of shape (T, 257): 512-sample
frames, 50% overlap, square-root Hann on both analysis and synthesis so that
weighted overlap-add reconstructs interior samples exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 16000
WIN_LEN = 512
HOP = 256
N_BINS = WIN_LEN // 2 + 1  # 257
LOG_EPS = 1e-12

# periodic sqrt-Hann: w[n]^2 + w[n+HOP]^2 == 1 exactly
_WINDOW = np.sin(np.pi * np.arange(WIN_LEN) / WIN_LEN)


@dataclass
class TimeSignal:
    """A mono audio signal at the fixed 16 kHz rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"expected mono 1-D samples, got shape {self.samples.shape}")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample_rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain non-finite values")

    def __len__(self):
        return len(self.samples)


def as_samples(x) -> np.ndarray:
    """Accept a TimeSignal or a bare array and return float64 samples."""
    if isinstance(x, TimeSignal):
        return x.samples
    return np.asarray(x, dtype=np.float64)


def num_frames(n_samples: int) -> int:
    """Frame count for a signal of given length (trailing partial frame dropped)."""
    if n_samples < WIN_LEN:
        raise ValueError(f"signal too short for one {WIN_LEN}-sample frame: {n_samples}")
    return (n_samples - WIN_LEN) // HOP + 1


def stft(signal) -> np.ndarray:
    """Short-time transform: (T, 257) complex matrix of sqrt-Hann windowed frames."""
    x = as_samples(signal)
    t = num_frames(len(x))
    idx = np.arange(WIN_LEN)[None, :] + HOP * np.arange(t)[:, None]
    frames = x[idx] * _WINDOW
    return np.fft.rfft(frames, axis=1)


def istft(spec: np.ndarray) -> TimeSignal:
    """Weighted overlap-add synthesis; output length is (T-1)*256 + 512."""
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[1] != N_BINS:
        raise ValueError(f"expected (T, {N_BINS}) spectrogram, got {spec.shape}")
    t = spec.shape[0]
    frames = np.fft.irfft(spec, n=WIN_LEN, axis=1) * _WINDOW
    out = np.zeros((t - 1) * HOP + WIN_LEN)
    for m in range(t):
        out[m * HOP:m * HOP + WIN_LEN] += frames[m]
    return TimeSignal(out)


def log_power(spec: np.ndarray) -> np.ndarray:
    """Per-bin log(|X|^2 + 1e-12) features."""
    return np.log(np.abs(spec) ** 2 + LOG_EPS)


def apply_mask(spec: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Multiply a spectrogram by a real gain mask; phase is untouched."""
    spec = np.asarray(spec)
    mask = np.asarray(mask)
    if spec.shape != mask.shape:
        raise ValueError(f"shape mismatch: spec {spec.shape} vs mask {mask.shape}")
    return spec * mask
