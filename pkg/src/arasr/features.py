"""Log power spectrogram frontend and the binary feature cache."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio import AudioBuffer

POWER_FLOOR = 1e-10
LOG_FLOOR = math.log(POWER_FLOOR)
NORM_EPS = 1e-8

_CACHE_HEADER = struct.Struct("<IIff")


class EmptyFeatureError(ValueError):
    """The buffer is shorter than one analysis window."""


@dataclass(frozen=True)
class FeatureMatrix:
    frames: np.ndarray  # (T, F)
    frame_length: float
    frame_shift: float

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def F(self) -> int:
        return self.frames.shape[1]


def _samples(seconds: float, rate: int, what: str) -> int:
    n = seconds * rate
    if abs(n - round(n)) > 1e-6 or round(n) < 1:
        raise ValueError(f"{what} of {seconds} s is not a whole number of samples at {rate} Hz")
    return int(round(n))


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples: int, window: int, shift: int) -> int:
    if n_samples < window:
        return 0
    return 1 + (n_samples - window) // shift


def power_spectrum(buf: AudioBuffer, frame_length: float = 0.02, frame_shift: float = 0.01) -> np.ndarray:
    """|rfft|^2 of Hann-windowed frames, shape (T, window // 2 + 1)."""
    win = _samples(frame_length, buf.sample_rate, "frame_length")
    hop = _samples(frame_shift, buf.sample_rate, "frame_shift")
    T = frame_count(len(buf.samples), win, hop)
    if T == 0:
        raise EmptyFeatureError(
            f"{len(buf.samples)} samples is shorter than one {win}-sample window"
        )
    frames = sliding_window_view(buf.samples, win)[::hop][:T] * hann(win)
    spec = np.fft.rfft(frames, axis=1)
    return spec.real ** 2 + spec.imag ** 2


def spectrogram(buf: AudioBuffer, frame_length: float = 0.02, frame_shift: float = 0.01) -> FeatureMatrix:
    power = power_spectrum(buf, frame_length, frame_shift)
    return FeatureMatrix(np.log(np.maximum(power, POWER_FLOOR)), frame_length, frame_shift)


def normalize(feat: FeatureMatrix) -> FeatureMatrix:
    """Per-utterance mean/variance normalization over all cells."""
    x = feat.frames
    if x.shape[0] < 1:
        raise ValueError("need at least one frame")
    return FeatureMatrix((x - x.mean()) / (x.std() + NORM_EPS), feat.frame_length, feat.frame_shift)


def extract(buf: AudioBuffer, frame_length: float = 0.02, frame_shift: float = 0.01) -> FeatureMatrix:
    return normalize(spectrogram(buf, frame_length, frame_shift))


def write_cache(path, feat: FeatureMatrix) -> None:
    with open(path, "wb") as fh:
        fh.write(_CACHE_HEADER.pack(feat.T, feat.F, feat.frame_length, feat.frame_shift))
        fh.write(np.ascontiguousarray(feat.frames, dtype="<f4").tobytes())


def read_cache(path) -> FeatureMatrix:
    with open(path, "rb") as fh:
        head = fh.read(_CACHE_HEADER.size)
        if len(head) != _CACHE_HEADER.size:
            raise ValueError(f"{path}: truncated feature header")
        T, F, flen, fshift = _CACHE_HEADER.unpack(head)
        body = fh.read()
    if len(body) != 4 * T * F:
        raise ValueError(f"{path}: expected {T}x{F} frames, found {len(body) // 4} values")
    frames = np.frombuffer(body, dtype="<f4").reshape(T, F).astype(np.float64)
    # header stores float32; snap back to the 0.1 ms grid the frontend uses
    return FeatureMatrix(frames, round(flen, 6), round(fshift, 6))
