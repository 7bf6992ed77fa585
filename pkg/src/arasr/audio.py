"""Audio ingestion and cleansing: WAV I/O, resampling, DC-removing high-pass, segmentation."""

from __future__ import annotations

import io
import math
import wave
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

PCM_SCALE = 32768.0


class AudioFormatError(ValueError):
    """Malformed or truncated RIFF/WAVE data."""


class UnsupportedAudioError(ValueError):
    """Well-formed WAV that uses an encoding we do not handle."""


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class SegmentSpec:
    min_duration: float = 2.0
    max_duration: float = 30.0
    silence_threshold: float = -40.0  # dBFS
    min_silence: float = 0.3
    frame: float = 0.01

    def __post_init__(self):
        if not 0 < self.min_duration < self.max_duration:
            raise ValueError("need 0 < min_duration < max_duration")


@dataclass
class Segmentation:
    spans: list[tuple[float, float]] = field(default_factory=list)
    rejections: list[tuple[float, float, str]] = field(default_factory=list)


# --- WAV ---------------------------------------------------------------------

def decode_pcm(data: bytes) -> AudioBuffer:
    """Decode a 16-bit PCM WAV container into a mono buffer scaled to [-1, 1)."""
    try:
        with wave.open(io.BytesIO(data), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            nframes = wf.getnframes()
            raw = wf.readframes(nframes)
    except (wave.Error, EOFError) as exc:
        if "unknown format" in str(exc):
            raise UnsupportedAudioError(str(exc)) from exc
        raise AudioFormatError(f"not a valid RIFF/WAVE container: {exc}") from exc
    if width != 2:
        raise UnsupportedAudioError(f"only 16-bit PCM is supported, got {8 * width}-bit")
    if channels not in (1, 2):
        raise UnsupportedAudioError(f"only mono or stereo input is supported, got {channels} channels")
    if len(raw) != nframes * channels * width:
        raise AudioFormatError(
            f"data chunk truncated: header declares {nframes} frames, found {len(raw) // (channels * width)}"
        )
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64).reshape(-1, channels)
    return AudioBuffer(pcm.mean(axis=1) / PCM_SCALE, rate)


def encode_pcm(buf: AudioBuffer) -> bytes:
    """Quantize to 16-bit little-endian mono PCM."""
    ints = np.clip(np.round(buf.samples * PCM_SCALE), -32768, 32767).astype("<i2")
    out = io.BytesIO()
    with wave.open(out, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(buf.sample_rate))
        wf.writeframes(ints.tobytes())
    return out.getvalue()


def read_wav(path) -> AudioBuffer:
    with open(path, "rb") as fh:
        return decode_pcm(fh.read())


def write_wav(path, buf: AudioBuffer) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pcm(buf))


# --- resampling --------------------------------------------------------------

def resample(buf: AudioBuffer, target_rate: int, taps: int = 32, beta: float = 8.0,
             rolloff: float = 0.95) -> AudioBuffer:
    """Band-limited interpolation with a Kaiser-windowed sinc kernel.

    ``taps`` is the kernel support measured in samples of the lower of the two
    rates, i.e. the number of taps per polyphase branch.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    src = buf.sample_rate
    if target_rate == src:
        return AudioBuffer(buf.samples.copy(), src)
    x = buf.samples
    n_out = int(round(len(x) * target_rate / src))
    ratio = target_rate / src
    # cutoff (cycles per input sample) and kernel half-width (input samples)
    cutoff = 0.5 * min(1.0, ratio) * rolloff
    half = 0.5 * taps / min(1.0, ratio)

    pos = np.arange(n_out) * (src / target_rate)
    first = np.floor(pos - half).astype(np.int64) + 1
    width = int(math.ceil(2 * half)) + 1
    idx = first[:, None] + np.arange(width)[None, :]
    u = pos[:, None] - idx
    inside = np.abs(u) < half
    window = np.where(inside, np.i0(beta * np.sqrt(np.clip(1.0 - (u / half) ** 2, 0.0, None))) / np.i0(beta), 0.0)
    kernel = 2.0 * cutoff * np.sinc(2.0 * cutoff * u) * window
    valid = (idx >= 0) & (idx < len(x))
    vals = np.where(valid, x[np.clip(idx, 0, max(len(x) - 1, 0))], 0.0)
    return AudioBuffer((kernel * vals).sum(axis=1), target_rate)


# --- filtering ---------------------------------------------------------------

def butter_highpass_coefficients(cutoff: float, sample_rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Second-order Butterworth high-pass via the prewarped bilinear transform."""
    if not 0 < cutoff < sample_rate / 2:
        raise ValueError(f"cutoff must lie in (0, {sample_rate / 2}), got {cutoff}")
    k = math.tan(math.pi * cutoff / sample_rate)
    norm = 1.0 / (1.0 + math.sqrt(2.0) * k + k * k)
    b = np.array([norm, -2.0 * norm, norm])
    a = np.array([1.0, 2.0 * (k * k - 1.0) * norm, (1.0 - math.sqrt(2.0) * k + k * k) * norm])
    return b, a


def highpass(buf: AudioBuffer, cutoff: float = 150.0) -> AudioBuffer:
    b, a = butter_highpass_coefficients(cutoff, buf.sample_rate)
    return AudioBuffer(lfilter(b, a, buf.samples), buf.sample_rate)


# --- segmentation ------------------------------------------------------------

def silent_regions(buf: AudioBuffer, spec: SegmentSpec) -> list[tuple[float, float]]:
    """(start, end) seconds of runs of low-RMS frames lasting at least ``min_silence``."""
    hop = max(1, int(round(spec.frame * buf.sample_rate)))
    n = len(buf.samples) // hop
    if n == 0:
        return []
    frames = buf.samples[: n * hop].reshape(n, hop)
    rms = np.sqrt(np.mean(frames ** 2, axis=1))
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(rms)
    quiet = db < spec.silence_threshold
    regions = []
    start = None
    for i, q in enumerate(np.append(quiet, False)):
        if q and start is None:
            start = i
        elif not q and start is not None:
            if (i - start) * hop / buf.sample_rate >= spec.min_silence:
                regions.append((start * hop / buf.sample_rate, i * hop / buf.sample_rate))
            start = None
    return regions


def segment(buf: AudioBuffer, spec: SegmentSpec = SegmentSpec()) -> Segmentation:
    """Split a long recording into spans whose durations lie in [min, max].

    Boundaries go at the midpoint of a detected silence when one is available
    inside the admissible window; otherwise a hard cut is made at max_duration
    (pulled earlier if that would leave a remainder shorter than min_duration).
    """
    if len(buf.samples) == 0:
        raise ValueError("cannot segment an empty buffer")
    total = buf.duration
    result = Segmentation()
    if total < spec.min_duration:
        result.rejections.append((0.0, total, f"shorter than {spec.min_duration:g} s"))
        return result
    cuts = [0.5 * (a + b) for a, b in silent_regions(buf, spec)]
    start = 0.0
    while total - start > spec.max_duration:
        lo, hi = start + spec.min_duration, start + spec.max_duration
        ok = [c for c in cuts if lo <= c <= hi and total - c >= spec.min_duration]
        if ok:
            cut = ok[-1]
        else:
            cut = hi
            if total - hi < spec.min_duration and total - spec.min_duration >= lo:
                cut = total - spec.min_duration
        result.spans.append((start, cut))
        start = cut
    if total - start >= spec.min_duration:
        result.spans.append((start, total))
    else:
        result.rejections.append((start, total, f"remainder shorter than {spec.min_duration:g} s"))
    return result


def slice_span(buf: AudioBuffer, span: tuple[float, float]) -> AudioBuffer:
    a = int(round(span[0] * buf.sample_rate))
    b = int(round(span[1] * buf.sample_rate))
    return AudioBuffer(buf.samples[a:b].copy(), buf.sample_rate)
