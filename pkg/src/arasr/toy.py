"""Synthetic tone-sequence corpus for smoke tests and overfitting runs.

Five symbols map to five pure tones; a word is a run of tones separated by
short gaps and words are separated by longer silences, so the transcript is
fully determined by the audio.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, write_wav
from .corpus import ManifestEntry, write_manifest

SYMBOLS = "abcde"
TONES = {"a": 400.0, "b": 800.0, "c": 1200.0, "d": 1600.0, "e": 2000.0}
RATE = 16000


@dataclass(frozen=True)
class ToySpec:
    n_utterances: int = 20
    min_duration: float = 1.0
    max_duration: float = 3.0
    tone: float = 0.10
    gap: float = 0.03
    word_gap: float = 0.15
    edge: float = 0.10
    noise: float = 1e-3
    seed: int = 0


def _word(rng, lo=2, hi=4) -> str:
    n = int(rng.integers(lo, hi + 1))
    out = [SYMBOLS[int(rng.integers(len(SYMBOLS)))]]
    while len(out) < n:
        ch = SYMBOLS[int(rng.integers(len(SYMBOLS)))]
        if ch != out[-1]:
            out.append(ch)
    return "".join(out)


def duration_of(text: str, spec: ToySpec) -> float:
    words = text.split()
    letters = sum(len(w) for w in words)
    inner_gaps = sum(len(w) - 1 for w in words)
    return 2 * spec.edge + letters * spec.tone + inner_gaps * spec.gap + (len(words) - 1) * spec.word_gap


def render(text: str, spec: ToySpec, rng) -> AudioBuffer:
    def silence(sec):
        return np.zeros(int(round(sec * RATE)))

    n_tone = int(round(spec.tone * RATE))
    t = np.arange(n_tone) / RATE
    ramp = int(0.01 * RATE)
    env = np.ones(n_tone)
    env[:ramp] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    env[-ramp:] = env[:ramp][::-1]
    parts = [silence(spec.edge)]
    for wi, word in enumerate(text.split()):
        if wi:
            parts.append(silence(spec.word_gap))
        for ci, ch in enumerate(word):
            if ci:
                parts.append(silence(spec.gap))
            parts.append(0.5 * env * np.sin(2 * np.pi * TONES[ch] * t))
    parts.append(silence(spec.edge))
    x = np.concatenate(parts)
    x = x + spec.noise * rng.standard_normal(len(x))
    return AudioBuffer(np.clip(x, -1.0, 1.0), RATE)


def transcripts(spec: ToySpec) -> list[str]:
    rng = np.random.default_rng([spec.seed, 1])
    out: list[str] = []
    while len(out) < spec.n_utterances:
        text = " ".join(_word(rng) for _ in range(int(rng.integers(2, 5))))
        if spec.min_duration <= duration_of(text, spec) <= spec.max_duration and text not in out:
            out.append(text)
    return out


def write_alphabet(path) -> None:
    Path(path).write_text("# toy tone alphabet\n" + "\n".join(SYMBOLS) + "\n<space>\n", encoding="utf-8")


def build(out_dir, spec: ToySpec = ToySpec()) -> Path:
    """Write wavs, ``manifest.tsv``, ``alphabet.txt`` and ``corpus.txt``; returns the manifest path."""
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([spec.seed, 2])
    entries = []
    texts = transcripts(spec)
    for i, text in enumerate(texts):
        buf = render(text, spec, rng)
        wav = out / "audio" / f"toy{i:03d}.wav"
        write_wav(wav, buf)
        entries.append(ManifestEntry(f"toy{i:03d}", wav, buf.duration, text, None))
    write_manifest(out / "manifest.tsv", entries)
    write_alphabet(out / "alphabet.txt")
    (out / "corpus.txt").write_text("\n".join(texts) + "\n", encoding="utf-8")
    return out / "manifest.tsv"
