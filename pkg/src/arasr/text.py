"""Transcript normalization, character inventory, and label encoding."""

from __future__ import annotations

import hashlib
import re
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

FATHA, DAMMA, KASRA = "\u064e", "\u064f", "\u0650"
SHADDA, SUKUN = "\u0651", "\u0652"
FATHATAN, DAMMATAN, KASRATAN = "\u064b", "\u064c", "\u064d"
HAMZA_ABOVE = "\u0654"

TASHKIL = frozenset({FATHA, DAMMA, KASRA, SHADDA, FATHATAN, DAMMATAN, KASRATAN, SUKUN})
SPACE_TOKEN = "<space>"

_WS = re.compile(r"\s+")


class AlphabetConfigError(ValueError):
    pass


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class Alphabet:
    symbols: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise AlphabetConfigError("alphabet symbols must be unique")
        if self.symbols.count(" ") != 1:
            raise AlphabetConfigError("alphabet must contain the word separator ' ' exactly once")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    @property
    def blank_index(self) -> int:
        return len(self.symbols)

    @property
    def space_index(self) -> int:
        return self._index[" "]

    @property
    def num_classes(self) -> int:
        return len(self.symbols) + 1

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, ch: str) -> bool:
        return ch in self._index

    def index(self, ch: str) -> int:
        return self._index[ch]

    def digest(self) -> str:
        """Stable fingerprint used to check that models and LMs agree."""
        return hashlib.sha256("\n".join(self.symbols).encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class NormalizationPolicy:
    strip_diacritics: frozenset = TASHKIL
    keep_marks: frozenset = frozenset({HAMZA_ABOVE})
    reject_outside: bool = True

    def __post_init__(self):
        object.__setattr__(self, "strip_diacritics", frozenset(self.strip_diacritics))
        object.__setattr__(self, "keep_marks", frozenset(self.keep_marks))
        if self.strip_diacritics & self.keep_marks:
            raise ValueError("a mark cannot be both stripped and kept")


@dataclass(frozen=True)
class Rejection:
    char: str
    reason: str


@dataclass(frozen=True)
class LabelSequence:
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def load_alphabet(path=None) -> Alphabet:
    """Read one symbol per line; '#' lines are comments, ``<space>`` names the separator.

    With no path, the bundled default Arabic inventory is loaded.
    """
    if path is None:
        text = resources.files("arasr").joinpath("data/arabic_alphabet.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    symbols = []
    for lineno, line in enumerate(text.split("\n"), 1):
        line = line.rstrip("\r")
        if line.startswith("#") or line == "":
            continue
        sym = " " if line == SPACE_TOKEN else line
        if len(sym) != 1:
            raise AlphabetConfigError(f"line {lineno}: expected a single character, got {line!r}")
        if sym in symbols:
            raise AlphabetConfigError(f"line {lineno}: duplicate symbol {sym!r}")
        symbols.append(sym)
    if " " not in symbols:
        raise AlphabetConfigError("alphabet file has no space symbol")
    return Alphabet(tuple(symbols))


def normalize(raw: str, policy: NormalizationPolicy, alphabet: Alphabet) -> str | Rejection:
    """Canonicalize a transcript, or return a :class:`Rejection` describing why it cannot be."""
    decomposed = unicodedata.normalize("NFD", raw)
    kept = "".join(ch for ch in decomposed if ch not in policy.strip_diacritics)
    text = unicodedata.normalize("NFC", _WS.sub(" ", kept).strip())
    outside = [ch for ch in text if ch not in alphabet]
    if outside:
        if policy.reject_outside:
            ch = outside[0]
            name = unicodedata.name(ch, f"U+{ord(ch):04X}")
            return Rejection(ch, f"character {ch!r} ({name}) is outside the alphabet")
        text = _WS.sub(" ", "".join(ch for ch in text if ch in alphabet)).strip()
    return text


def encode(text: str, alphabet: Alphabet) -> LabelSequence:
    try:
        return LabelSequence(np.array([alphabet.index(ch) for ch in text], dtype=np.int64))
    except KeyError as exc:
        raise EncodingError(f"character {exc.args[0]!r} not in alphabet; was the text normalized?") from None


def decode(labels, alphabet: Alphabet) -> str:
    if isinstance(labels, LabelSequence):
        labels = labels.labels
    return "".join(alphabet.symbols[int(i)] for i in labels)


def write_rejections(path, rows) -> None:
    """rows: iterable of (utterance_id, offending_char, reason)."""
    with open(path, "w", encoding="utf-8") as fh:
        for utt, ch, reason in rows:
            fh.write(f"{utt}\t{ch}\t{reason}\n")
