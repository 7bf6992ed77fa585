"""Manifests, deterministic splits, length-sorted batching and the feature cache."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import features as fe
from .audio import read_wav
from .text import Alphabet, LabelSequence, NormalizationPolicy, Rejection, encode, normalize

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("id", "audio", "duration", "transcript", "dialect")


class ManifestError(ValueError):
    """One or more manifest rows failed validation; ``errors`` lists every problem."""

    def __init__(self, path, errors: list[str]):
        self.errors = list(errors)
        head = f"{path}: {len(errors)} invalid row(s)"
        super().__init__(head + "\n" + "\n".join(f"  {e}" for e in errors))


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    audio_path: Path
    duration: float
    transcript: str
    dialect: str | None = None


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...]
    warnings: tuple[str, ...] = ()

    @property
    def total_duration(self) -> float:
        return math.fsum(e.duration for e in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]


def load_manifest(path, bounds: tuple[float, float] = (2.0, 30.0), alphabet: Alphabet | None = None,
                  policy: NormalizationPolicy | None = None, check_files: bool = True) -> Manifest:
    """Read and validate a TSV manifest, collecting every row error before raising.

    Durations below ``bounds[0]`` are errors; durations above ``bounds[1]`` only
    warn. With an alphabet, transcripts must already be in normalized form.
    """
    path = Path(path)
    base = path.parent
    policy = policy or NormalizationPolicy()
    errors: list[str] = []
    warnings: list[str] = []
    entries: list[ManifestEntry] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE))
    if not rows or tuple(rows[0]) != MANIFEST_COLUMNS:
        raise ManifestError(path, [f"line 1: header must be {'<TAB>'.join(MANIFEST_COLUMNS)}"])
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != len(MANIFEST_COLUMNS):
            errors.append(f"line {lineno}: expected {len(MANIFEST_COLUMNS)} columns, got {len(row)}")
            continue
        uid, audio, dur_s, transcript, dialect = row
        where = f"line {lineno} ({uid})"
        bad = False
        if not uid or any(c.isspace() for c in uid):
            errors.append(f"{where}: utterance id must be a non-empty token")
            bad = True
        if uid in seen:
            errors.append(f"{where}: duplicate utterance id, first seen on line {seen[uid]}")
            bad = True
        seen.setdefault(uid, lineno)
        try:
            duration = float(dur_s)
        except ValueError:
            errors.append(f"{where}: duration {dur_s!r} is not a number")
            continue
        if not duration > 0 or not math.isfinite(duration):
            errors.append(f"{where}: duration must be positive, got {dur_s}")
            bad = True
        elif duration < bounds[0]:
            errors.append(f"{where}: duration {duration:g}s is below the {bounds[0]:g}s minimum")
            bad = True
        elif duration > bounds[1]:
            warnings.append(f"{where}: duration {duration:g}s exceeds {bounds[1]:g}s")
        audio_path = (base / audio).resolve()
        if check_files and not audio_path.is_file():
            errors.append(f"{where}: audio file {audio} not found")
            bad = True
        if alphabet is not None:
            norm = normalize(transcript, policy, alphabet)
            if isinstance(norm, Rejection):
                errors.append(f"{where}: transcript rejected: {norm.reason}")
                bad = True
            elif norm != transcript or not norm:
                errors.append(f"{where}: transcript is empty or not in normalized form")
                bad = True
        if not bad:
            entries.append(ManifestEntry(uid, audio_path, duration, transcript, dialect or None))
    if errors:
        raise ManifestError(path, errors)
    for w in warnings:
        log.warning("%s: %s", path, w)
    return Manifest(tuple(entries), tuple(warnings))


def write_manifest(path, entries) -> None:
    """Write entries as TSV with audio paths relative to the manifest's directory."""
    path = Path(path)
    base = path.parent.resolve()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(MANIFEST_COLUMNS) + "\n")
        for e in entries:
            audio = Path(e.audio_path).resolve()
            try:
                rel = audio.relative_to(base).as_posix()
            except ValueError:
                rel = audio.as_posix()
            fh.write(f"{e.utterance_id}\t{rel}\t{e.duration:.4f}\t{e.transcript}\t{e.dialect or ''}\n")


# --- splitting ---------------------------------------------------------------

def _key(seed: int, name: str) -> str:
    return hashlib.sha256(f"{seed}:{name}".encode("utf-8")).hexdigest()


def partition_sizes(n: int, ratios) -> list[int]:
    """Largest-remainder apportionment of n items; remainder ties go to the earlier part."""
    quotas = [n * r for r in ratios]
    sizes = [math.floor(q) for q in quotas]
    rest = n - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[:rest]:
        sizes[i] += 1
    return sizes


def split(entries, ratios=(0.70, 0.20, 0.10), seed: int = 0, group=None) -> tuple[list, ...]:
    """Deterministic train/dev/valid partition.

    Items are ordered by a hash of (seed, id), so the result does not depend on
    input order. With ``group`` (a function of an entry, e.g. a speaker key),
    whole groups are assigned together and the target sizes hold only
    approximately.
    """
    entries = list(entries)
    ratios = tuple(float(r) for r in ratios)
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must be positive and sum to 1, got {ratios}")
    if len(entries) < len(ratios):
        raise SplitError(f"cannot split {len(entries)} entries into {len(ratios)} partitions")
    if group is None:
        ordered = sorted(entries, key=lambda e: _key(seed, e.utterance_id))
        out, start = [], 0
        for size in partition_sizes(len(ordered), ratios):
            out.append(ordered[start:start + size])
            start += size
        return tuple(out)
    groups: dict[str, list] = {}
    for e in entries:
        groups.setdefault(str(group(e)), []).append(e)
    if len(groups) < len(ratios):
        raise SplitError(f"cannot split {len(groups)} groups into {len(ratios)} partitions")
    targets = partition_sizes(len(entries), ratios)
    out = [[] for _ in ratios]
    ordered_groups = sorted(groups, key=lambda g: _key(seed, g))
    for i, g in enumerate(ordered_groups):
        remaining = len(ordered_groups) - i
        empty = [p for p in range(len(out)) if not out[p]]
        if len(empty) >= remaining:
            p = empty[0]
        else:
            p = max(range(len(out)), key=lambda p: (targets[p] - len(out[p])) / max(targets[p], 1))
        out[p].extend(sorted(groups[g], key=lambda e: _key(seed, e.utterance_id)))
    return tuple(out)


# --- batching ----------------------------------------------------------------

@dataclass(frozen=True)
class Batch:
    ids: tuple[str, ...]
    features: np.ndarray  # (B, T_max, F), padded with the log floor
    lengths: np.ndarray  # true frame counts
    targets: tuple[LabelSequence, ...]

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def target_lengths(self) -> np.ndarray:
        return np.array([len(t) for t in self.targets], dtype=np.int64)


def batch_order(durations, batch_size: int, epoch: int, seed: int = 0) -> list[list[int]]:
    """Index batches: ascending duration on epoch 0, a seeded shuffle afterwards."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(durations)
    if epoch == 0:
        order = sorted(range(n), key=lambda i: (durations[i], i))
    else:
        order = np.random.default_rng([seed, epoch]).permutation(n).tolist()
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def collate(ids, feats, targets, pad_value: float = fe.LOG_FLOOR, dtype=np.float32) -> Batch:
    """Pad variable-length (T, F) matrices to a common length."""
    mats = [f.frames if hasattr(f, "frames") else np.asarray(f) for f in feats]
    lengths = np.array([m.shape[0] for m in mats], dtype=np.int64)
    F = mats[0].shape[1]
    out = np.full((len(mats), int(lengths.max()), F), pad_value, dtype=dtype)
    for i, m in enumerate(mats):
        out[i, :m.shape[0]] = m
    return Batch(tuple(ids), out, lengths, tuple(targets))


def sorted_batches(entries, feats, alphabet: Alphabet, batch_size: int, epoch: int, seed: int = 0):
    """Yield padded batches in curriculum order; ``feats`` is parallel to ``entries``."""
    entries = list(entries)
    for idx in batch_order([e.duration for e in entries], batch_size, epoch, seed):
        yield collate([entries[i].utterance_id for i in idx], [feats[i] for i in idx],
                      [encode(entries[i].transcript, alphabet) for i in idx])


# --- feature cache -----------------------------------------------------------

def _cache_name(audio: Path, frame_length: float, frame_shift: float) -> str:
    st = audio.stat()
    key = f"{audio.resolve()}|{st.st_size}|{st.st_mtime_ns}|{frame_length!r}|{frame_shift!r}"
    return hashlib.sha256(key.encode("utf-8")).hexdigest()[:24] + ".feat"


def load_features(entries, frame_length: float = 0.02, frame_shift: float = 0.01,
                  cache_dir=None) -> list[fe.FeatureMatrix]:
    """Normalized spectrograms for each entry, memoized on disk when ``cache_dir`` is set."""
    cache = Path(cache_dir) if cache_dir is not None else None
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
    out = []
    for e in entries:
        target = cache / _cache_name(Path(e.audio_path), frame_length, frame_shift) if cache else None
        if target is not None and target.is_file():
            out.append(fe.read_cache(target))
            continue
        feat = fe.extract(read_wav(e.audio_path), frame_length, frame_shift)
        # round through float32 so cached and fresh features are identical
        feat = fe.FeatureMatrix(feat.frames.astype(np.float32).astype(np.float64), feat.frame_length, feat.frame_shift)
        if target is not None:
            fe.write_cache(target, feat)
        out.append(feat)
    return out
